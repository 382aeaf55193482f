"""Metropolis-within-Gibbs samplers for complete and partial rankings.

One iteration updates, in order: the mixture weights (Gibbs), each cluster's
consensus ranking (leap-and-shift M-H) and, every ``alpha_jump`` iterations,
its scale (log-normal M-H), then every cluster label (Gibbs). With partial
data the latent completions are refreshed last, by an independence
Metropolis step with a uniform proposal over each assessor's consistent
completions.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import struct
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import (
    Hyperparameters,
    MixtureState,
    _likelihood_matrix,
    alpha_logratio,
    gibbs_tau,
    sample_alpha_prior,
    z_sweep,
)
from .partition import PartitionFunction, default_partition_function
from .ranks import (
    MISSING,
    PartialRanking,
    check_rankings,
    distances,
    leap_and_shift_propose,
    uniform_completions,
)
from .similarity import AugmentedParams, CovariateTable, prepare

log = logging.getLogger(__name__)

MEMORY_CAP_ENTRIES = 200_000_000


@dataclass(frozen=True)
class RunConfig:
    M: int = 10_000
    burn_in: int = 1_000
    thin: int = 1
    seed: int = 0
    num_chains: int = 1
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    fixed_alpha: float | None = None
    fixed_tau: tuple | None = None
    fixed_rho: tuple | None = None
    store_augmented: bool = True
    memory_cap: int = MEMORY_CAP_ENTRIES

    def __post_init__(self):
        if self.M < 1 or not 0 <= self.burn_in < self.M:
            raise ValueError("need M >= 1 and 0 <= burn_in < M")
        if self.thin < 1 or self.num_chains < 1:
            raise ValueError("thin and num_chains must be positive")

    @property
    def aug_flag(self) -> bool:
        return self.hyper.aug

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            if hasattr(v, "value"):
                return v.value
            return v

        d = dataclasses.asdict(self)
        sim = self.hyper.similarity
        d["hyper"]["similarity"] = (
            None if sim is None else {"family": "augmented" if isinstance(sim, AugmentedParams) else "gof",
                                      **dataclasses.asdict(sim)}
        )
        return clean(d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class PosteriorSamples:
    """Thinned chain history of one chain. Labels are 0-based in memory."""

    iterations: np.ndarray        # (R,)
    z: np.ndarray                 # (R, N)
    rho: np.ndarray               # (R, C, n)
    alpha: np.ndarray             # (R, C)
    tau: np.ndarray               # (R, C)
    accept: dict                  # family -> [accepted, proposed]
    meta: dict
    augmented: np.ndarray | None = None  # (R, N, n)

    @property
    def num_records(self) -> int:
        return int(self.iterations.size)

    @property
    def chain(self) -> int:
        return int(self.meta.get("chain", 0))

    @property
    def C(self) -> int:
        return self.rho.shape[1]

    @property
    def n(self) -> int:
        return self.rho.shape[2]

    @property
    def N(self) -> int:
        return self.z.shape[1]

    def acceptance_report(self) -> dict:
        return acceptance_report(self)


def acceptance_report(samples: PosteriorSamples) -> dict:
    """Accepted / proposed per parameter family; ``None`` when nothing was proposed."""
    return {k: (a / p if p else None) for k, (a, p) in samples.accept.items()}


# --------------------------------------------------------------------------
# driver

def _initial_state(N: int, n: int, config: RunConfig, logz, rng: np.random.Generator) -> MixtureState:
    h = config.hyper
    C = h.C
    rho = np.argsort(rng.random((C, n)), axis=1) + 1
    lo, hi = logz.support if hasattr(logz, "support") else (0.0, math.inf)
    hi = min(hi, h.alpha_max)
    alpha = np.array([sample_alpha_prior(h.lam, lo, hi, rng) for _ in range(C)])
    tau = rng.dirichlet(np.full(C, h.psi)) if C > 1 else np.ones(1)
    z = rng.integers(C, size=N).astype(np.int64)
    if config.fixed_rho is not None:
        rho = np.atleast_2d(np.array(config.fixed_rho, dtype=np.int64)).copy()
    if config.fixed_alpha is not None:
        alpha = np.broadcast_to(np.asarray(config.fixed_alpha, dtype=float), (C,)).copy()
    if config.fixed_tau is not None:
        tau = np.asarray(config.fixed_tau, dtype=float).copy()
    return MixtureState(rho=rho.astype(np.int64), alpha=alpha, tau=tau, z=z)


def _effective_thin(config: RunConfig, N: int, C: int, n: int, with_aug: bool) -> int:
    per_record = N + C * n + 2 * C + (N * n if with_aug else 0)
    thin = config.thin
    while ((config.M - config.burn_in) // thin) * per_record > config.memory_cap:
        thin *= 2
    if thin != config.thin:
        warnings.warn(f"thinning raised from {config.thin} to {thin} to respect the memory cap")
    return thin


def _run(observed: np.ndarray, covariates: CovariateTable | None, config: RunConfig,
         logz: PartitionFunction | None, chain: int) -> PosteriorSamples:
    h = config.hyper
    N, n = observed.shape
    C = h.C
    if logz is None:
        logz = default_partition_function(n, h.metric)
    if getattr(logz, "n", n) != n or getattr(logz, "metric", h.metric) is not h.metric:
        raise ValueError("partition function does not match the data dimension or metric")
    if covariates is None:
        covariates = CovariateTable.empty(N)
    if covariates.N != N:
        raise ValueError(f"covariates have {covariates.N} rows, rankings have {N}")
    if h.leap > n - 1:
        raise ValueError(f"leap size {h.leap} must be at most n-1 = {n - 1}")

    rng = np.random.default_rng(config.seed + chain)
    state = _initial_state(N, n, config, logz, rng)

    missing_rows = np.flatnonzero((observed == MISSING).any(axis=1))
    partial = missing_rows.size > 0
    R = observed.copy()
    if partial:
        R[missing_rows] = uniform_completions(observed[missing_rows], rng)
    prep = prepare(covariates, h.similarity)
    joint = h.z_conditional == "joint"

    store_aug = partial and config.store_augmented
    thin = _effective_thin(config, N, C, n, store_aug)
    n_rec = (config.M - config.burn_in) // thin
    out_it = np.empty(n_rec, dtype=np.int64)
    out_z = np.empty((n_rec, N), dtype=np.int16 if C < 2**15 else np.int32)
    out_rho = np.empty((n_rec, C, n), dtype=np.int16)
    out_alpha = np.empty((n_rec, C))
    out_tau = np.empty((n_rec, C))
    out_aug = np.empty((n_rec, N, n), dtype=np.int16) if store_aug else None
    acc = {"rho": [0, 0], "alpha": [0, 0]}
    if partial:
        acc["augmentation"] = [0, 0]

    update_rho = config.fixed_rho is None and n > 1
    update_alpha = config.fixed_alpha is None
    update_tau = config.fixed_tau is None and C > 1
    rec = 0
    for t in range(config.M):
        if update_tau:
            state.tau = gibbs_tau(np.bincount(state.z, minlength=C), h.psi, rng)
        for c in range(C):
            members = R[state.z == c]
            if update_rho:
                prop, fwd, bwd = leap_and_shift_propose(state.rho[c], h.leap, rng)
                if members.shape[0]:
                    delta = distances(members, prop, h.metric).sum() - distances(members, state.rho[c], h.metric).sum()
                else:
                    delta = 0
                ratio = bwd - fwd - state.alpha[c] / n * delta
                acc["rho"][1] += 1
                if math.log(rng.random()) < ratio:
                    state.rho[c] = prop
                    acc["rho"][0] += 1
            if update_alpha and t > 0 and t % h.alpha_jump == 0:
                a_new = state.alpha[c] * math.exp(h.sigma_alpha * rng.standard_normal())
                dsum = float(distances(members, state.rho[c], h.metric).sum()) if members.shape[0] else 0.0
                ratio = alpha_logratio(state.alpha[c], a_new, members.shape[0], dsum, n, h.lam, h.alpha_max, logz)
                acc["alpha"][1] += 1
                if math.log(rng.random()) < ratio:
                    state.alpha[c] = a_new
                    acc["alpha"][0] += 1
        if C > 1:
            loglik = _likelihood_matrix(R, state, h.metric, logz)
            z_sweep(loglik, state.z, rng.random(N), prep, joint)
        if partial:
            rows = missing_rows
            proposals = uniform_completions(observed[rows], rng)
            rho_j = state.rho[state.z[rows]]
            a_j = state.alpha[state.z[rows]]
            delta = distances(proposals, rho_j, h.metric) - distances(R[rows], rho_j, h.metric)
            accept = np.log(rng.random(rows.size)) < -(a_j / n) * delta
            R[rows[accept]] = proposals[accept]
            acc["augmentation"][0] += int(accept.sum())
            acc["augmentation"][1] += int(rows.size)
        if t >= config.burn_in and (t - config.burn_in + 1) % thin == 0:
            out_it[rec] = t + 1
            out_z[rec] = state.z
            out_rho[rec] = state.rho
            out_alpha[rec] = state.alpha
            out_tau[rec] = state.tau
            if store_aug:
                out_aug[rec] = R
            rec += 1

    meta = {
        "chain": chain, "seed": config.seed, "config_hash": config.config_hash(),
        "N": N, "n": n, "C": C, "metric": h.metric.value, "M": config.M,
        "burn_in": config.burn_in, "thin": thin, "z_source": getattr(getattr(logz, "source", None), "value", "custom"),
    }
    return PosteriorSamples(out_it, out_z, out_rho, out_alpha, out_tau, acc, meta, out_aug)


def run_bmmx(rankings, covariates: CovariateTable | None, config: RunConfig,
             logz: PartitionFunction | None = None, chain: int = 0) -> PosteriorSamples:
    """Run one chain on complete rankings (rows of 1-based ranks)."""
    R = check_rankings(rankings)
    return _run(R, covariates, config, logz, chain)


def run_bmmx_partial(partials, covariates: CovariateTable | None, config: RunConfig,
                     logz: PartitionFunction | None = None, chain: int = 0) -> PosteriorSamples:
    """Run one chain on partial rankings (``0`` marks an unranked item)."""
    rows = [p.observed if isinstance(p, PartialRanking) else p for p in partials]
    obs = np.atleast_2d(np.asarray(rows, dtype=np.int64))
    for i, row in enumerate(obs):
        try:
            PartialRanking(row)
        except ValueError as exc:
            raise ValueError(f"row {i + 1}: {exc}") from None
    return _run(obs, covariates, config, logz, chain)


def _chain_job(args):
    observed, covariates, config, logz, chain = args
    return _run(observed, covariates, config, logz, chain)


def run_chains(observed, covariates, config: RunConfig, logz=None, workers: int | None = None) -> list[PosteriorSamples]:
    """Run ``config.num_chains`` independent chains (seeds ``seed + i``)."""
    obs = np.atleast_2d(np.asarray(observed, dtype=np.int64))
    if not (obs == MISSING).any():
        check_rankings(obs)
    if workers is None:
        workers = int(os.environ.get("BMMX_WORKERS", "1"))
    jobs = [(obs, covariates, config, logz, i) for i in range(config.num_chains)]
    if workers <= 1 or config.num_chains == 1:
        return [_chain_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_chain_job, jobs))


# --------------------------------------------------------------------------
# serialisation

CSV_HEADER = ["iteration", "chain", "param", "cluster", "index", "value"]


def _header_lines(samples: PosteriorSamples) -> list[str]:
    m = samples.meta
    return [f"# bmmx samples seed={m['seed']} chain={m['chain']} config_hash={m['config_hash']}",
            "# meta " + json.dumps({**m, "accept": samples.accept}, sort_keys=True)]


def write_samples_csv(path, chains: list[PosteriorSamples]) -> None:
    """Long-format CSV; labels, items and assessors are 1-based.

    Rows per record: ``z`` (index = assessor), ``rho`` (cluster, index = item),
    ``alpha`` and ``tau`` (cluster), and ``rtilde`` for augmented rankings
    (cluster column carries the assessor, index = item).
    """
    with open(path, "w", newline="") as fh:
        for s in chains:
            for line in _header_lines(s):
                fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for s in chains:
            ch = s.chain
            for r in range(s.num_records):
                it = int(s.iterations[r])
                for j, lab in enumerate(s.z[r]):
                    w.writerow([it, ch, "z", "", j + 1, int(lab) + 1])
                for c in range(s.C):
                    for i, rank in enumerate(s.rho[r, c]):
                        w.writerow([it, ch, "rho", c + 1, i + 1, int(rank)])
                for c in range(s.C):
                    w.writerow([it, ch, "alpha", c + 1, "", repr(float(s.alpha[r, c]))])
                for c in range(s.C):
                    w.writerow([it, ch, "tau", c + 1, "", repr(float(s.tau[r, c]))])
                if s.augmented is not None:
                    for j in range(s.N):
                        for i, rank in enumerate(s.augmented[r, j]):
                            w.writerow([it, ch, "rtilde", j + 1, i + 1, int(rank)])


def read_samples_csv(path) -> list[PosteriorSamples]:
    metas = []
    body = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("# meta "):
                metas.append(json.loads(line[len("# meta "):]))
            elif not line.startswith("#"):
                body.append(line)
    rows = list(csv.DictReader(body))
    out = []
    for meta in metas:
        ch = meta["chain"]
        N, n, C = meta["N"], meta["n"], meta["C"]
        mine = [r for r in rows if int(r["chain"]) == ch]
        its = sorted({int(r["iteration"]) for r in mine})
        pos = {it: k for k, it in enumerate(its)}
        R = len(its)
        z = np.zeros((R, N), dtype=np.int16)
        rho = np.zeros((R, C, n), dtype=np.int16)
        alpha = np.zeros((R, C))
        tau = np.zeros((R, C))
        has_aug = any(r["param"] == "rtilde" for r in mine)
        aug = np.zeros((R, N, n), dtype=np.int16) if has_aug else None
        for r in mine:
            k = pos[int(r["iteration"])]
            p = r["param"]
            if p == "z":
                z[k, int(r["index"]) - 1] = int(r["value"]) - 1
            elif p == "rho":
                rho[k, int(r["cluster"]) - 1, int(r["index"]) - 1] = int(r["value"])
            elif p == "alpha":
                alpha[k, int(r["cluster"]) - 1] = float(r["value"])
            elif p == "tau":
                tau[k, int(r["cluster"]) - 1] = float(r["value"])
            elif p == "rtilde":
                aug[k, int(r["cluster"]) - 1, int(r["index"]) - 1] = int(r["value"])
        accept = {k: list(v) for k, v in meta.pop("accept").items()}
        out.append(PosteriorSamples(np.array(its, dtype=np.int64), z, rho, alpha, tau, accept, meta, aug))
    return out


MAGIC = b"BMMXSMP1"


def write_samples_binary(path, chains: list[PosteriorSamples]) -> None:
    """Little-endian framed stream.

    ``MAGIC``, u32 chain count, then per chain: u32 length + UTF-8 JSON
    metadata, u32 record count, and per record: u32 payload length followed by
    u32 iteration, u16[N] labels, u16[C*n] consensus ranks, f64[C] alpha,
    f64[C] tau and, when stored, u16[N*n] augmented ranks.
    """
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(chains)))
        for s in chains:
            meta = json.dumps({**s.meta, "accept": s.accept, "has_augmented": s.augmented is not None},
                              sort_keys=True).encode()
            fh.write(struct.pack("<I", len(meta)))
            fh.write(meta)
            fh.write(struct.pack("<I", s.num_records))
            for r in range(s.num_records):
                parts = [
                    struct.pack("<I", int(s.iterations[r])),
                    s.z[r].astype("<u2").tobytes(),
                    s.rho[r].astype("<u2").tobytes(),
                    s.alpha[r].astype("<f8").tobytes(),
                    s.tau[r].astype("<f8").tobytes(),
                ]
                if s.augmented is not None:
                    parts.append(s.augmented[r].astype("<u2").tobytes())
                payload = b"".join(parts)
                fh.write(struct.pack("<I", len(payload)))
                fh.write(payload)


def read_samples_binary(path) -> list[PosteriorSamples]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if not buf.startswith(MAGIC):
        raise ValueError(f"{path}: not a bmmx binary sample file")
    off = len(MAGIC)

    def u32():
        nonlocal off
        (v,) = struct.unpack_from("<I", buf, off)
        off += 4
        return v

    out = []
    for _ in range(u32()):
        ln = u32()
        meta = json.loads(buf[off:off + ln].decode())
        off += ln
        has_aug = meta.pop("has_augmented")
        accept = {k: list(v) for k, v in meta.pop("accept").items()}
        N, n, C = meta["N"], meta["n"], meta["C"]
        R = u32()
        its = np.empty(R, dtype=np.int64)
        z = np.empty((R, N), dtype=np.int16)
        rho = np.empty((R, C, n), dtype=np.int16)
        alpha = np.empty((R, C))
        tau = np.empty((R, C))
        aug = np.empty((R, N, n), dtype=np.int16) if has_aug else None
        for r in range(R):
            end = off + 4 + u32()
            its[r] = u32()
            for arr, count, dt in ((z, N, "<u2"), (rho, C * n, "<u2"), (alpha, C, "<f8"), (tau, C, "<f8")):
                size = count * np.dtype(dt).itemsize
                arr[r] = np.frombuffer(buf, dtype=dt, count=count, offset=off).reshape(arr.shape[1:])
                off += size
            if has_aug:
                aug[r] = np.frombuffer(buf, dtype="<u2", count=N * n, offset=off).reshape(N, n)
                off += N * n * 2
            if off != end:
                raise ValueError(f"{path}: corrupt record {r}")
        out.append(PosteriorSamples(its, z, rho, alpha, tau, accept, meta, aug))
    return out
