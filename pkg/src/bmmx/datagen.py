"""Synthetic clustered rank data with covariates, and clustering accuracy metrics."""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .posterior import AssignmentMatrix, assignment_probs
from .ranks import Metric, all_permutations, as_metric, check_ranking, compose, distances, identity
from .similarity import CATEGORICAL, CONTINUOUS, CovariateTable

EXACT_SAMPLING_MAX_N = 8
RETRY_BUDGET = 100_000
ALIGNMENT_MAX_C = 8


@dataclass(frozen=True)
class SimConfig:
    n: int = 20
    N: int = 90
    C: int = 3
    s: int = 3
    d_rho: int = 6
    d_x: float = 2.0
    alpha_true: float = 5.0
    sigma_cov: float = 1.0
    cluster_sizes: tuple | None = None  # equal split when None
    seed: int = 0
    K_cont: int = 3
    categorical_scenarios: tuple = ()   # entries 1 (label-coherent, B=C) or 2 (uniform noise, B=2)
    metric: str = "footrule"
    covariate_labels: str = "truth"     # "truth" (v = w) or "random" (v drawn independently)

    def __post_init__(self):
        if self.s * (self.C - 1) > self.n:
            raise ValueError("need s*(C-1) <= n")
        if self.d_rho < 1 or self.sigma_cov <= 0:
            raise ValueError("need d_rho >= 1 and sigma_cov > 0")
        if self.covariate_labels not in ("truth", "random"):
            raise ValueError("covariate_labels must be 'truth' or 'random'")
        if any(sc not in (1, 2) for sc in self.categorical_scenarios):
            raise ValueError("categorical scenarios are 1 or 2")
        sizes = self.sizes
        if len(sizes) != self.C or sum(sizes) != self.N or min(sizes) < 1:
            raise ValueError("cluster_sizes must be C positive integers summing to N")

    @property
    def sizes(self) -> tuple:
        if self.cluster_sizes is not None:
            return tuple(int(x) for x in self.cluster_sizes)
        base, extra = divmod(self.N, self.C)
        return tuple(base + (c < extra) for c in range(self.C))


@dataclass
class SyntheticDataset:
    rankings: np.ndarray          # (N, n)
    covariates: CovariateTable
    true_labels: np.ndarray       # (N,) 0-based
    true_consensus: np.ndarray    # (C, n)
    config: SimConfig
    covariate_labels: np.ndarray = field(default=None)


# --------------------------------------------------------------------------
# Mallows sampling

@functools.lru_cache(maxsize=16)
def _enumerated(n: int, metric: Metric):
    perms = all_permutations(n)
    return perms, distances(perms, identity(n), metric).astype(float)


def mallows_pmf(rho, alpha: float, metric="footrule") -> tuple[np.ndarray, np.ndarray]:
    """All permutations of 1..n and their Mallows probabilities (n <= 8)."""
    rho = check_ranking(rho)
    metric = as_metric(metric)
    perms, d = _enumerated(rho.size, metric)
    logw = -alpha / rho.size * d
    w = np.exp(logw - logw.max())
    # right invariance: d(sigma o rho, rho) = d(sigma, e)
    return compose(perms, rho), w / w.sum()


def sample_mallows(rho, alpha: float, metric="footrule", rng: np.random.Generator | None = None,
                   size: int | None = None, leap: int = 1) -> np.ndarray:
    """Draw rankings from Mallows(rho, alpha).

    Exact inverse-cdf sampling over the enumerated pmf for n <= 8; otherwise
    ``size`` parallel leap-and-shift Metropolis chains started at ``rho``,
    each run for 100*n sweeps of n leap-and-shift proposals.
    """
    rng = np.random.default_rng() if rng is None else rng
    rho = check_ranking(rho)
    metric = as_metric(metric)
    m = 1 if size is None else int(size)
    n = rho.size
    if n == 1 or math.isinf(alpha):
        out = np.tile(rho, (m, 1))
    elif n <= EXACT_SAMPLING_MAX_N:
        perms, d = _enumerated(n, metric)
        logw = -alpha / n * d
        cdf = np.cumsum(np.exp(logw - logw.max()))
        idx = np.searchsorted(cdf, rng.random(m) * cdf[-1], side="right")
        out = compose(perms[np.minimum(idx, len(perms) - 1)], rho)
    else:
        if not 1 <= leap <= n - 1:
            raise ValueError(f"leap size must lie in 1..{n - 1}")
        code = {Metric.FOOTRULE: 0, Metric.KENDALL: 1, Metric.SPEARMAN: 2}[metric]
        out = np.empty((m, n), dtype=np.int64)
        for i in range(m):
            out[i] = _metropolis_chain(rho, float(alpha), code, leap, rng.random((100 * n * n, 3)))
    return out[0] if size is None else out


@numba.njit(cache=True)
def _dist(a, b, code):
    n = a.size
    d = 0
    if code == 1:
        for i in range(n):
            for k in range(i + 1, n):
                if (a[i] - a[k]) * (b[i] - b[k]) < 0:
                    d += 1
    else:
        for i in range(n):
            x = a[i] - b[i]
            d += abs(x) if code == 0 else x * x
    return d


@numba.njit(cache=True)
def _metropolis_chain(rho, alpha, code, leap, u):
    n = rho.size
    cur = rho.copy()
    prop = np.empty_like(cur)
    d_cur = 0
    for t in range(u.shape[0]):
        item = min(int(u[t, 0] * n), n - 1)
        old = cur[item]
        lo, hi = max(1, old - leap), min(n, old + leap)
        new = lo + min(int(u[t, 1] * (hi - lo)), hi - lo - 1)
        if new >= old:
            new += 1
        for k in range(n):
            r = cur[k]
            if new > old and old < r <= new:
                r -= 1
            elif new < old and new <= r < old:
                r += 1
            prop[k] = r
        prop[item] = new
        w_old = min(n, old + leap) - max(1, old - leap)
        w_new = min(n, new + leap) - max(1, new - leap)
        if abs(new - old) == 1:
            log_q = 0.0
        else:
            log_q = math.log(w_old) - math.log(w_new)  # log q(back) - log q(forward)
        d_new = _dist(prop, rho, code)
        if math.log(u[t, 2]) < log_q - alpha / n * (d_new - d_cur):
            cur[:] = prop
            d_cur = d_new
    return cur


# --------------------------------------------------------------------------
# consensus rankings by swapping

def generate_consensus_set(n: int, C: int, s: int, d_rho: int, rng: np.random.Generator,
                           max_attempts: int = RETRY_BUDGET) -> np.ndarray:
    """Baseline identity plus C-1 perturbed consensus rankings, shape (C, n).

    A set S_0 of s*(C-1) items is drawn and split into C-1 blocks. Every item
    in S_0 gets a partner whose baseline rank is its own rank plus or minus
    d_rho (random sign). The draw is repeated until all partners exist, none
    lies in S_0 and partners within a block are distinct; cluster c then swaps
    block c with its partners, giving footrule distance 2*s*d_rho from the
    baseline.
    """
    base = identity(n)
    if C == 1:
        return base[None, :].copy()
    m = s * (C - 1)
    if m > n:
        raise ValueError("need s*(C-1) <= n")
    for _ in range(max_attempts):
        s0 = rng.choice(n, size=m, replace=False)
        partner = s0 + d_rho * rng.choice((-1, 1), size=m)
        if partner.min() < 0 or partner.max() >= n:
            continue
        if np.isin(partner, s0).any():
            continue
        blocks = partner.reshape(C - 1, s)
        if any(np.unique(b).size < s for b in blocks):
            continue
        out = np.tile(base, (C, 1))
        for c in range(1, C):
            a = s0[(c - 1) * s: c * s]
            b = blocks[c - 1]
            out[c, a], out[c, b] = base[b], base[a]
        return out
    raise ValueError(f"no valid swap set for n={n}, s={s}, d_rho={d_rho} after {max_attempts} attempts")


# --------------------------------------------------------------------------
# covariates

def generate_covariates(labels, d_x: float, sigma_cov: float, K_cont: int, categorical_scenarios=(),
                        rng: np.random.Generator | None = None, C: int | None = None) -> CovariateTable:
    """Continuous columns ~ N(d_x*c, sigma_cov) for 0-based label c, plus categorical columns.

    Scenario 1 copies the label (B = C); scenario 2 is uniform over B = 2.
    """
    rng = np.random.default_rng() if rng is None else rng
    v = np.asarray(labels, dtype=np.int64)
    C = int(v.max()) + 1 if C is None else C
    N = v.size
    cols, kinds, levels, names = [], [], [], []
    for k in range(K_cont):
        cols.append(d_x * v + sigma_cov * rng.standard_normal(N))
        kinds.append(CONTINUOUS)
        levels.append(0)
        names.append(f"x{k + 1}")
    for i, sc in enumerate(categorical_scenarios):
        if sc == 1:
            cols.append(v.astype(float))
            levels.append(C)
        else:
            cols.append(rng.integers(2, size=N).astype(float))
            levels.append(2)
        kinds.append(CATEGORICAL)
        names.append(f"cat{i + 1}")
    values = np.column_stack(cols) if cols else np.zeros((N, 0))
    return CovariateTable(values, kinds, levels, names)


def simulate(config: SimConfig, rng: np.random.Generator | None = None) -> SyntheticDataset:
    rng = np.random.default_rng(config.seed) if rng is None else rng
    metric = as_metric(config.metric)
    rho = generate_consensus_set(config.n, config.C, config.s, config.d_rho, rng)
    w = np.repeat(np.arange(config.C), config.sizes)
    R = np.empty((config.N, config.n), dtype=np.int64)
    for c in range(config.C):
        R[w == c] = sample_mallows(rho[c], config.alpha_true, metric, rng, size=int((w == c).sum()))
    v = w if config.covariate_labels == "truth" else rng.integers(config.C, size=config.N)
    X = generate_covariates(v, config.d_x, config.sigma_cov, config.K_cont, config.categorical_scenarios, rng, config.C)
    return SyntheticDataset(R, X, w, rho, config, v)


# --------------------------------------------------------------------------
# accuracy metrics

def best_alignment(estimated, truth, C: int | None = None) -> np.ndarray:
    """Relabelling ``perm`` (estimated label e -> perm[e]) maximising agreement with ``truth``."""
    est = np.asarray(estimated, dtype=np.int64)
    tru = np.asarray(truth, dtype=np.int64)
    if est.shape != tru.shape:
        raise ValueError("label vectors differ in length")
    C = int(max(est.max(), tru.max())) + 1 if C is None else C
    if C > ALIGNMENT_MAX_C:
        raise ValueError(f"label alignment searches C! relabelings and is capped at C={ALIGNMENT_MAX_C}")
    table = np.zeros((C, C), dtype=np.int64)
    np.add.at(table, (est, tru), 1)
    best, best_perm = -1, None
    for perm in itertools.permutations(range(C)):
        score = table[np.arange(C), perm].sum()
        if score > best:
            best, best_perm = score, perm
    return np.array(best_perm, dtype=np.int64)


def p_hat(estimated, truth, C: int | None = None) -> float:
    """Fraction of correctly clustered assessors after the best relabelling."""
    perm = best_alignment(estimated, truth, C)
    return float(np.mean(perm[np.asarray(estimated, dtype=np.int64)] == np.asarray(truth)))


def z_post(samples, truth, alignment) -> float:
    """Mean posterior probability of each assessor's true cluster.

    ``alignment`` maps estimated labels to true labels, as returned by
    :func:`best_alignment`. ``samples`` may be chains or an AssignmentMatrix.
    """
    probs = samples.probs if isinstance(samples, AssignmentMatrix) else assignment_probs(samples).probs
    perm = np.asarray(alignment, dtype=np.int64)
    inv = np.argsort(perm)
    tru = np.asarray(truth, dtype=np.int64)
    return float(probs[np.arange(tru.size), inv[tru]].mean())
