"""Permutations, rank distances, partial rankings and the leap-and-shift kernel.

Rankings are 1-based rank vectors: ``r[i]`` is the rank given to item ``i``.
Partial rankings use ``0`` for an unranked item.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

MISSING = 0


class Metric(str, Enum):
    FOOTRULE = "footrule"
    KENDALL = "kendall"
    SPEARMAN = "spearman"


def as_metric(metric) -> Metric:
    if isinstance(metric, Metric):
        return metric
    try:
        return Metric(str(metric).lower())
    except ValueError:
        raise ValueError(f"unknown distance metric {metric!r}") from None


def is_permutation(r) -> bool:
    r = np.asarray(r)
    if r.ndim != 1 or r.size == 0:
        return False
    return bool(np.array_equal(np.sort(r), np.arange(1, r.size + 1)))


def check_ranking(r) -> np.ndarray:
    """Return ``r`` as an int64 array, raising ``ValueError`` unless it is a permutation of 1..n."""
    arr = np.asarray(r)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("a ranking must be a non-empty 1-d sequence")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValueError("ranks must be integers")
    arr = arr.astype(np.int64)
    if not is_permutation(arr):
        raise ValueError(f"{arr.tolist()} is not a permutation of 1..{arr.size}")
    return arr


def check_rankings(R) -> np.ndarray:
    R = np.atleast_2d(np.asarray(R)).astype(np.int64)
    n = R.shape[1]
    ok = np.all(np.sort(R, axis=1) == np.arange(1, n + 1), axis=1)
    if not ok.all():
        bad = int(np.flatnonzero(~ok)[0])
        raise ValueError(f"row {bad + 1} is not a permutation of 1..{n}")
    return R


def identity(n: int) -> np.ndarray:
    return np.arange(1, n + 1, dtype=np.int64)


def inverse(r) -> np.ndarray:
    """Inverse permutation: ``inverse(r)[k-1]`` is the (1-based) item holding rank ``k``."""
    r = np.asarray(r)
    inv = np.empty_like(r)
    inv[r - 1] = np.arange(1, r.size + 1)
    return inv


def compose(a, b) -> np.ndarray:
    """Function composition ``a o b`` of 1-based permutations; ``a`` may be a batch of rows."""
    a = np.asarray(a)
    return a[..., np.asarray(b) - 1]


def ordering(r) -> np.ndarray:
    """Items (1-based) listed from rank 1 to rank n."""
    return inverse(r)


# --------------------------------------------------------------------------
# distances

def _kendall(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # a, b broadcastable (..., n); discordant pairs counted once each
    da = np.sign(a[..., :, None] - a[..., None, :])
    db = np.sign(b[..., :, None] - b[..., None, :])
    return (da * db < 0).sum(axis=(-1, -2)) // 2


def _distance_arrays(a: np.ndarray, b: np.ndarray, metric: Metric) -> np.ndarray:
    if metric is Metric.FOOTRULE:
        return np.abs(a - b).sum(axis=-1)
    if metric is Metric.SPEARMAN:
        return ((a - b) ** 2).sum(axis=-1)
    return _kendall(a, b)


def distance(a, b, metric="footrule") -> int:
    """Distance between two complete rankings.

    Footrule is ``sum |a_i - b_i|``, Kendall counts discordant item pairs and
    Spearman is the (unnormalised) ``sum (a_i - b_i)^2``.
    """
    metric = as_metric(metric)
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return int(_distance_arrays(a, b, metric))


def distances(R, rho, metric="footrule") -> np.ndarray:
    """Row-wise distances from rankings ``R`` (N, n) to ``rho`` ((n,) or (N, n))."""
    metric = as_metric(metric)
    R = np.atleast_2d(np.asarray(R, dtype=np.int64))
    rho = np.asarray(rho, dtype=np.int64)
    if rho.shape[-1] != R.shape[1]:
        raise ValueError(f"dimension mismatch: rankings have n={R.shape[1]}, rho has n={rho.shape[-1]}")
    return _distance_arrays(R, rho, metric).astype(np.int64)


def distance_matrix(R, rhos, metric="footrule") -> np.ndarray:
    """(N, C) matrix of distances between every ranking and every consensus."""
    metric = as_metric(metric)
    R = np.atleast_2d(np.asarray(R, dtype=np.int64))
    rhos = np.atleast_2d(np.asarray(rhos, dtype=np.int64))
    if rhos.shape[1] != R.shape[1]:
        raise ValueError("dimension mismatch between rankings and consensus rankings")
    return _distance_arrays(R[:, None, :], rhos[None, :, :], metric).astype(np.int64)


def right_invariance_check(a, b, metric="footrule") -> bool:
    """True iff ``d(a, b) == d(a o b^-1, identity)``."""
    a = check_ranking(a)
    b = check_ranking(b)
    if a.size != b.size:
        raise ValueError(f"dimension mismatch: {a.size} vs {b.size}")
    lhs = distance(a, b, metric)
    rhs = distance(compose(a, inverse(b)), identity(a.size), metric)
    return lhs == rhs


# --------------------------------------------------------------------------
# partial rankings

@dataclass(frozen=True)
class PartialRanking:
    """Observed ranks for a subset of the items; ``0`` marks an unranked item."""

    observed: np.ndarray

    def __post_init__(self):
        obs = np.asarray(self.observed, dtype=np.int64)
        if obs.ndim != 1 or obs.size == 0:
            raise ValueError("a partial ranking must be a non-empty 1-d sequence")
        present = obs[obs != MISSING]
        if np.any((present < 1) | (present > obs.size)):
            raise ValueError(f"observed ranks must lie in 1..{obs.size}")
        if np.unique(present).size != present.size:
            raise ValueError("observed ranks must be distinct")
        object.__setattr__(self, "observed", obs)

    @classmethod
    def from_values(cls, values: Sequence[int | None]) -> "PartialRanking":
        return cls(np.array([MISSING if v is None else int(v) for v in values], dtype=np.int64))

    @property
    def n(self) -> int:
        return int(self.observed.size)

    @property
    def mask(self) -> np.ndarray:
        return self.observed != MISSING

    @property
    def n_obs(self) -> int:
        return int(self.mask.sum())

    @property
    def is_complete(self) -> bool:
        return self.n_obs == self.n


def consistent(full, pr: PartialRanking | Sequence) -> bool:
    """True iff ``full`` keeps the relative order of every pair of observed items."""
    if not isinstance(pr, PartialRanking):
        pr = PartialRanking(np.asarray(pr))
    full = np.asarray(full, dtype=np.int64)
    if full.size != pr.n:
        raise ValueError(f"dimension mismatch: {full.size} vs {pr.n}")
    mask = pr.mask
    if mask.sum() < 2:
        return True
    obs = pr.observed[mask]
    got = full[mask]
    order = np.argsort(obs)
    return bool(np.all(np.diff(got[order]) > 0))


def consistent_rows(full, observed) -> np.ndarray:
    """Vectorised :func:`consistent` over rows of (N, n) arrays."""
    full = np.atleast_2d(full)
    observed = np.atleast_2d(observed)
    big = full.shape[1] + 1
    key = np.where(observed != MISSING, observed, big)
    order = np.argsort(key, axis=1, kind="stable")
    got = np.take_along_axis(np.where(observed != MISSING, full, big), order, axis=1)
    n_obs = (observed != MISSING).sum(axis=1)
    steps = np.diff(got, axis=1) > 0
    valid = np.arange(full.shape[1] - 1)[None, :] < (n_obs - 1)[:, None]
    return np.all(steps | ~valid, axis=1)


def uniform_completions(observed, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws from the completion sets of each row of ``observed`` (N, n).

    A uniform random permutation is drawn and the ranks landing on observed
    items are then re-dealt to those items in their observed order. Every
    consistent completion is produced by the same number of permutations.
    """
    observed = np.atleast_2d(np.asarray(observed, dtype=np.int64))
    N, n = observed.shape
    perm = np.argsort(rng.random((N, n)), axis=1) + 1
    mask = observed != MISSING
    big = n + 1
    slot_ranks = np.sort(np.where(mask, perm, big), axis=1)
    item_order = np.argsort(np.where(mask, observed, big), axis=1, kind="stable")
    n_obs = mask.sum(axis=1)
    take = np.arange(n)[None, :] < n_obs[:, None]
    rows = np.broadcast_to(np.arange(N)[:, None], (N, n))
    out = perm.copy()
    out[rows[take], item_order[take]] = slot_ranks[take]
    return out


def uniform_completion(pr: PartialRanking, rng: np.random.Generator) -> np.ndarray:
    return uniform_completions(pr.observed[None, :], rng)[0]


# --------------------------------------------------------------------------
# leap-and-shift

def _window_size(rank, n: int, leap: int):
    return np.minimum(n, rank + leap) - np.maximum(1, rank - leap)


def _apply_move(rho: np.ndarray, item: int, new_rank: int) -> np.ndarray:
    old = rho[item]
    out = rho.copy()
    if new_rank > old:
        out[(rho > old) & (rho <= new_rank)] -= 1
    elif new_rank < old:
        out[(rho >= new_rank) & (rho < old)] += 1
    out[item] = new_rank
    return out


def _check_leap(n: int, leap: int) -> None:
    if n < 2:
        raise ValueError("leap-and-shift needs at least two items")
    if not 1 <= leap <= n - 1:
        raise ValueError(f"leap size must lie in 1..{n - 1}, got {leap}")


def leap_and_shift_pmf(rho, leap: int) -> dict[tuple[int, ...], float]:
    """Full transition pmf from ``rho`` by enumerating every (item, new rank) move."""
    rho = check_ranking(rho)
    n = rho.size
    _check_leap(n, leap)
    pmf: dict[tuple[int, ...], float] = {}
    for item in range(n):
        lo, hi = max(1, rho[item] - leap), min(n, rho[item] + leap)
        size = hi - lo
        for r in range(lo, hi + 1):
            if r == rho[item]:
                continue
            key = tuple(_apply_move(rho, item, r).tolist())
            pmf[key] = pmf.get(key, 0.0) + 1.0 / (n * size)
    return pmf


def leap_and_shift_logprob(src, dst, leap: int) -> float:
    """log P_l(dst | src), summing over every move that turns ``src`` into ``dst``.

    A generating move must relocate an item whose rank differs between the two
    rankings, so only those items are enumerated.
    """
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    n = src.size
    total = 0.0
    for item in np.flatnonzero(src != dst):
        target = dst[item]
        if abs(target - src[item]) > leap:
            continue
        if np.array_equal(_apply_move(src, int(item), int(target)), dst):
            total += 1.0 / (n * _window_size(src[item], n, leap))
    return math.log(total) if total > 0 else -math.inf


def leap_and_shift_propose(rho, leap: int, rng: np.random.Generator):
    """Draw a leap-and-shift proposal.

    Returns ``(proposal, forward_logprob, backward_logprob)``.
    """
    rho = np.asarray(rho, dtype=np.int64)
    n = rho.size
    _check_leap(n, leap)
    item = int(rng.integers(n))
    old = int(rho[item])
    lo, hi = max(1, old - leap), min(n, old + leap)
    r = int(rng.integers(lo, hi))  # hi - lo candidates once ``old`` is skipped
    if r >= old:
        r += 1
    proposal = _apply_move(rho, item, r)
    # a one-rank move is also generated by moving the displaced neighbour
    w_old, w_new = _window_size(old, n, leap), _window_size(r, n, leap)
    if abs(r - old) == 1:
        fwd = bwd = math.log((1.0 / w_old + 1.0 / w_new) / n)
    else:
        fwd, bwd = -math.log(n * w_old), -math.log(n * w_new)
    return proposal, fwd, bwd


def leap_and_shift_batch(R, leap: int, rng: np.random.Generator):
    """Vectorised leap-and-shift over the rows of ``R``.

    Moves of more than one rank are generated by exactly one (item, rank)
    pair; a one-rank move is also produced by moving the displaced neighbour,
    which the probabilities below account for.
    """
    R = np.atleast_2d(np.asarray(R, dtype=np.int64))
    m, n = R.shape
    _check_leap(n, leap)
    rows = np.arange(m)
    item = rng.integers(n, size=m)
    old = R[rows, item]
    lo = np.maximum(1, old - leap)
    hi = np.minimum(n, old + leap)
    new = lo + np.floor(rng.random(m) * (hi - lo)).astype(np.int64)
    new = np.where(new >= old, new + 1, new)
    o, nw = old[:, None], new[:, None]
    up = (R > o) & (R <= nw)
    down = (R >= nw) & (R < o)
    out = R - up + down
    out[rows, item] = new
    w_old = _window_size(old, n, leap).astype(float)
    w_new = _window_size(new, n, leap).astype(float)
    adjacent = np.abs(new - old) == 1
    fwd = np.where(adjacent, 1.0 / w_old + 1.0 / w_new, 1.0 / w_old) / n
    bwd = np.where(adjacent, 1.0 / w_old + 1.0 / w_new, 1.0 / w_new) / n
    return out, np.log(fwd), np.log(bwd)


def all_permutations(n: int) -> np.ndarray:
    """Every permutation of 1..n as rows, in lexicographic order."""
    import itertools

    return np.array(list(itertools.permutations(range(1, n + 1))), dtype=np.int64).reshape(-1, n)
