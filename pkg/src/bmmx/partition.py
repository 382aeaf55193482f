"""Mallows partition function Z_n(alpha) for right-invariant distances.

With the ``exp(-alpha/n * d)`` parametrisation,
``Z_n(alpha) = sum_d N_n(d) exp(-alpha d / n)`` where ``N_n(d)`` counts the
permutations at distance ``d`` from the identity.
"""
from __future__ import annotations

import csv
import functools
import itertools
import math
import os
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import logsumexp

from .ranks import Metric, as_metric

N_MAX_DEFAULT = 8
N_MAX_HARD = 10


@dataclass(frozen=True)
class DistanceFrequencyTable:
    n: int
    metric: Metric
    counts: dict[int, int]

    def __post_init__(self):
        object.__setattr__(self, "metric", as_metric(self.metric))
        counts = {int(d): int(c) for d, c in sorted(self.counts.items())}
        if any(d < 0 for d in counts) or any(c <= 0 for c in counts.values()):
            raise ValueError("distances must be nonnegative and counts positive")
        if counts.get(0) != 1:
            raise ValueError("exactly one permutation (the identity) sits at distance 0")
        if sum(counts.values()) != math.factorial(self.n):
            raise ValueError(f"counts sum to {sum(counts.values())}, expected {self.n}! = {math.factorial(self.n)}")
        object.__setattr__(self, "counts", counts)

    @functools.cached_property
    def distances(self) -> np.ndarray:
        return np.array(list(self.counts), dtype=float)

    @functools.cached_property
    def log_counts(self) -> np.ndarray:
        # math.log handles arbitrary-precision ints
        return np.array([math.log(c) for c in self.counts.values()])

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"{self.n},{self.metric.value}\n")
            for d, c in self.counts.items():
                fh.write(f"{d},{c}\n")

    @classmethod
    def read(cls, path) -> "DistanceFrequencyTable":
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
        if not lines:
            raise ValueError(f"{path}: empty distance table")
        n_str, metric = lines[0].split(",")
        counts = {}
        for ln in lines[1:]:
            d, c = ln.split(",")
            counts[int(d)] = int(c)
        return cls(int(n_str), as_metric(metric), counts)


def enumerate_distance_table(n: int, metric="footrule", n_max: int = N_MAX_DEFAULT) -> DistanceFrequencyTable:
    """Count permutations at each distance from the identity by full enumeration."""
    metric = as_metric(metric)
    if n < 1:
        raise ValueError("n must be positive")
    n_max = min(n_max, N_MAX_HARD)
    if n > n_max:
        raise ValueError(
            f"enumeration is capped at n={n_max}; import a distance table or "
            f"estimate a log Z grid by importance sampling for n={n}"
        )
    from .ranks import distances

    counts: dict[int, int] = {}
    ident = np.arange(1, n + 1)
    perms = itertools.permutations(range(1, n + 1))
    chunk = 50_000
    while True:
        block = np.array(list(itertools.islice(perms, chunk)), dtype=np.int64)
        if block.size == 0:
            break
        d = distances(block.reshape(-1, n), ident, metric)
        vals, cnt = np.unique(d, return_counts=True)
        for v, c in zip(vals.tolist(), cnt.tolist()):
            counts[v] = counts.get(v, 0) + c
    return DistanceFrequencyTable(n, metric, counts)


def footrule_table_dp(n: int) -> DistanceFrequencyTable:
    """Exact footrule distance counts for any ``n`` by dynamic programming.

    Positions and values are revealed one at a time; ``k`` is the number of
    positions (equivalently values) still unmatched after step ``t``, and each
    contributes 2 to the footrule across the boundary between ``t`` and ``t+1``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    # state[k] = {half_distance: count}
    state: dict[int, dict[int, int]] = {0: {0: 1}}
    for _ in range(n):
        nxt: dict[int, dict[int, int]] = {}

        def add(k, dist, ways):
            row = nxt.setdefault(k, {})
            row[dist] = row.get(dist, 0) + ways

        for k, row in state.items():
            for dist, ways in row.items():
                # new position and value matched together, or each to a pending partner
                add(k, dist + k, ways * (1 + 2 * k))
                if k > 0:
                    add(k - 1, dist + k - 1, ways * k * k)
                add(k + 1, dist + k + 1, ways)
        state = nxt
    return DistanceFrequencyTable(n, Metric.FOOTRULE, {2 * h: c for h, c in state[0].items()})


def kendall_table_dp(n: int) -> DistanceFrequencyTable:
    """Exact Kendall counts (Mahonian numbers) by the inversion-table recursion."""
    counts = [1]
    for m in range(1, n + 1):
        new = [0] * (len(counts) + m - 1)
        for d, c in enumerate(counts):
            for j in range(m):
                new[d + j] += c
        counts = new
    return DistanceFrequencyTable(n, Metric.KENDALL, dict(enumerate(counts)))


def log_z_exact(alpha, table: DistanceFrequencyTable):
    """log Z_n(alpha) from a distance table (log-sum-exp; scalar or array alpha)."""
    a = np.asarray(alpha, dtype=float)
    if np.any(a < 0):
        raise ValueError("alpha must be nonnegative")
    d = table.distances
    lc = table.log_counts
    out = logsumexp(lc[None, :] - np.atleast_1d(a)[:, None] * d[None, :] / table.n, axis=1)
    return float(out[0]) if a.ndim == 0 else out


def log_z_kendall_closed_form(alpha, n: int):
    """Closed-form Kendall log Z_n(alpha) = sum_j log[(1 - e^{-j a/n}) / (1 - e^{-a/n})]."""
    if n < 1:
        raise ValueError("n must be positive")
    a = np.asarray(alpha, dtype=float)
    if np.any(a < 0):
        raise ValueError("alpha must be nonnegative")
    q = np.atleast_1d(a)[:, None] / n
    j = np.arange(1, n + 1)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        # log(-expm1(-x)) is accurate for both tiny and large x
        terms = np.log(-np.expm1(-j * q)) - np.log(-np.expm1(-q))
    terms = np.where(q == 0, np.log(j), terms)
    out = terms.sum(axis=1)
    return float(out[0]) if a.ndim == 0 else out


@dataclass(frozen=True)
class LogZGrid:
    n: int
    metric: Metric
    alphas: np.ndarray
    log_z: np.ndarray
    se: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "metric", as_metric(self.metric))
        alphas = np.asarray(self.alphas, dtype=float)
        log_z = np.asarray(self.log_z, dtype=float)
        se = np.zeros_like(log_z) if self.se is None else np.asarray(self.se, dtype=float)
        if alphas.ndim != 1 or alphas.shape != log_z.shape or alphas.size < 2:
            raise ValueError("grid needs at least two matching alpha / log_z values")
        if np.any(np.diff(alphas) <= 0) or alphas[0] < 0:
            raise ValueError("grid alphas must be nonnegative and strictly increasing")
        if not np.all(np.isfinite(log_z)):
            raise ValueError("grid log Z values must be finite")
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "log_z", log_z)
        object.__setattr__(self, "se", se)

    def __call__(self, alpha):
        a = np.asarray(alpha, dtype=float)
        if np.any(a < self.alphas[0]) or np.any(a > self.alphas[-1]):
            raise ValueError(
                f"alpha outside the grid range [{self.alphas[0]}, {self.alphas[-1]}]; no extrapolation"
            )
        out = np.interp(a, self.alphas, self.log_z)
        return float(out) if a.ndim == 0 else out

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            fh.write(f"# n={self.n} metric={self.metric.value}\n")
            w.writerow(["alpha", "log_z", "se"])
            for a, z, s in zip(self.alphas, self.log_z, self.se):
                w.writerow([repr(float(a)), repr(float(z)), repr(float(s))])

    @classmethod
    def read(cls, path) -> "LogZGrid":
        n = metric = None
        rows = []
        with open(path) as fh:
            for ln in fh:
                if ln.startswith("#"):
                    for tok in ln[1:].split():
                        key, _, val = tok.partition("=")
                        if key == "n":
                            n = int(val)
                        elif key == "metric":
                            metric = val
                    continue
                rows.append(ln)
        reader = csv.DictReader(rows)
        data = [(float(r["alpha"]), float(r["log_z"]), float(r["se"])) for r in reader]
        if n is None or metric is None:
            raise ValueError(f"{path}: grid file lacks the '# n=.. metric=..' header")
        a, z, s = map(np.array, zip(*data))
        return cls(n, metric, a, z, s)


def estimate_log_z_grid(n: int, metric, alphas, num_samples: int, rng: np.random.Generator,
                        batch: int = 100_000) -> LogZGrid:
    """Importance-sampling estimate of log Z over an alpha grid.

    Uses uniform permutations as the proposal, so
    ``Z = n! * E[exp(-alpha d / n)]``. Standard errors come from the delta
    method on the sample mean.
    """
    metric = as_metric(metric)
    if num_samples < 1000:
        raise ValueError("num_samples must be at least 1000")
    from .ranks import distances

    alphas = np.asarray(alphas, dtype=float)
    ident = np.arange(1, n + 1)
    d_all = []
    left = num_samples
    while left > 0:
        m = min(batch, left)
        perms = np.argsort(rng.random((m, n)), axis=1) + 1
        d_all.append(distances(perms, ident, metric))
        left -= m
    d = np.concatenate(d_all).astype(float)
    vals, cnt = np.unique(d, return_counts=True)
    logw = -alphas[:, None] * vals[None, :] / n
    log_mean = logsumexp(logw + np.log(cnt)[None, :], axis=1) - math.log(num_samples)
    log_mean[alphas == 0] = 0.0
    # second moment for the standard error of the mean, in log-space
    log_m2 = logsumexp(2 * logw + np.log(cnt)[None, :], axis=1) - math.log(num_samples)
    var_ratio = np.maximum(np.exp(log_m2 - 2 * log_mean) - 1.0, 0.0)
    se = np.sqrt(var_ratio / num_samples)
    log_z = math.lgamma(n + 1) + log_mean
    return LogZGrid(n, metric, alphas, log_z, se)


class ZSource(str, Enum):
    EXACT = "exact"
    CLOSED_FORM = "closed_form"
    GRID = "grid"
    TABLE = "table"


class PartitionFunction:
    """Callable ``alpha -> log Z_n(alpha)`` used by every acceptance ratio.

    ``support`` is the alpha interval on which the function is defined; the
    samplers reject proposals outside it.
    """

    def __init__(self, n: int, metric, source=ZSource.EXACT, *, table: DistanceFrequencyTable | None = None,
                 grid: LogZGrid | None = None, n_max: int = N_MAX_DEFAULT):
        self.n = int(n)
        self.metric = as_metric(metric)
        self.source = ZSource(source)
        self.grid = None
        self.table = None
        self.support = (0.0, math.inf)
        self._memo: dict[float, float] = {}
        if self.source is ZSource.CLOSED_FORM:
            if self.metric is not Metric.KENDALL:
                raise ValueError("the closed form is only available for the Kendall distance")
        elif self.source is ZSource.EXACT:
            self.table = enumerate_distance_table(self.n, self.metric, n_max=n_max)
        elif self.source is ZSource.TABLE:
            if table is None:
                raise ValueError("table source needs a DistanceFrequencyTable")
            self.table = table
        else:
            if grid is None:
                raise ValueError("grid source needs a LogZGrid")
            self.grid = grid
            self.support = (float(grid.alphas[0]), float(grid.alphas[-1]))
        ref = self.table if self.table is not None else self.grid
        if ref is not None and (ref.n != self.n or ref.metric is not self.metric):
            raise ValueError(
                f"Z source built for n={ref.n}, {ref.metric.value}; model needs n={self.n}, {self.metric.value}"
            )

    def __call__(self, alpha):
        if isinstance(alpha, float):
            hit = self._memo.get(alpha)
            if hit is None:
                if len(self._memo) > 4096:
                    self._memo.clear()
                hit = self._memo[alpha] = self._evaluate(alpha)
            return hit
        return self._evaluate(alpha)

    def _evaluate(self, alpha):
        if self.source is ZSource.CLOSED_FORM:
            return log_z_kendall_closed_form(alpha, self.n)
        if self.grid is not None:
            return self.grid(alpha)
        return log_z_exact(alpha, self.table)

    def in_support(self, alpha: float) -> bool:
        return self.support[0] <= alpha <= self.support[1]

    def __repr__(self):
        return f"PartitionFunction(n={self.n}, metric={self.metric.value}, source={self.source.value})"


def log_z(alpha, n: int, metric, source=None, *, table=None, grid=None):
    """Single-call dispatch; ``source`` defaults to the closed form for Kendall, else enumeration."""
    metric = as_metric(metric)
    if source is None:
        source = ZSource.CLOSED_FORM if metric is Metric.KENDALL else ZSource.EXACT
    return PartitionFunction(n, metric, source, table=table, grid=grid)(alpha)


def default_partition_function(n: int, metric, *, table=None, grid=None, n_max: int = N_MAX_DEFAULT) -> PartitionFunction:
    """Default strategy: closed form for Kendall, enumeration for small n, else an explicit table or grid."""
    metric = as_metric(metric)
    if table is not None:
        return PartitionFunction(n, metric, ZSource.TABLE, table=table)
    if grid is not None:
        return PartitionFunction(n, metric, ZSource.GRID, grid=grid)
    if metric is Metric.KENDALL:
        return PartitionFunction(n, metric, ZSource.CLOSED_FORM)
    if n <= min(n_max, N_MAX_HARD):
        return PartitionFunction(n, metric, ZSource.EXACT, n_max=n_max)
    raise ValueError(
        f"no exact partition function for {metric.value} with n={n} > {n_max}: "
        "supply a distance table or a log Z grid"
    )


def default_alpha_grid(alpha_max: float, num: int = 200, alpha_min: float = 0.01) -> np.ndarray:
    return np.geomspace(alpha_min, alpha_max, num)


AUTO_GRID_SAMPLES = 1_000_000


def resolve_partition_function(n: int, metric, source: str = "auto", *, alpha_max: float = 20.0,
                               table_path=None, grid_path=None, grid_samples: int = AUTO_GRID_SAMPLES,
                               grid_points: int = 200, seed: int = 0) -> PartitionFunction:
    """Pick a log Z strategy by name.

    ``auto`` uses the Kendall closed form, enumeration for n <= 8, the exact
    footrule table for larger n and otherwise an importance-sampling grid over
    [0.01, alpha_max]. A grid is read from ``grid_path`` when that file
    exists, and written there after estimation.
    """
    metric = as_metric(metric)
    if source == "auto":
        if metric is Metric.KENDALL:
            source = "closed_form"
        elif n <= N_MAX_DEFAULT:
            source = "exact"
        elif metric is Metric.FOOTRULE:
            source = "table"
        else:
            source = "grid"
    if source == "closed_form":
        return PartitionFunction(n, metric, ZSource.CLOSED_FORM)
    if source == "exact":
        if n <= N_MAX_DEFAULT:
            return PartitionFunction(n, metric, ZSource.EXACT)
        if metric is Metric.KENDALL:
            return PartitionFunction(n, metric, ZSource.TABLE, table=kendall_table_dp(n))
        raise ValueError(
            f"exact enumeration of Z for {metric.value} is limited to n <= {N_MAX_DEFAULT} (got n={n}); "
            "set z_source = grid (importance sampling)"
            + (" or z_source = table (exact footrule recursion)" if metric is Metric.FOOTRULE else "")
        )
    if source == "table":
        if table_path:
            table = DistanceFrequencyTable.read(table_path)
        elif metric is Metric.FOOTRULE:
            table = footrule_table_dp(n)
        elif metric is Metric.KENDALL:
            table = kendall_table_dp(n)
        else:
            raise ValueError("z_source = table needs a distance table file for the Spearman distance")
        return PartitionFunction(n, metric, ZSource.TABLE, table=table)
    if source == "grid":
        if grid_path and os.path.exists(grid_path):
            grid = LogZGrid.read(grid_path)
        else:
            grid = estimate_log_z_grid(n, metric, default_alpha_grid(alpha_max, grid_points), grid_samples,
                                       np.random.default_rng(seed))
            if grid_path:
                grid.write(grid_path)
        if grid.alphas[-1] < alpha_max:
            raise ValueError(f"log Z grid ends at {grid.alphas[-1]}, below alpha_max = {alpha_max}")
        return PartitionFunction(n, metric, ZSource.GRID, grid=grid)
    raise ValueError(f"unknown z_source {source!r}; use auto, exact, closed_form, table or grid")
