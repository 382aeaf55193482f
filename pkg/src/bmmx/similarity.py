"""Covariate tables and the covariate similarity functions of the partition prior.

Two families are available:

* augmented: the marginal likelihood of the cluster's covariates under an
  auxiliary conjugate model (normal-normal for continuous columns,
  Dirichlet-multinomial for categorical ones);
* goodness-of-fit: the average, over the cluster members, of a normalised
  closeness score between each member and the cluster centroid (mean or mode).

Everything is computed on the log scale. Missing covariate values are NaN.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from numba import njit

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"

FAMILY_NONE, FAMILY_AUG, FAMILY_GOF = 0, 1, 2


@dataclass
class CovariateTable:
    """N x K covariate matrix with per-column types; NaN marks a missing value.

    ``levels[k]`` is the number of categories B for a categorical column and 0
    for a continuous one. Categorical values are codes in 0..B-1.
    """

    values: np.ndarray
    kinds: list[str]
    levels: list[int]
    names: list[str] = field(default=None)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2:
            raise ValueError("covariate values must be a 2-d array")
        K = vals.shape[1]
        if len(self.kinds) != K or len(self.levels) != K:
            raise ValueError("kinds and levels must have one entry per column")
        if self.names is None:
            self.names = [f"x{k + 1}" for k in range(K)]
        for k, (kind, B) in enumerate(zip(self.kinds, self.levels)):
            if kind not in (CONTINUOUS, CATEGORICAL):
                raise ValueError(f"column {self.names[k]}: unknown kind {kind!r}")
            col = vals[:, k]
            obs = col[~np.isnan(col)]
            if kind == CATEGORICAL:
                if B < 1:
                    raise ValueError(f"column {self.names[k]}: categorical columns need B >= 1 levels")
                bad = (obs != np.round(obs)) | (obs < 0) | (obs >= B)
                if bad.any():
                    raise ValueError(f"column {self.names[k]}: value {obs[bad][0]:g} outside categories 0..{B - 1}")
        self.values = vals
        self.kinds = list(self.kinds)
        self.levels = [int(b) for b in self.levels]

    @classmethod
    def empty(cls, N: int) -> "CovariateTable":
        return cls(np.zeros((N, 0)), [], [], [])

    @classmethod
    def continuous(cls, values, names=None) -> "CovariateTable":
        vals = np.asarray(values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        return cls(vals, [CONTINUOUS] * vals.shape[1], [0] * vals.shape[1], names)

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def K(self) -> int:
        return self.values.shape[1]

    def append(self, other: "CovariateTable") -> "CovariateTable":
        return CovariateTable(
            np.hstack([self.values, other.values]),
            self.kinds + other.kinds,
            self.levels + other.levels,
            self.names + other.names,
        )


@dataclass(frozen=True)
class AugmentedParams:
    """Augmented-family hyperparameters.

    Per continuous column, sigma = c1 * sd, sigma0 = c2 * sd and mu0 = mean
    of the observed values. ``variant="appendix"`` switches the posterior
    mean and variance to the prior-splitting form with a 1/|S_c| factor.
    """

    c1: float = 0.5
    c2: float = 10.0
    phi: float = 1.0
    variant: str = "main"

    def __post_init__(self):
        if min(self.c1, self.c2, self.phi) <= 0:
            raise ValueError("c1, c2 and phi must be positive")
        if self.variant not in ("main", "appendix"):
            raise ValueError("variant must be 'main' or 'appendix'")


@dataclass(frozen=True)
class GofParams:
    """Goodness-of-fit hyperparameters: theta (continuous) and gamma (categorical)."""

    theta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.theta < 0 or self.gamma < 0:
            raise ValueError("theta and gamma must be nonnegative")


SimilarityConfig = Union[AugmentedParams, GofParams, None]


# --------------------------------------------------------------------------
# per-column similarity functions

@njit(cache=True)
def log_sim_aug_continuous(values, mu0, sigma, sigma0, appendix=False):
    """log g for one continuous column under the normal-normal augmented model.

    ``|S| log(st/sigma) + 1/2 sum_j (mt_j^2 / st^2 - x_j^2 / sigma^2)``.
    """
    m = values.shape[0]
    if m == 0:
        raise ValueError("similarity of an empty covariate set")
    s2 = sigma * sigma
    s02 = sigma0 * sigma0
    if appendix:
        st2 = 1.0 / (1.0 / s2 + 1.0 / (s02 * m))
    else:
        st2 = 1.0 / (1.0 / s2 + 1.0 / s02)
    values = np.sort(values)  # fixed summation order: exact symmetry in the members
    acc = 0.0
    for i in range(m):
        x = values[i]
        if appendix:
            mt = st2 * (x / s2 + mu0 / (s02 * m))
        else:
            mt = (s02 * x + s2 * mu0) / (s2 + s02)
        acc += mt * mt / st2 - x * x / s2
    return m * 0.5 * math.log(st2 / s2) + 0.5 * acc


@njit(cache=True)
def log_sim_aug_categorical(counts, phi):
    """Dirichlet-multinomial marginal (no multinomial coefficient) of per-level counts."""
    B = counts.shape[0]
    total = 0.0
    acc = 0.0
    for b in range(B):
        if counts[b] < 0:
            raise ValueError("category counts must be nonnegative")
        total += counts[b]
        acc += math.lgamma(counts[b] + phi)
    if total == 0:
        raise ValueError("similarity of an empty covariate set")
    return acc - math.lgamma(total + B * phi) + math.lgamma(B * phi) - B * math.lgamma(phi)


@njit(cache=True)
def log_sim_gof_continuous(values, cluster_index, centroids, theta):
    """log of the mean normalised closeness ``(1 + theta|x - m_c|)^-1 / sum_l (1 + theta|x - m_l|)^-1``."""
    m = values.shape[0]
    if m == 0:
        raise ValueError("similarity of an empty covariate set")
    C = centroids.shape[0]
    values = np.sort(values)
    acc = 0.0
    for i in range(m):
        x = values[i]
        den = 0.0
        for l in range(C):
            den += 1.0 / (1.0 + theta * abs(x - centroids[l]))
        acc += (1.0 / (1.0 + theta * abs(x - centroids[cluster_index]))) / den
    return math.log(acc / m)


@njit(cache=True)
def log_sim_gof_categorical(values, cluster_index, modes, gamma):
    """log of the mean of ``(1 + gamma [x = mode_c]) / (C + gamma #{l : x = mode_l})``."""
    m = values.shape[0]
    if m == 0:
        raise ValueError("similarity of an empty covariate set")
    C = modes.shape[0]
    values = np.sort(values)
    acc = 0.0
    for i in range(m):
        x = values[i]
        matches = 0
        for l in range(C):
            if modes[l] == x:
                matches += 1
        own = 1.0 if modes[cluster_index] == x else 0.0
        acc += (1.0 + gamma * own) / (C + gamma * matches)
    return math.log(acc / m)


# --------------------------------------------------------------------------
# column preparation

@dataclass(frozen=True)
class PreparedCovariates:
    """Flat arrays consumed by the compiled similarity kernels."""

    X: np.ndarray          # (N, K) float, NaN missing
    is_cat: np.ndarray     # (K,) bool
    levels: np.ndarray     # (K,) int64
    mu0: np.ndarray        # (K,)
    sigma: np.ndarray      # (K,)
    sigma0: np.ndarray     # (K,)
    skip: np.ndarray       # (K,) bool: degenerate column under the augmented family
    fallback: np.ndarray   # (K,) centroid used for clusters with no observed value
    family: int
    phi: float
    theta: float
    gamma: float
    appendix: bool


def _mode(values: np.ndarray, B: int) -> float:
    counts = np.bincount(values.astype(np.int64), minlength=B)
    return float(np.argmax(counts))  # argmax returns the smallest label among ties


def prepare(covariates: CovariateTable, config: SimilarityConfig) -> PreparedCovariates:
    K = covariates.K
    X = covariates.values
    is_cat = np.array([k == CATEGORICAL for k in covariates.kinds], dtype=bool)
    levels = np.array(covariates.levels, dtype=np.int64)
    mu0 = np.zeros(K)
    sd = np.zeros(K)
    fallback = np.zeros(K)
    for k in range(K):
        col = X[:, k]
        obs = col[~np.isnan(col)]
        if obs.size == 0:
            continue
        if is_cat[k]:
            fallback[k] = _mode(obs, levels[k])
        else:
            mu0[k] = obs.mean()
            fallback[k] = mu0[k]
            sd[k] = obs.std(ddof=1) if obs.size > 1 else 0.0
    if isinstance(config, AugmentedParams):
        family, c1, c2, phi, appendix = FAMILY_AUG, config.c1, config.c2, config.phi, config.variant == "appendix"
        theta = gamma = 0.0
    elif isinstance(config, GofParams):
        family, c1, c2, phi, appendix = FAMILY_GOF, 1.0, 1.0, 1.0, False
        theta, gamma = config.theta, config.gamma
    elif config is None:
        family, c1, c2, phi, appendix, theta, gamma = FAMILY_NONE, 1.0, 1.0, 1.0, False, 0.0, 0.0
    else:
        raise TypeError(f"unsupported similarity configuration {config!r}")
    skip = (~is_cat) & ~(sd > 0)
    return PreparedCovariates(
        X=np.ascontiguousarray(X, dtype=float), is_cat=is_cat, levels=levels,
        mu0=mu0, sigma=c1 * sd, sigma0=c2 * sd, skip=skip, fallback=fallback,
        family=family, phi=float(phi), theta=float(theta), gamma=float(gamma), appendix=bool(appendix),
    )


# --------------------------------------------------------------------------
# reference (pure Python) cluster similarity

def _column_log_sim(vals: np.ndarray, k: int, c: int, others: list[np.ndarray], prep: PreparedCovariates) -> float:
    """log g_k for cluster ``c`` whose observed values are ``vals``; ``others[l]`` hold cluster l's values."""
    if vals.size == 0:
        return 0.0
    if prep.family == FAMILY_AUG:
        if prep.is_cat[k]:
            counts = np.bincount(vals.astype(np.int64), minlength=prep.levels[k]).astype(float)
            return float(log_sim_aug_categorical(counts, prep.phi))
        if prep.skip[k]:
            return 0.0
        return float(log_sim_aug_continuous(vals, prep.mu0[k], prep.sigma[k], prep.sigma0[k], prep.appendix))
    C = len(others)
    cent = np.empty(C)
    for l in range(C):
        ov = others[l]
        if ov.size == 0:
            cent[l] = prep.fallback[k]
        elif prep.is_cat[k]:
            cent[l] = _mode(ov, prep.levels[k])
        else:
            cent[l] = ov.mean()
    if prep.is_cat[k]:
        return float(log_sim_gof_categorical(vals, c, cent, prep.gamma))
    return float(log_sim_gof_continuous(vals, c, cent, prep.theta))


def log_similarity(members: Sequence[int], cluster_index: int, covariates: CovariateTable, assignments,
                   config: SimilarityConfig, n_clusters: int, assessor: int | None = None,
                   prepared: PreparedCovariates | None = None) -> float:
    """log g(X_c) for the candidate cluster made of ``members`` (0-based indices).

    Every other cluster ``l`` consists of ``{i : assignments[i] == l}`` minus
    ``members``; those sets only matter for goodness-of-fit centroids. When
    ``assessor`` is given, columns where that assessor's value is missing
    contribute nothing.
    """
    if config is None or covariates.K == 0:
        return 0.0
    prep = prepared if prepared is not None else prepare(covariates, config)
    members = np.asarray(members, dtype=np.int64)
    if members.size == 0:
        raise ValueError("candidate cluster must not be empty")
    z = np.array(assignments, dtype=np.int64)
    z[members] = cluster_index
    total = 0.0
    for k in range(covariates.K):
        col = prep.X[:, k]
        if assessor is not None and np.isnan(col[assessor]):
            continue
        per_cluster = [col[(z == l) & ~np.isnan(col)] for l in range(n_clusters)]
        total += _column_log_sim(per_cluster[cluster_index], k, cluster_index, per_cluster, prep)
    return total


# --------------------------------------------------------------------------
# compiled cluster similarity used inside the Gibbs sweep

@njit(cache=True)
def _cluster_log_sim_kernel(X, is_cat, levels, mu0, sigma, sigma0, skip, fallback,
                            family, phi, theta, gamma, appendix, z, c, C, k, buf):
    N = X.shape[0]
    m = 0
    for i in range(N):
        if z[i] == c and not np.isnan(X[i, k]):
            buf[m] = X[i, k]
            m += 1
    if m == 0:
        return 0.0
    vals = buf[:m]
    if family == FAMILY_AUG:
        if is_cat[k]:
            B = levels[k]
            counts = np.zeros(B)
            for i in range(m):
                counts[int(vals[i])] += 1.0
            return log_sim_aug_categorical(counts, phi)
        if skip[k]:
            return 0.0
        return log_sim_aug_continuous(vals, mu0[k], sigma[k], sigma0[k], appendix)
    cent = np.empty(C)
    if is_cat[k]:
        B = levels[k]
        counts = np.zeros((C, B))
        seen = np.zeros(C)
        for i in range(N):
            if not np.isnan(X[i, k]):
                counts[z[i], int(X[i, k])] += 1.0
                seen[z[i]] += 1.0
        for l in range(C):
            if seen[l] == 0:
                cent[l] = fallback[k]
            else:
                best = 0
                for b in range(1, B):
                    if counts[l, b] > counts[l, best]:
                        best = b
                cent[l] = best
        return log_sim_gof_categorical(vals, c, cent, gamma)
    sums = np.zeros(C)
    cnt = np.zeros(C)
    for i in range(N):
        if not np.isnan(X[i, k]):
            sums[z[i]] += X[i, k]
            cnt[z[i]] += 1.0
    for l in range(C):
        cent[l] = fallback[k] if cnt[l] == 0 else sums[l] / cnt[l]
    return log_sim_gof_continuous(vals, c, cent, theta)
