"""Priors, likelihood, acceptance ratios and full conditionals of the mixture model.

Cluster labels are 0-based internally (``0..C-1``); files and reports use
1-based labels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.special import gammaln, logsumexp

from .ranks import Metric, as_metric, check_ranking, distances, distance_matrix
from .similarity import (
    FAMILY_NONE,
    AugmentedParams,
    CovariateTable,
    PreparedCovariates,
    SimilarityConfig,
    _cluster_log_sim_kernel,
    log_similarity,
    prepare,
)

Z_CONDITIONALS = ("paper", "joint")


@dataclass(frozen=True)
class Hyperparameters:
    """Model and proposal settings.

    ``z_conditional="paper"`` scores a candidate cluster with the similarity
    of that cluster only (its members plus the reassigned assessor);
    ``"joint"`` uses the ratio of the full partition prior, i.e. the
    similarity of every cluster after the move.
    """

    C: int = 1
    metric: Metric = Metric.FOOTRULE
    lam: float = 0.1
    alpha_max: float = 20.0
    psi: float = 10.0
    sigma_alpha: float = 0.1
    alpha_jump: int = 10
    leap: int = 1
    similarity: SimilarityConfig = None
    z_conditional: str = "paper"

    def __post_init__(self):
        object.__setattr__(self, "metric", as_metric(self.metric))
        if self.C < 1:
            raise ValueError("C must be at least 1")
        if min(self.lam, self.alpha_max, self.psi, self.sigma_alpha) <= 0:
            raise ValueError("lambda, alpha_max, psi and sigma_alpha must be positive")
        if self.alpha_jump < 1 or self.leap < 1:
            raise ValueError("alpha_jump and leap must be positive integers")
        if self.z_conditional not in Z_CONDITIONALS:
            raise ValueError(f"z_conditional must be one of {Z_CONDITIONALS}")

    @property
    def aug(self) -> bool:
        return isinstance(self.similarity, AugmentedParams)


@dataclass
class MixtureState:
    rho: np.ndarray    # (C, n) consensus rankings
    alpha: np.ndarray  # (C,)
    tau: np.ndarray    # (C,)
    z: np.ndarray      # (N,) labels in 0..C-1

    @property
    def C(self) -> int:
        return self.rho.shape[0]

    def validate(self, alpha_max: float = math.inf) -> None:
        for r in self.rho:
            check_ranking(r)
        if np.any(self.alpha <= 0) or np.any(self.alpha > alpha_max):
            raise ValueError("alpha outside (0, alpha_max]")
        if np.any(self.tau <= 0) or abs(self.tau.sum() - 1.0) > 1e-12:
            raise ValueError("tau must be a strictly positive probability vector")
        if np.any(self.z < 0) or np.any(self.z >= self.C):
            raise ValueError("cluster labels out of range")

    def copy(self) -> "MixtureState":
        return MixtureState(self.rho.copy(), self.alpha.copy(), self.tau.copy(), self.z.copy())


# --------------------------------------------------------------------------
# priors and likelihood

def log_prior_alpha(alpha: float, lam: float, alpha_max: float) -> float:
    """Truncated exponential log density on [0, alpha_max]."""
    if not 0 <= alpha <= alpha_max:
        return -math.inf
    return math.log(lam) - lam * alpha - math.log(-math.expm1(-lam * alpha_max))


def sample_alpha_prior(lam: float, lo: float, hi: float, rng: np.random.Generator) -> float:
    """Exponential(lam) restricted to [lo, hi], by inverting the cdf."""
    a = -math.expm1(-lam * lo)
    b = -math.expm1(-lam * hi)
    u = a + rng.random() * (b - a)
    return -math.log1p(-u) / lam


def log_lik_cluster(rankings, rho, alpha: float, metric, logz) -> float:
    """Mallows log-likelihood of one cluster's rankings."""
    R = np.asarray(rankings)
    if R.size == 0:
        return 0.0
    R = np.atleast_2d(R)
    n = R.shape[1]
    d = distances(R, rho, metric).sum()
    return -(alpha / n) * d - R.shape[0] * logz(alpha)


def accept_logratio_rho(rho_old, rho_new, forward_lp: float, backward_lp: float, alpha: float,
                        member_rankings, metric) -> float:
    """Log M-H ratio for a consensus proposal; accept when ``log U`` is below it."""
    rho_old = np.asarray(rho_old)
    n = rho_old.size
    R = np.asarray(member_rankings)
    if R.size == 0:
        return backward_lp - forward_lp
    R = np.atleast_2d(R)
    delta = distances(R, rho_new, metric).sum() - distances(R, rho_old, metric).sum()
    return backward_lp - forward_lp - (alpha / n) * delta


def alpha_logratio(alpha_old: float, alpha_new: float, n_members: int, dist_sum: float, n: int,
                   lam: float, alpha_max: float, logz) -> float:
    """Log M-H ratio for a log-normal scale proposal given the cluster's distance sum."""
    if not 0 < alpha_new <= alpha_max:
        return -math.inf
    support = getattr(logz, "support", (0.0, math.inf))
    if not support[0] <= alpha_new <= support[1]:
        return -math.inf
    if alpha_new == alpha_old:
        return 0.0
    return (
        n_members * (logz(alpha_old) - logz(alpha_new))
        + log_prior_alpha(alpha_new, lam, alpha_max) - log_prior_alpha(alpha_old, lam, alpha_max)
        + math.log(alpha_new) - math.log(alpha_old)
        - (alpha_new - alpha_old) / n * dist_sum
    )


def accept_logratio_alpha(alpha_old: float, alpha_new: float, member_rankings, rho,
                          hyper: Hyperparameters, logz) -> float:
    R = np.asarray(member_rankings)
    rho = np.asarray(rho)
    n = rho.size
    if R.size == 0:
        n_c, dsum = 0, 0.0
    else:
        R = np.atleast_2d(R)
        n_c, dsum = R.shape[0], float(distances(R, rho, hyper.metric).sum())
    return alpha_logratio(alpha_old, alpha_new, n_c, dsum, n, hyper.lam, hyper.alpha_max, logz)


def accept_logratio_augmentation(r_old, r_new, rho, alpha: float, metric) -> float:
    rho = np.asarray(rho)
    n = rho.size
    return -(alpha / n) * (distances(r_new, rho, metric)[0] - distances(r_old, rho, metric)[0])


def gibbs_tau(counts, psi: float, rng: np.random.Generator) -> np.ndarray:
    """Draw tau | z ~ Dirichlet(psi + n_1, ..., psi + n_C)."""
    counts = np.asarray(counts, dtype=float)
    if counts.size == 1:
        return np.ones(1)
    tau = rng.dirichlet(psi + counts)
    if np.any(tau <= 0):
        tau = np.maximum(tau, np.finfo(float).tiny)
        tau /= tau.sum()
    return tau


def log_dirichlet(tau, psi: float) -> float:
    tau = np.asarray(tau, dtype=float)
    C = tau.size
    if C == 1:
        return 0.0
    return float(gammaln(psi * C) - C * gammaln(psi) + (psi - 1) * np.log(tau).sum())


# --------------------------------------------------------------------------
# cluster labels

def _likelihood_matrix(rankings, state: MixtureState, metric, logz) -> np.ndarray:
    """(N, C) matrix of ``-(alpha_c/n) d(R_j, rho_c) - log Z(alpha_c) + log tau_c``."""
    R = np.atleast_2d(rankings)
    n = R.shape[1]
    D = distance_matrix(R, state.rho, metric)
    lz = np.array([logz(a) for a in state.alpha])
    return -(state.alpha[None, :] / n) * D - lz[None, :] + np.log(state.tau)[None, :]


def gibbs_z_logprobs(j: int, state: MixtureState, rankings, covariates: CovariateTable | None,
                     hyper: Hyperparameters, logz, prepared: PreparedCovariates | None = None) -> np.ndarray:
    """Normalised log full conditional of ``z_j`` (reference implementation)."""
    C = state.C
    R = np.atleast_2d(rankings)
    n = R.shape[1]
    lz = np.array([logz(a) for a in state.alpha])
    d = distance_matrix(R[j:j + 1], state.rho, hyper.metric)[0]
    lp = -(state.alpha / n) * d - lz + np.log(state.tau)
    sim = hyper.similarity
    if sim is not None and covariates is not None and covariates.K > 0:
        prep = prepared if prepared is not None else prepare(covariates, sim)
        for c in range(C):
            z = state.z.copy()
            z[j] = c
            if hyper.z_conditional == "paper":
                members = np.flatnonzero(z == c)
                lp[c] += log_similarity(members, c, covariates, z, sim, C, assessor=j, prepared=prep)
            else:
                for l in range(C):
                    members = np.flatnonzero(z == l)
                    if members.size:
                        lp[c] += log_similarity(members, l, covariates, z, sim, C, prepared=prep)
    return lp - logsumexp(lp)


def log_partition_prior(z, tau, covariates: CovariateTable | None, similarity: SimilarityConfig,
                        prepared: PreparedCovariates | None = None) -> float:
    """log prod_c tau_c^{|S_c|} g(X_c), up to its normalising constant."""
    z = np.asarray(z)
    C = len(tau)
    counts = np.bincount(z, minlength=C)
    out = float((counts * np.log(tau)).sum())
    if similarity is not None and covariates is not None and covariates.K > 0:
        prep = prepared if prepared is not None else prepare(covariates, similarity)
        for c in range(C):
            members = np.flatnonzero(z == c)
            if members.size:
                out += log_similarity(members, c, covariates, z, similarity, C, prepared=prep)
    return out


def log_posterior_full(state: MixtureState, rankings, covariates: CovariateTable | None,
                       hyper: Hyperparameters, logz) -> float:
    """Unnormalised joint log posterior of (z, rho, alpha, tau)."""
    R = np.atleast_2d(rankings)
    n = R.shape[1]
    C = state.C
    out = 0.0
    for c in range(C):
        members = R[state.z == c]
        out += log_lik_cluster(members, state.rho[c], state.alpha[c], hyper.metric, logz)
        out += log_prior_alpha(state.alpha[c], hyper.lam, hyper.alpha_max)
        out -= math.lgamma(n + 1)
    out += log_partition_prior(state.z, state.tau, covariates, hyper.similarity)
    out += log_dirichlet(state.tau, hyper.psi)
    return out


# --------------------------------------------------------------------------
# compiled sweep

@njit(cache=True)
def _z_logprobs_one(j, loglik, z, X, is_cat, levels, mu0, sigma, sigma0, skip, fallback,
                    family, phi, theta, gamma, appendix, joint, buf, out):
    C = loglik.shape[1]
    K = X.shape[1]
    current = z[j]
    for c in range(C):
        out[c] = loglik[j, c]
        if family == FAMILY_NONE or K == 0:
            continue
        z[j] = c
        if joint:
            for l in range(C):
                for k in range(K):
                    out[c] += _cluster_log_sim_kernel(X, is_cat, levels, mu0, sigma, sigma0, skip, fallback,
                                                      family, phi, theta, gamma, appendix, z, l, C, k, buf)
        else:
            for k in range(K):
                if np.isnan(X[j, k]):
                    continue
                out[c] += _cluster_log_sim_kernel(X, is_cat, levels, mu0, sigma, sigma0, skip, fallback,
                                                  family, phi, theta, gamma, appendix, z, c, C, k, buf)
    z[j] = current
    mx = out[0]
    for c in range(1, C):
        if out[c] > mx:
            mx = out[c]
    s = 0.0
    for c in range(C):
        s += math.exp(out[c] - mx)
    lse = mx + math.log(s)
    for c in range(C):
        out[c] -= lse


@njit(cache=True)
def _z_sweep(loglik, z, u, X, is_cat, levels, mu0, sigma, sigma0, skip, fallback,
             family, phi, theta, gamma, appendix, joint):
    N, C = loglik.shape
    buf = np.empty(N)
    lp = np.empty(C)
    for j in range(N):
        _z_logprobs_one(j, loglik, z, X, is_cat, levels, mu0, sigma, sigma0, skip, fallback,
                        family, phi, theta, gamma, appendix, joint, buf, lp)
        acc = 0.0
        choice = C - 1
        for c in range(C):
            acc += math.exp(lp[c])
            if u[j] < acc:
                choice = c
                break
        z[j] = choice


def _prep_args(prep: PreparedCovariates):
    return (prep.X, prep.is_cat, prep.levels, prep.mu0, prep.sigma, prep.sigma0, prep.skip, prep.fallback,
            prep.family, prep.phi, prep.theta, prep.gamma, prep.appendix)


def z_logprobs_compiled(j: int, loglik: np.ndarray, z: np.ndarray, prep: PreparedCovariates,
                        joint: bool = False) -> np.ndarray:
    """Compiled counterpart of :func:`gibbs_z_logprobs` given the likelihood matrix."""
    out = np.empty(loglik.shape[1])
    buf = np.empty(loglik.shape[0])
    _z_logprobs_one(j, np.ascontiguousarray(loglik, dtype=float), z.astype(np.int64), *_prep_args(prep),
                    joint, buf, out)
    return out


def z_sweep(loglik: np.ndarray, z: np.ndarray, u: np.ndarray, prep: PreparedCovariates, joint: bool = False) -> None:
    """Sequential Gibbs sweep over all labels, updating ``z`` in place."""
    _z_sweep(np.ascontiguousarray(loglik, dtype=float), z, u, *_prep_args(prep), joint)
