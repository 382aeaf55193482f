"""Independent pure-Python oracles: enumeration, similarity formulas and brute-force posteriors.

Nothing here imports the package; each quantity is written straight from its
definition with plain loops so that tests compare two separate routes.
"""
from __future__ import annotations

import itertools
import math
import statistics


def perms(n):
    return [tuple(p) for p in itertools.permutations(range(1, n + 1))]


def footrule(a, b):
    return sum(abs(x - y) for x, y in zip(a, b))


def kendall(a, b):
    n = len(a)
    return sum(1 for i in range(n) for k in range(i + 1, n) if (a[i] - a[k]) * (b[i] - b[k]) < 0)


def spearman(a, b):
    return sum((x - y) ** 2 for x, y in zip(a, b))


DIST = {"footrule": footrule, "kendall": kendall, "spearman": spearman}


def distance_counts(n, metric):
    ident = tuple(range(1, n + 1))
    out = {}
    for p in perms(n):
        d = DIST[metric](p, ident)
        out[d] = out.get(d, 0) + 1
    return out


def log_z(alpha, n, metric):
    return math.log(sum(c * math.exp(-alpha * d / n) for d, c in distance_counts(n, metric).items()))


def mallows_pmf(rho, alpha, metric="footrule"):
    n = len(rho)
    w = {p: math.exp(-alpha / n * DIST[metric](p, rho)) for p in perms(n)}
    tot = sum(w.values())
    return {p: v / tot for p, v in w.items()}


def leap_shift_pmf(rho, leap):
    """Transition pmf written from the move description: pick item, pick new rank, shift."""
    n = len(rho)
    out = {}
    for i in range(n):
        window = [r for r in range(max(1, rho[i] - leap), min(n, rho[i] + leap) + 1) if r != rho[i]]
        for r in window:
            new = list(rho)
            old = rho[i]
            for k in range(n):
                if k == i:
                    new[k] = r
                elif old < rho[k] <= r:
                    new[k] = rho[k] - 1
                elif r <= rho[k] < old:
                    new[k] = rho[k] + 1
            key = tuple(new)
            out[key] = out.get(key, 0.0) + 1.0 / (n * len(window))
    return out


# --------------------------------------------------------------------------
# similarity formulas

def g_gof_cont(vals, c, centroids, theta):
    tot = 0.0
    for x in vals:
        w = [1.0 / (1.0 + theta * abs(x - m)) for m in centroids]
        tot += w[c] / sum(w)
    return tot / len(vals)


def g_gof_cat(vals, c, modes, gamma):
    C = len(modes)
    tot = 0.0
    for x in vals:
        hits = [1 if m == x else 0 for m in modes]
        tot += (1 + gamma * hits[c]) / (C + gamma * sum(hits))
    return tot / len(vals)


def log_g_aug_cont(vals, mu0, sigma, sigma0, appendix=False):
    m = len(vals)
    if appendix:
        st2 = 1.0 / (sigma ** -2 + 1.0 / (sigma0 ** 2 * m))
    else:
        st2 = 1.0 / (sigma ** -2 + sigma0 ** -2)
    out = m * math.log(math.sqrt(st2) / sigma)
    for x in vals:
        if appendix:
            mt = st2 * (x / sigma ** 2 + mu0 / (sigma0 ** 2 * m))
        else:
            mt = (sigma0 ** 2 * x + sigma ** 2 * mu0) / (sigma ** 2 + sigma0 ** 2)
        out += 0.5 * (mt ** 2 / st2 - x ** 2 / sigma ** 2)
    return out


def log_g_aug_cat(vals, B, phi):
    counts = [sum(1 for v in vals if v == b) for b in range(B)]
    M = sum(counts)
    return (sum(math.lgamma(cnt + phi) for cnt in counts) - math.lgamma(M + B * phi)
            + math.lgamma(B * phi) - B * math.lgamma(phi))


def _mode(vals, B):
    counts = [sum(1 for v in vals if v == b) for b in range(B)]
    best = max(counts)
    return counts.index(best)


def column_log_g(columns, kinds, levels, k, c, z, family, params):
    """log g_k of cluster c under labels z; ``columns[k]`` is a list with None for missing."""
    col = columns[k]
    C = params["C"]
    observed = [x for x in col if x is not None]
    vals = [x for x, zi in zip(col, z) if zi == c and x is not None]
    if not vals:
        return 0.0
    if family == "aug":
        if kinds[k] == "categorical":
            return log_g_aug_cat(vals, levels[k], params["phi"])
        sd = statistics.stdev(observed) if len(observed) > 1 else 0.0
        if sd == 0:
            return 0.0
        return log_g_aug_cont(vals, statistics.fmean(observed), params["c1"] * sd, params["c2"] * sd,
                              params.get("appendix", False))
    cents = []
    for l in range(C):
        lv = [x for x, zi in zip(col, z) if zi == l and x is not None]
        if kinds[k] == "categorical":
            cents.append(_mode(lv if lv else observed, levels[k]))
        else:
            cents.append(statistics.fmean(lv) if lv else statistics.fmean(observed))
    if kinds[k] == "categorical":
        return math.log(g_gof_cat(vals, c, cents, params["gamma"]))
    return math.log(g_gof_cont(vals, c, cents, params["theta"]))


# --------------------------------------------------------------------------
# brute-force conditionals

def _loglik(R_j, rho_c, alpha_c, n, metric):
    return -alpha_c / n * DIST[metric](R_j, rho_c) - log_z(alpha_c, n, metric)


def joint_log_posterior(R, z, rho, alpha, tau, columns, kinds, levels, family, params, metric="footrule"):
    """Unnormalised log posterior as a function of the labels (z-free terms dropped)."""
    n = len(R[0])
    C = len(rho)
    out = 0.0
    for j, c in enumerate(z):
        out += _loglik(R[j], rho[c], alpha[c], n, metric) + math.log(tau[c])
    if family is not None:
        for c in range(C):
            if c not in z:
                continue
            for k in range(len(columns)):
                out += column_log_g(columns, kinds, levels, k, c, z, family, params)
    return out


def _normalise(lp):
    m = max(lp)
    s = sum(math.exp(v - m) for v in lp)
    return [math.exp(v - m) / s for v in lp]


def joint_z_conditional(j, R, z, rho, alpha, tau, columns, kinds, levels, family, params, metric="footrule"):
    lp = []
    for c in range(len(rho)):
        zz = list(z)
        zz[j] = c
        lp.append(joint_log_posterior(R, zz, rho, alpha, tau, columns, kinds, levels, family, params, metric))
    return _normalise(lp)


def paper_z_conditional(j, R, z, rho, alpha, tau, columns, kinds, levels, family, params, metric="footrule"):
    """Likelihood x tau_c x g(members of c plus j), skipping columns where j is missing."""
    n = len(R[0])
    lp = []
    for c in range(len(rho)):
        zz = list(z)
        zz[j] = c
        v = _loglik(R[j], rho[c], alpha[c], n, metric) + math.log(tau[c])
        if family is not None:
            for k in range(len(columns)):
                if columns[k][j] is None:
                    continue
                v += column_log_g(columns, kinds, levels, k, c, zz, family, params)
        lp.append(v)
    return _normalise(lp)
