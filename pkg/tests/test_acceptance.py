"""Acceptance criteria, each run at its stated tolerance with one PASS/FAIL line."""
import itertools
import math
import time

import numpy as np
import pytest

from bmmx.benchmark import BenchmarkConfig, mean_p_hat, run_benchmark
from bmmx.cli import main
from bmmx.datagen import sample_mallows
from bmmx.io import write_rankings
from bmmx.model import Hyperparameters, MixtureState, _likelihood_matrix, gibbs_z_logprobs, log_posterior_full, z_logprobs_compiled
from bmmx.partition import default_partition_function, enumerate_distance_table, estimate_log_z_grid, log_z_exact, log_z_kendall_closed_form
from bmmx.ranks import consistent_rows, leap_and_shift_pmf
from bmmx.sampler import RunConfig, run_bmmx, run_bmmx_partial
from bmmx.similarity import (
    AugmentedParams,
    CovariateTable,
    GofParams,
    log_sim_aug_categorical,
    log_sim_aug_continuous,
    log_sim_gof_categorical,
    log_sim_gof_continuous,
    log_similarity,
    prepare,
)

from . import oracles


def _tv(keys, pmf):
    counts = {}
    for k in keys:
        counts[k] = counts.get(k, 0) + 1
    tot = len(keys)
    return 0.5 * sum(abs(counts.get(k, 0) / tot - pmf.get(k, 0.0)) for k in set(counts) | set(pmf))


def _rows(a):
    return [tuple(int(v) for v in r) for r in a]


def _exact_rho_posterior(R, alpha):
    n = R.shape[1]
    logp = {p: -alpha / n * sum(oracles.footrule(r, p) for r in R) for p in oracles.perms(n)}
    top = max(logp.values())
    w = {p: math.exp(v - top) for p, v in logp.items()}
    tot = sum(w.values())
    return {p: v / tot for p, v in w.items()}


def test_criterion_1_exact_posterior(verdict):
    # uniform data keep the exact posterior spread over several consensus rankings
    rng = np.random.default_rng(2)
    R = np.array([rng.permutation(4) + 1 for _ in range(20)])
    t0 = time.perf_counter()
    s = run_bmmx(R, None, RunConfig(M=100_000, burn_in=10_000, seed=1, fixed_alpha=3.0))
    elapsed = time.perf_counter() - t0
    tv = _tv(_rows(s.rho[:, 0]), _exact_rho_posterior(R, 3.0))
    verdict("criterion 1", tv <= 0.05 and elapsed < 60, f"TV={tv:.4f} <= 0.05, runtime {elapsed:.1f}s < 60s")


def test_criterion_2_partition_function(verdict):
    totals_ok = all(sum(enumerate_distance_table(n, m).counts.values()) == math.factorial(n)
                    for n in range(1, 9) for m in ("footrule", "kendall", "spearman"))
    worst = 0.0
    for n in range(1, 9):
        table = enumerate_distance_table(n, "kendall")
        for a in (0.1, 1.0, 5.0, 20.0):
            worst = max(worst, abs(log_z_kendall_closed_form(a, n) - log_z_exact(a, table)))
    alphas = np.array([0.1, 1.0, 5.0, 20.0])
    grid = estimate_log_z_grid(6, "footrule", alphas, 100_000, np.random.default_rng(7))
    exact = np.array([log_z_exact(a, enumerate_distance_table(6, "footrule")) for a in alphas])
    z_scores = np.abs(grid.log_z - exact) / grid.se
    ok = totals_ok and worst <= 1e-10 and np.all(z_scores <= 3)
    verdict("criterion 2", bool(ok), f"table totals n!={totals_ok}, Kendall max err {worst:.1e}, "
            f"IS |err|/se max {z_scores.max():.2f} <= 3")


def test_criterion_3_proposal(verdict):
    worst, symmetric = 0.0, True
    for n in range(2, 7):
        for leap in (1, 2, 3):
            if leap > n - 1:
                continue
            pmfs = {p: leap_and_shift_pmf(p, leap) for p in itertools.permutations(range(1, n + 1))}
            for p, row in pmfs.items():
                worst = max(worst, abs(sum(row.values()) - 1))
                symmetric &= all(p in pmfs[q] for q in row)
    verdict("criterion 3", worst <= 1e-12 and symmetric, f"max |row sum - 1| {worst:.1e}, support symmetric={symmetric}")


def _columns(X):
    return [[None if np.isnan(v) else float(v) for v in X.values[:, k]] for k in range(X.K)]


def test_criterion_4_gibbs_conditional(verdict):
    rng = np.random.default_rng(4)
    n, N, C = 3, 3, 2
    X = CovariateTable(np.array([[0.3, 1.0], [-1.1, 0.0], [2.1, 1.0]]), ["continuous", "categorical"], [0, 2])
    logz = default_partition_function(n, "footrule")
    worst = 0.0
    for sim in (GofParams(theta=1.0, gamma=1.0), AugmentedParams()):
        family = "gof" if isinstance(sim, GofParams) else "aug"
        params = {"C": C, "theta": getattr(sim, "theta", 0), "gamma": getattr(sim, "gamma", 0),
                  "c1": getattr(sim, "c1", 0), "c2": getattr(sim, "c2", 0), "phi": getattr(sim, "phi", 0),
                  "appendix": False}
        prep = prepare(X, sim)
        for _ in range(10):
            R = np.array([rng.permutation(n) + 1 for _ in range(N)])
            st = MixtureState(np.array([rng.permutation(n) + 1 for _ in range(C)]), rng.uniform(0.5, 4, C),
                              rng.dirichlet(np.ones(C)), rng.integers(C, size=N).astype(np.int64))
            for j in range(N):
                # brute force over the unnormalised full posterior with z_j varied
                joint = Hyperparameters(C=C, similarity=sim, z_conditional="joint")
                lp = []
                for c in range(C):
                    s2 = st.copy()
                    s2.z[j] = c
                    lp.append(log_posterior_full(s2, R, X, joint, logz))
                brute = np.exp(np.array(lp) - max(lp))
                brute /= brute.sum()
                lik = _likelihood_matrix(R, st, "footrule", logz)
                got_joint = [np.exp(gibbs_z_logprobs(j, st, R, X, joint, logz)),
                             np.exp(z_logprobs_compiled(j, lik, st.z, prep, True))]
                # the default conditional scores only the candidate cluster's covariates
                paper = oracles.paper_z_conditional(j, _rows(R), list(st.z), _rows(st.rho), list(st.alpha),
                                                    list(st.tau), _columns(X), X.kinds, X.levels, family, params)
                hyper = Hyperparameters(C=C, similarity=sim)
                got_paper = [np.exp(gibbs_z_logprobs(j, st, R, X, hyper, logz)),
                             np.exp(z_logprobs_compiled(j, lik, st.z, prep, False))]
                worst = max([worst] + [np.abs(g - brute).max() for g in got_joint]
                            + [np.abs(g - paper).max() for g in got_paper])
    verdict("criterion 4", worst <= 1e-12, f"max abs error {worst:.1e} <= 1e-12, gof and augmented")


def test_criterion_5_similarity_invariants(verdict):
    rng = np.random.default_rng(5)
    nuisance_ok = True
    for C in (2, 3, 4, 6):
        N = 15
        X = CovariateTable.continuous(rng.normal(size=(N, 2)))
        z = rng.integers(C, size=N)
        extra = [CovariateTable.continuous(np.full(N, 1.7)), CovariateTable(np.full((N, 1), 2.0), ["categorical"], [4])]
        for c in range(C):
            members = np.flatnonzero(z == c)
            if members.size == 0:
                continue
            base = log_similarity(members, c, X, z, GofParams(theta=0.7, gamma=2.0), C)
            for col in extra:
                diff = log_similarity(members, c, X.append(col), z, GofParams(theta=0.7, gamma=2.0), C) - base
                nuisance_ok &= abs(diff + math.log(C)) <= 1e-12

    vals = rng.normal(size=6)
    counts = rng.integers(4, size=6).astype(float)
    cents = rng.normal(size=3)
    symmetric = True
    for perm in itertools.permutations(range(6)):
        p = list(perm)
        symmetric &= log_sim_gof_continuous(vals[p], 1, cents, 1.3) == log_sim_gof_continuous(vals, 1, cents, 1.3)
        symmetric &= log_sim_gof_categorical(counts[p], 1, np.array([0.0, 3.0, 1.0]), 0.8) == \
            log_sim_gof_categorical(counts, 1, np.array([0.0, 3.0, 1.0]), 0.8)
        symmetric &= log_sim_aug_continuous(vals[p], 0.2, 0.5, 4.0) == log_sim_aug_continuous(vals, 0.2, 0.5, 4.0)
    level_counts = np.array([3.0, 0.0, 2.0, 1.0])
    for perm in itertools.permutations(range(4)):
        symmetric &= log_sim_aug_categorical(level_counts[list(perm)], 1.0) == log_sim_aug_categorical(level_counts, 1.0)

    n, N, C = 4, 6, 3
    R = np.array([rng.permutation(n) + 1 for _ in range(N)])
    st = MixtureState(np.array([rng.permutation(n) + 1 for _ in range(C)]), np.array([1.0, 2.0, 3.0]),
                      np.array([0.2, 0.3, 0.5]), rng.integers(C, size=N).astype(np.int64))
    Xm = CovariateTable(np.full((N, 2), np.nan), ["continuous", "categorical"], [0, 3])
    logz = default_partition_function(n, "footrule")
    missing_ok = True
    for sim in (GofParams(), AugmentedParams(), AugmentedParams(variant="appendix")):
        for mode in ("paper", "joint"):
            for j in range(N):
                a = gibbs_z_logprobs(j, st, R, Xm, Hyperparameters(C=C, similarity=sim, z_conditional=mode), logz)
                b = gibbs_z_logprobs(j, st, R, None, Hyperparameters(C=C, z_conditional=mode), logz)
                missing_ok &= np.array_equal(a, b)
    verdict("criterion 5", nuisance_ok and symmetric and missing_ok,
            f"nuisance factor 1/C={nuisance_ok}, permutation symmetry={symmetric}, all-missing == K=0: {missing_ok}")


@pytest.mark.slow
def test_criterion_6_trend(verdict):
    cfg = BenchmarkConfig()
    assert cfg.sim.n == 20 and cfg.sim.N == 90 and cfg.sim.C == 3 and cfg.sim.s == 4 and cfg.sim.alpha_true == 5
    t0 = time.perf_counter()
    means = mean_p_hat(run_benchmark(cfg))
    elapsed = time.perf_counter() - t0
    gof = {(r, x): v for (r, x, m, _), v in means.items() if m == "gof"}
    bmm = {(r, x): v for (r, x, m, _), v in means.items() if m == "bmm"}
    gaps = {k: gof[k] - bmm[k] for k in gof}
    a_ok = all(g >= -0.05 for g in gaps.values())
    b_ok = gof[(10, 10.0)] >= gof[(10, 2.0)] - 0.05
    table = ", ".join(f"({r},{x:g}) gof {gof[(r, x)]:.3f} bmm {bmm[(r, x)]:.3f}" for r, x in sorted(gof))
    print(table)
    verdict("criterion 6", a_ok and b_ok and elapsed < 1800,
            f"(a) min gof-bmm {min(gaps.values()):+.3f} >= -0.05: {a_ok}; (b) {gof[(10, 10.0)]:.3f} vs "
            f"{gof[(10, 2.0)]:.3f}: {b_ok}; runtime {elapsed / 60:.1f} min < 30")


def test_criterion_7_missing_data(verdict):
    rng = np.random.default_rng(7)
    R = np.array([rng.permutation(3) + 1 for _ in range(6)])
    cfg = RunConfig(M=60_000, burn_in=2_000, seed=3, hyper=Hyperparameters(C=2), fixed_alpha=[1.0, 2.0],
                    fixed_tau=[0.5, 0.5])
    full = run_bmmx(R, None, cfg)
    part = run_bmmx_partial(R, None, RunConfig(**{**cfg.__dict__, "seed": 4}))
    tv_rho = max(_tv(_rows(part.rho[:, c]), {k: v / full.num_records for k, v in
                 zip(*np.unique(full.rho[:, c], axis=0, return_counts=True)) for k in [tuple(int(x) for x in k)]})
                 for c in range(2))
    z_full = {}
    for z in _rows(full.z):
        z_full[z] = z_full.get(z, 0) + 1 / full.num_records
    tv_z = _tv(_rows(part.z), z_full)

    obs = R.copy()
    obs[0, 1:] = 0
    obs[2, 0] = 0
    obs[3] = 0
    obs[4, 2] = 0
    replay = run_bmmx_partial(obs, None, RunConfig(M=20_000, burn_in=0, seed=5, hyper=Hyperparameters(C=2)))
    consistent = all(consistent_rows(replay.augmented[r], obs).all() for r in range(replay.num_records))
    verdict("criterion 7", tv_rho <= 0.05 and tv_z <= 0.05 and consistent and replay.num_records == 20_000,
            f"TV rho {tv_rho:.4f}, TV z {tv_z:.4f} <= 0.05; all {replay.num_records} augmented states consistent={consistent}")


def test_criterion_8_mallows_sampler(verdict):
    rho = (2, 3, 1)
    draws = sample_mallows(rho, 2.0, "footrule", np.random.default_rng(8), size=100_000)
    tv = _tv(_rows(draws), oracles.mallows_pmf(rho, 2.0))
    verdict("criterion 8", tv <= 0.02, f"TV={tv:.4f} <= 0.02 over 1e5 draws")


def test_criterion_9_determinism(verdict, tmp_path):
    rng = np.random.default_rng(9)
    write_rankings(tmp_path / "r.csv", sample_mallows([3, 1, 4, 2, 5], 1.0, rng=rng, size=15))
    (tmp_path / "fit.manifest").write_text("rankings = r.csv\nC = 2\nM = 2000\nburn_in = 100\nseed = 11\n"
                                           "num_chains = 2\nbinary = true\n")
    outs = []
    for run in ("a", "b"):
        assert main(["fit", "-m", str(tmp_path / "fit.manifest"), "-o", str(tmp_path / run)]) == 0
        outs.append([(tmp_path / run / f).read_bytes() for f in ("samples.csv", "samples.bin")])
    same = outs[0] == outs[1]
    verdict("criterion 9", same, f"samples.csv and samples.bin byte-identical across two runs: {same}")
