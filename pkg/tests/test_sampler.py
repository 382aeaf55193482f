import itertools
import math
import warnings

import numpy as np
import pytest

from bmmx.model import Hyperparameters
from bmmx.ranks import consistent_rows, is_permutation
from bmmx.sampler import (
    PosteriorSamples,
    RunConfig,
    read_samples_binary,
    read_samples_csv,
    run_bmmx,
    run_bmmx_partial,
    run_chains,
    write_samples_binary,
    write_samples_csv,
)
from bmmx.similarity import CovariateTable, GofParams

from . import oracles


def _data(n=4, N=10, seed=0):
    rng = np.random.default_rng(seed)
    return np.array([rng.permutation(n) + 1 for _ in range(N)])


def _key(rows):
    return [tuple(int(v) for v in r) for r in rows]


def _tv(samples_keys, pmf):
    counts = {}
    for k in samples_keys:
        counts[k] = counts.get(k, 0) + 1
    total = len(samples_keys)
    keys = set(counts) | set(pmf)
    return 0.5 * sum(abs(counts.get(k, 0) / total - pmf.get(k, 0.0)) for k in keys)


def _samples_equal(a: PosteriorSamples, b: PosteriorSamples):
    for f in ("iterations", "z", "rho", "alpha", "tau"):
        assert np.array_equal(getattr(a, f), getattr(b, f)), f
    assert (a.augmented is None) == (b.augmented is None)
    if a.augmented is not None:
        assert np.array_equal(a.augmented, b.augmented)
    assert a.accept == b.accept and a.meta == b.meta


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(M=10, burn_in=10)
    with pytest.raises(ValueError):
        RunConfig(M=10, burn_in=0, thin=0)


@pytest.mark.parametrize("M,burn,thin", [(50, 0, 1), (50, 10, 3), (37, 5, 4)])
def test_record_count(M, burn, thin):
    s = run_bmmx(_data(), None, RunConfig(M=M, burn_in=burn, thin=thin, hyper=Hyperparameters(C=2)))
    assert s.num_records == (M - burn) // thin


def test_determinism_and_seed_sensitivity():
    R = _data()
    X = CovariateTable.continuous(np.arange(10.0))
    cfg = RunConfig(M=200, burn_in=20, seed=5, hyper=Hyperparameters(C=2, similarity=GofParams()))
    _samples_equal(run_bmmx(R, X, cfg), run_bmmx(R, X, cfg))
    other = run_bmmx(R, X, RunConfig(M=200, burn_in=20, seed=6, hyper=cfg.hyper))
    assert not np.array_equal(other.rho, run_bmmx(R, X, cfg).rho)


def test_alpha_never_updated_when_jump_equals_m():
    cfg = RunConfig(M=100, burn_in=0, hyper=Hyperparameters(C=2, alpha_jump=100))
    s = run_bmmx(_data(), None, cfg)
    assert np.all(s.alpha == s.alpha[0])
    assert s.acceptance_report()["alpha"] is None


def test_all_accept_alpha_chain():
    cfg = RunConfig(M=60, burn_in=0, hyper=Hyperparameters(alpha_jump=1, sigma_alpha=1e-300))
    s = run_bmmx(_data(), None, cfg)
    assert s.acceptance_report()["alpha"] == 1.0


def test_recorded_states_are_valid():
    R = _data(5, 12)
    hyper = Hyperparameters(C=3, similarity=GofParams())
    s = run_bmmx(R, CovariateTable.continuous(np.linspace(0, 1, 12)), RunConfig(M=300, burn_in=0, hyper=hyper))
    for r in range(s.num_records):
        assert all(is_permutation(p) for p in s.rho[r])
        assert np.all((s.alpha[r] > 0) & (s.alpha[r] <= hyper.alpha_max))
        assert abs(s.tau[r].sum() - 1) <= 1e-12 and np.all(s.tau[r] > 0)
        assert np.all((s.z[r] >= 0) & (s.z[r] < 3))
    assert all(0 <= v <= 1 for v in s.acceptance_report().values() if v is not None)


def test_ergodicity_smoke():
    s = run_bmmx(_data(3, 5), None, RunConfig(M=10_000, burn_in=0, fixed_alpha=1.0))
    assert len(set(_key(s.rho[:, 0]))) == 6


def test_single_cluster_exactness_n3():
    R = _data(3, 8, seed=3)
    s = run_bmmx(R, None, RunConfig(M=60_000, burn_in=2_000, seed=1, fixed_alpha=2.0))
    pmf = {}
    for p in oracles.perms(3):
        pmf[p] = math.exp(-2.0 / 3 * sum(oracles.footrule(r, p) for r in R))
    tot = sum(pmf.values())
    pmf = {k: v / tot for k, v in pmf.items()}
    assert _tv(_key(s.rho[:, 0]), pmf) <= 0.05


def test_mixture_matches_exhaustive_posterior():
    # n=3, N=3, C=2 with fixed alpha and tau: enumerate all 6*6*8 states
    R = np.array([[1, 2, 3], [3, 2, 1], [1, 3, 2]])
    alpha, tau = [1.0, 2.0], [0.4, 0.6]
    post = {}
    for r1, r2 in itertools.product(oracles.perms(3), repeat=2):
        for z in itertools.product(range(2), repeat=3):
            rho = (r1, r2)
            lp = sum(math.log(tau[c]) - alpha[c] / 3 * oracles.footrule(R[j], rho[c]) - oracles.log_z(alpha[c], 3, "footrule")
                     for j, c in enumerate(z))
            post[(r1, r2, z)] = math.exp(lp)
    tot = sum(post.values())
    z_marg, rho_marg = {}, {}
    for (r1, r2, z), v in post.items():
        z_marg[z] = z_marg.get(z, 0) + v / tot
        rho_marg[r1] = rho_marg.get(r1, 0) + v / tot
    cfg = RunConfig(M=60_000, burn_in=2_000, seed=4, hyper=Hyperparameters(C=2), fixed_alpha=alpha, fixed_tau=tau)
    s = run_bmmx(R, None, cfg)
    assert _tv([tuple(int(v) for v in z) for z in s.z], z_marg) <= 0.05
    assert _tv(_key(s.rho[:, 0]), rho_marg) <= 0.05


def test_partial_chain_consistency_and_unobserved_assessor():
    obs = np.array([[1, 2, 3], [0, 1, 0], [0, 0, 0], [3, 0, 1]])
    cfg = RunConfig(M=40_000, burn_in=1_000, seed=2, fixed_alpha=1.5, fixed_rho=((2, 3, 1),))
    s = run_bmmx_partial(obs, None, cfg)
    for r in range(s.num_records):
        assert consistent_rows(s.augmented[r], obs).all()
    # the fully missing assessor follows Mallows((2,3,1), 1.5)
    pmf = oracles.mallows_pmf((2, 3, 1), 1.5)
    assert _tv(_key(s.augmented[:, 2]), pmf) <= 0.03
    assert s.acceptance_report()["augmentation"] is not None


def test_partial_with_full_data_skips_augmentation():
    R = _data(4, 6)
    s = run_bmmx_partial(R, None, RunConfig(M=50, burn_in=0, hyper=Hyperparameters(C=2)))
    assert s.augmented is None and "augmentation" not in s.accept


def test_input_errors():
    with pytest.raises(ValueError):
        run_bmmx(np.array([[1, 1, 2]]), None, RunConfig(M=5, burn_in=0))
    with pytest.raises(ValueError):
        run_bmmx(_data(), CovariateTable.continuous(np.arange(3.0)), RunConfig(M=5, burn_in=0))
    with pytest.raises(ValueError, match="row 1"):
        run_bmmx_partial(np.array([[1, 1, 0]]), None, RunConfig(M=5, burn_in=0))
    with pytest.raises(ValueError):
        run_bmmx(_data(12, 3), None, RunConfig(M=5, burn_in=0))  # no exact Z for footrule at n=12 by default


def test_memory_cap_raises_thin():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        s = run_bmmx(_data(), None, RunConfig(M=400, burn_in=0, memory_cap=1000))
    assert s.meta["thin"] > 1 and any("thinning" in str(x.message) for x in w)
    assert s.num_records * (10 + 4 + 2) <= 1000


def test_chains_use_offset_seeds():
    R = _data()
    cfg = RunConfig(M=80, burn_in=0, seed=10, num_chains=2, hyper=Hyperparameters(C=2))
    chains = run_chains(R, None, cfg)
    assert [c.chain for c in chains] == [0, 1]
    _samples_equal(chains[1], run_bmmx(R, None, cfg, chain=1))


@pytest.mark.parametrize("partial", [False, True])
def test_serialisation_roundtrip(tmp_path, partial):
    R = _data(5, 7)
    if partial:
        R[:3, 2:] = 0
    cfg = RunConfig(M=60, burn_in=10, thin=2, seed=3, num_chains=2, hyper=Hyperparameters(C=2))
    chains = run_chains(R, None, cfg)
    write_samples_csv(tmp_path / "s.csv", chains)
    write_samples_binary(tmp_path / "s.bin", chains)
    for back in (read_samples_csv(tmp_path / "s.csv"), read_samples_binary(tmp_path / "s.bin")):
        assert len(back) == 2
        for a, b in zip(chains, back):
            _samples_equal(a, b)
    header = (tmp_path / "s.csv").read_text().splitlines()
    assert header[0].startswith("# bmmx samples seed=3")
    assert "iteration,chain,param,cluster,index,value" in header


def test_binary_rejects_foreign_file(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"nope")
    with pytest.raises(ValueError):
        read_samples_binary(tmp_path / "x.bin")
