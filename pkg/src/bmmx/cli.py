"""Command-line interface: ``bmmx simulate | fit | summarize | benchmark | ztable``.

Every command reads an optional flat ``key = value`` manifest (``--manifest``)
with ``--set key=value`` overrides. Exit status is 0 on success, 1 for usage
or input errors and 2 for runtime failures.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io as bio
from .benchmark import BenchmarkConfig, run_benchmark, write_results
from .datagen import SimConfig, p_hat, simulate
from .model import Hyperparameters
from .partition import DistanceFrequencyTable, footrule_table_dp, kendall_table_dp, resolve_partition_function
from .posterior import (
    assignment_probs,
    contingency,
    cp_consensus,
    elbow,
    map_clustering,
    top_k_probs,
    write_assignment_csv,
    write_contingency_csv,
    write_cp_csv,
    write_elbow_csv,
    write_map_csv,
    write_top_k_csv,
)
from .ranks import MISSING
from .sampler import (
    RunConfig,
    read_samples_binary,
    read_samples_csv,
    run_chains,
    write_samples_binary,
    write_samples_csv,
)
from .similarity import AugmentedParams, CovariateTable, GofParams

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# --------------------------------------------------------------------------
# manifest keys and their defaults

HYPER_KEYS = {
    "C": "1", "metric": "footrule", "lambda": "0.1", "alpha_max": "20", "psi": "10", "sigma_alpha": "0.1",
    "alpha_jump": "10", "leap": "1", "similarity": "none", "theta": "1", "gamma": "1", "c1": "0.5",
    "c2": "10", "phi": "1", "aug_variant": "main", "z_conditional": "paper",
}
RUN_KEYS = {
    "M": "10000", "burn_in": "1000", "thin": "1", "seed": "0", "num_chains": "1", "fixed_alpha": "",
    "store_augmented": "true",
}
Z_KEYS = {"z_source": "auto", "z_table": "", "z_grid": "", "z_grid_samples": "1000000", "z_grid_points": "200"}
FIT_KEYS = {
    "rankings": "", "covariates": "", "covariate_schema": "", "missing_token": "", "delimiter": ",",
    "output": ".", "binary": "false", **HYPER_KEYS, **RUN_KEYS, **Z_KEYS,
}
SIM_KEYS = {
    "n": "20", "N": "90", "C": "3", "s": "3", "d_rho": "6", "d_x": "2", "alpha": "5", "sigma_cov": "1",
    "K_cont": "3", "categorical": "", "cluster_sizes": "", "covariate_labels": "truth", "metric": "footrule",
    "seed": "0", "output": ".",
}
BENCH_KEYS = {
    **{k: v for k, v in SIM_KEYS.items() if k not in ("d_rho", "d_x")}, **HYPER_KEYS,
    "C": "3", "s": "4", "d_rho": "6,10", "d_x": "2,6,10", "replicates": "10", "methods": "bmm,gof",
    "M": "10000", "burn_in": "1000", "thin": "1", "output": "benchmark.csv",
}
SUMMARY_KEYS = {"samples": "", "rankings": "", "truth": "", "k": "10", "output": ".", "missing_token": ""}
ZTABLE_KEYS = {"n": "", "metric": "footrule", "z_source": "table", "alpha_max": "20",
               "z_grid_samples": "1000000", "z_grid_points": "200", "seed": "0", "output": ""}


def _settings(args, defaults: dict[str, str]) -> tuple[dict[str, str], Path]:
    base = Path(".")
    given: dict[str, str] = {}
    if args.manifest:
        try:
            given = bio.load_manifest(args.manifest)
        except OSError as exc:
            raise UsageError(f"cannot read manifest: {exc}") from None
        base = Path(args.manifest).parent
    given = bio.apply_overrides(given, args.set)
    if getattr(args, "out", None):
        given["output"] = args.out
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise UsageError(f"unknown manifest key(s): {', '.join(unknown)}")
    return {**defaults, **given}, base


def _int(s, key):
    try:
        return int(s[key])
    except ValueError:
        raise UsageError(f"{key} must be an integer, got {s[key]!r}") from None


def _float(s, key):
    try:
        return float(s[key])
    except ValueError:
        raise UsageError(f"{key} must be a number, got {s[key]!r}") from None


def _bool(s, key):
    v = s[key].lower()
    if v not in ("true", "false", "1", "0", "yes", "no"):
        raise UsageError(f"{key} must be true or false")
    return v in ("true", "1", "yes")


def _list(s, key, cast):
    try:
        return tuple(cast(x) for x in s[key].split(",") if x.strip())
    except ValueError:
        raise UsageError(f"{key} must be a comma-separated list, got {s[key]!r}") from None


def _similarity(s):
    kind = s["similarity"]
    if kind == "none":
        return None
    if kind == "gof":
        return GofParams(theta=_float(s, "theta"), gamma=_float(s, "gamma"))
    if kind == "augmented":
        return AugmentedParams(c1=_float(s, "c1"), c2=_float(s, "c2"), phi=_float(s, "phi"), variant=s["aug_variant"])
    raise UsageError(f"similarity must be none, gof or augmented, got {kind!r}")


def _hyper(s) -> Hyperparameters:
    try:
        return Hyperparameters(
            C=_int(s, "C"), metric=s["metric"], lam=_float(s, "lambda"), alpha_max=_float(s, "alpha_max"),
            psi=_float(s, "psi"), sigma_alpha=_float(s, "sigma_alpha"), alpha_jump=_int(s, "alpha_jump"),
            leap=_int(s, "leap"), similarity=_similarity(s), z_conditional=s["z_conditional"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _header(cmd: str, s: dict[str, str], seed) -> str:
    # the output location does not change results, so it is left out of the hash
    keyed = {k: v for k, v in s.items() if k != "output"}
    return f"bmmx {cmd} seed={seed} config_hash={bio.manifest_hash(keyed)}"


def _outdir(s) -> Path:
    out = Path(s["output"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# commands

def cmd_simulate(args) -> int:
    s, _ = _settings(args, SIM_KEYS)
    try:
        sizes = _list(s, "cluster_sizes", int) or None
        cfg = SimConfig(
            n=_int(s, "n"), N=_int(s, "N"), C=_int(s, "C"), s=_int(s, "s"), d_rho=_int(s, "d_rho"),
            d_x=_float(s, "d_x"), alpha_true=_float(s, "alpha"), sigma_cov=_float(s, "sigma_cov"),
            cluster_sizes=sizes, seed=_int(s, "seed"), K_cont=_int(s, "K_cont"),
            categorical_scenarios=_list(s, "categorical", int), metric=s["metric"],
            covariate_labels=s["covariate_labels"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ds = simulate(cfg)
    out = _outdir(s)
    head = _header("simulate", s, cfg.seed)
    bio.write_rankings(out / "rankings.csv", ds.rankings, head)
    bio.write_covariates(out / "covariates.csv", ds.covariates, head)
    bio.write_labels(out / "truth.csv", ds.true_labels, head)
    bio.write_rankings(out / "consensus.csv", ds.true_consensus, head)
    (out / "simulate.manifest").write_text(f"# {head}\n" + bio.format_manifest(s))
    print(f"wrote {cfg.N} rankings of {cfg.n} items to {out}")
    return EXIT_OK


def _fit_inputs(s, base: Path):
    if not s["rankings"]:
        raise UsageError("manifest must set 'rankings'")
    rpath = bio.resolve_path(base, s["rankings"])
    if not os.path.exists(rpath):
        raise UsageError(f"rankings file not found: {rpath}")
    try:
        data = bio.load_rankings(bio.RankingFileSpec(rpath, s["delimiter"], s["missing_token"]))
        R = bio.rankings_array(data)
        if s["covariates"]:
            cpath = bio.resolve_path(base, s["covariates"])
            spath = bio.resolve_path(base, s["covariate_schema"]) if s["covariate_schema"] else None
            for p in (cpath, spath or bio.CovariateFileSpec(cpath).schema_path):
                if not os.path.exists(p):
                    raise UsageError(f"covariate file not found: {p}")
            X = bio.load_covariates(bio.CovariateFileSpec(cpath, spath, s["delimiter"], s["missing_token"]))
        else:
            X = CovariateTable.empty(R.shape[0])
    except bio.InputError as exc:
        raise UsageError(str(exc)) from None
    return R, X


def cmd_fit(args) -> int:
    s, base = _settings(args, FIT_KEYS)
    R, X = _fit_inputs(s, base)
    hyper = _hyper(s)
    if hyper.similarity is not None and X.K == 0:
        raise UsageError("a similarity family is set but no covariates were given")
    fixed = s["fixed_alpha"]
    try:
        run = RunConfig(
            M=_int(s, "M"), burn_in=_int(s, "burn_in"), thin=_int(s, "thin"), seed=_int(s, "seed"),
            num_chains=_int(s, "num_chains"), hyper=hyper, fixed_alpha=float(fixed) if fixed else None,
            store_augmented=_bool(s, "store_augmented"),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    n = R.shape[1]
    out = _outdir(s)
    grid_path = bio.resolve_path(base, s["z_grid"]) if s["z_grid"] else None
    if s["z_source"] == "grid" and grid_path is None:
        grid_path = str(out / f"logz_grid_{hyper.metric.value}_n{n}.csv")
    try:
        logz = resolve_partition_function(
            n, hyper.metric, s["z_source"], alpha_max=hyper.alpha_max,
            table_path=bio.resolve_path(base, s["z_table"]) if s["z_table"] else None,
            grid_path=grid_path, grid_samples=_int(s, "z_grid_samples"),
            grid_points=_int(s, "z_grid_points"), seed=run.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if (R == MISSING).any():
        rows = np.flatnonzero((R == MISSING).any(axis=1))
        print(f"{rows.size} partial ranking(s): latent ranks are augmented")
    chains = run_chains(R, X, run, logz)
    head = _header("fit", s, run.seed)
    write_samples_csv(out / "samples.csv", chains)
    if _bool(s, "binary"):
        write_samples_binary(out / "samples.bin", chains)
    with open(out / "acceptance.csv", "w", newline="") as fh:
        fh.write(f"# {head}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chain", "param", "accepted", "proposed", "rate"])
        for ch in chains:
            rates = ch.acceptance_report()
            for k, (a, p) in ch.accept.items():
                w.writerow([ch.chain + 1, k, a, p, "" if rates[k] is None else repr(rates[k])])
    (out / "fit.manifest").write_text(f"# {head}\n" + bio.format_manifest(s))
    for ch in chains:
        rates = {k: ("n/a" if v is None else f"{v:.3f}") for k, v in ch.acceptance_report().items()}
        print(f"chain {ch.chain + 1}: {ch.num_records} records, acceptance {rates}")
    return EXIT_OK


def cmd_summarize(args) -> int:
    s, base = _settings(args, SUMMARY_KEYS)
    if not s["samples"]:
        raise UsageError("set 'samples' (a samples.csv or samples.bin file)")
    path = bio.resolve_path(base, s["samples"])
    if not os.path.exists(path):
        raise UsageError(f"samples file not found: {path}")
    chains = read_samples_binary(path) if path.endswith(".bin") else read_samples_csv(path)
    meta = chains[0].meta
    s_hash = {**s, "samples_config_hash": meta["config_hash"]}
    head = _header("summarize", s_hash, meta["seed"])
    out = _outdir(s)
    probs = assignment_probs(chains)
    labels = map_clustering(probs)
    write_assignment_csv(out / "assignment.csv", probs, head)
    write_map_csv(out / "map.csv", labels, head)
    k = min(_int(s, "k"), chains[0].n)
    write_top_k_csv(out / "top_k.csv", top_k_probs(chains, k), k, head)
    write_cp_csv(out / "cp_consensus.csv", cp_consensus(chains), head)
    rankings = None
    if s["rankings"]:
        try:
            data = bio.load_rankings(bio.RankingFileSpec(bio.resolve_path(base, s["rankings"]), missing=s["missing_token"]))
        except bio.InputError as exc:
            raise UsageError(str(exc)) from None
        rankings = bio.rankings_array(data)
        if (rankings == MISSING).any():
            rankings = None  # fall back to the stored augmented rankings
    if rankings is not None or all(c.augmented is not None for c in chains):
        write_elbow_csv(out / "elbow.csv", elbow(chains, rankings, meta["metric"]), meta["C"], head)
    if s["truth"]:
        truth = bio.load_labels(bio.resolve_path(base, s["truth"]))
        C = max(meta["C"], int(truth.max()) + 1)
        write_contingency_csv(out / "contingency.csv", contingency(labels, truth, C, C), head)
        print(f"p_hat = {p_hat(labels, truth, C):.4f}")
    print(f"summaries of {sum(c.num_records for c in chains)} records written to {out}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    s, _ = _settings(args, BENCH_KEYS)
    try:
        hyper = _hyper(s)
        sim = SimConfig(
            n=_int(s, "n"), N=_int(s, "N"), C=_int(s, "C"), s=_int(s, "s"), alpha_true=_float(s, "alpha"),
            sigma_cov=_float(s, "sigma_cov"), cluster_sizes=_list(s, "cluster_sizes", int) or None,
            K_cont=_int(s, "K_cont"), categorical_scenarios=_list(s, "categorical", int), metric=s["metric"],
            covariate_labels=s["covariate_labels"],
        )
        cfg = BenchmarkConfig(
            d_rho=_list(s, "d_rho", int), d_x=_list(s, "d_x", float), replicates=_int(s, "replicates"),
            methods=_list(s, "methods", str.strip), theta=_list(s, "theta", float), gamma=_list(s, "gamma", float),
            c1=_list(s, "c1", float), c2=_float(s, "c2"), phi=_list(s, "phi", float), sim=sim,
            hyper=replace(hyper, similarity=None), M=_int(s, "M"), burn_in=_int(s, "burn_in"),
            thin=_int(s, "thin"), seed=_int(s, "seed"),
        )
        RunConfig(M=cfg.M, burn_in=cfg.burn_in, thin=cfg.thin)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = run_benchmark(cfg)
    out = Path(s["output"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_results(out, rows, _header("benchmark", s, cfg.seed))
    print(f"wrote {len(rows)} result rows to {out}")
    return EXIT_OK


def cmd_ztable(args) -> int:
    s, _ = _settings(args, ZTABLE_KEYS)
    if not s["n"] or not s["output"]:
        raise UsageError("ztable needs n and output")
    n = _int(s, "n")
    head = _header("ztable", s, s["seed"])
    if s["z_source"] == "table":
        if s["metric"] == "footrule":
            table: DistanceFrequencyTable = footrule_table_dp(n)
        elif s["metric"] == "kendall":
            table = kendall_table_dp(n)
        else:
            raise UsageError("exact tables for large n exist for footrule and kendall; use z_source = grid")
        table.write(s["output"])
    elif s["z_source"] == "grid":
        pf = resolve_partition_function(n, s["metric"], "grid", alpha_max=_float(s, "alpha_max"),
                                        grid_samples=_int(s, "z_grid_samples"),
                                        grid_points=_int(s, "z_grid_points"), seed=_int(s, "seed"))
        pf.grid.write(s["output"])
    else:
        raise UsageError("ztable z_source must be table or grid")
    text = Path(s["output"]).read_text()
    Path(s["output"]).write_text(f"# {head}\n" + text)
    print(f"wrote log Z data for n={n} ({s['metric']}) to {s['output']}")
    return EXIT_OK


COMMANDS = {
    "simulate": (cmd_simulate, "generate a synthetic clustered dataset"),
    "fit": (cmd_fit, "run the MCMC sampler"),
    "summarize": (cmd_summarize, "write posterior summaries of a fit"),
    "benchmark": (cmd_benchmark, "compare clustering accuracy with and without covariates"),
    "ztable": (cmd_ztable, "precompute a distance table or log Z grid"),
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bmmx", description="Bayesian Mallows mixtures with assessor covariates.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--manifest", "-m", help="flat 'key = value' run description")
        sp.add_argument("--set", "-s", action="append", metavar="KEY=VALUE", help="override a manifest key")
        sp.add_argument("--out", "-o", help="output directory (output file for benchmark and ztable)")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command][0](args)
    except UsageError as exc:
        print(f"bmmx: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except bio.InputError as exc:
        print(f"bmmx: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - one-line diagnostic for any runtime failure
        print(f"bmmx: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
