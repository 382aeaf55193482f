"""File formats: rankings, covariates with a schema sidecar, truth labels and run manifests.

All files are comma-separated text. Lines starting with ``#`` are comments.
Items, assessors, cluster labels and categorical levels are 1-based on disk.
"""
from __future__ import annotations

import csv
import hashlib
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ranks import MISSING, PartialRanking, check_rankings
from .similarity import CATEGORICAL, CONTINUOUS, CovariateTable


class InputError(ValueError):
    """Malformed input file or manifest (reported as a usage error by the CLI)."""


@dataclass(frozen=True)
class RankingFileSpec:
    path: str
    delimiter: str = ","
    missing: str = ""
    header: bool = False


@dataclass(frozen=True)
class CovariateFileSpec:
    path: str
    schema: str | None = None  # defaults to <path stem>.schema.csv
    delimiter: str = ","
    missing: str = ""

    @property
    def schema_path(self) -> str:
        if self.schema:
            return self.schema
        p = Path(self.path)
        return str(p.with_name(p.stem + ".schema.csv"))


def _rows(path, delimiter: str):
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    return list(csv.reader(lines, delimiter=delimiter))


def load_rankings(spec: RankingFileSpec | str):
    """Rankings, one assessor per row, one item per column.

    Returns an ``(N, n)`` array of complete rankings, or a list of
    :class:`PartialRanking` when any cell holds the missing token.
    """
    if isinstance(spec, str):
        spec = RankingFileSpec(spec)
    rows = _rows(spec.path, spec.delimiter)
    if spec.header:
        rows = rows[1:]
    if not rows:
        raise InputError(f"{spec.path}: no rankings")
    n = len(rows[0])
    out = np.zeros((len(rows), n), dtype=np.int64)
    for i, row in enumerate(rows, start=1):
        if len(row) != n:
            raise InputError(f"{spec.path}: row {i} has {len(row)} columns, expected {n}")
        seen: dict[int, int] = {}
        for k, cell in enumerate(row, start=1):
            cell = cell.strip()
            if cell == spec.missing:
                continue
            try:
                v = int(cell)
            except ValueError:
                raise InputError(f"{spec.path}: row {i}, column {k}: {cell!r} is not an integer") from None
            if not 1 <= v <= n:
                raise InputError(f"{spec.path}: rank {v} out of range 1..{n} in row {i}, column {k}")
            if v in seen:
                raise InputError(f"{spec.path}: duplicate rank {v} in row {i} (columns {seen[v]} and {k})")
            seen[v] = k
            out[i - 1, k - 1] = v
    if (out == MISSING).any():
        return [PartialRanking(r) for r in out]
    return check_rankings(out)


def rankings_array(data) -> np.ndarray:
    """Stack complete rankings or PartialRankings into an array with 0 for missing."""
    if isinstance(data, np.ndarray):
        return data
    return np.array([p.observed if isinstance(p, PartialRanking) else p for p in data], dtype=np.int64)


def load_covariates(spec: CovariateFileSpec | str) -> CovariateTable:
    """Covariate CSV with a header of column names plus a ``column,kind`` schema.

    ``kind`` is ``continuous`` or ``categorical:B``; categorical cells hold
    levels 1..B. Empty cells become NaN.
    """
    if isinstance(spec, str):
        spec = CovariateFileSpec(spec)
    schema_rows = _rows(spec.schema_path, ",")
    if schema_rows and [c.strip() for c in schema_rows[0]] == ["column", "kind"]:
        schema_rows = schema_rows[1:]
    schema = {}
    for name, kind in schema_rows:
        kind = kind.strip()
        if kind == CONTINUOUS:
            schema[name.strip()] = (CONTINUOUS, 0)
        elif kind.startswith(CATEGORICAL + ":"):
            try:
                B = int(kind.split(":", 1)[1])
            except ValueError:
                raise InputError(f"{spec.schema_path}: bad kind {kind!r}") from None
            schema[name.strip()] = (CATEGORICAL, B)
        else:
            raise InputError(f"{spec.schema_path}: kind must be 'continuous' or 'categorical:B', got {kind!r}")
    rows = _rows(spec.path, spec.delimiter)
    if not rows:
        raise InputError(f"{spec.path}: empty covariate file")
    names = [c.strip() for c in rows[0]]
    missing = [c for c in names if c not in schema]
    if missing:
        raise InputError(f"{spec.schema_path}: schema does not cover column(s) {', '.join(missing)}")
    body = rows[1:]
    vals = np.full((len(body), len(names)), np.nan)
    for i, row in enumerate(body, start=1):
        if len(row) != len(names):
            raise InputError(f"{spec.path}: row {i} has {len(row)} columns, expected {len(names)}")
        for k, cell in enumerate(row):
            cell = cell.strip()
            if cell == spec.missing:
                continue
            kind, B = schema[names[k]]
            try:
                v = float(cell)
            except ValueError:
                raise InputError(f"{spec.path}: row {i}, column {names[k]}: {cell!r} is not numeric") from None
            if kind == CATEGORICAL:
                if v != round(v) or not 1 <= v <= B:
                    raise InputError(f"{spec.path}: row {i}, column {names[k]}: {cell} outside categories 1..{B}")
                v -= 1
            elif not math.isfinite(v):
                raise InputError(f"{spec.path}: row {i}, column {names[k]}: {cell!r} is not finite")
            vals[i - 1, k] = v
    kinds = [schema[c][0] for c in names]
    levels = [schema[c][1] for c in names]
    return CovariateTable(vals, kinds, levels, names)


def _comment(fh, header_comment: str | None) -> None:
    if header_comment:
        fh.write(f"# {header_comment}\n")


def write_rankings(path, R, header_comment: str | None = None) -> None:
    R = rankings_array(R)
    with open(path, "w", newline="") as fh:
        _comment(fh, header_comment)
        for row in R:
            fh.write(",".join("" if v == MISSING else str(int(v)) for v in row) + "\n")


def write_covariates(path, table: CovariateTable, header_comment: str | None = None, schema_path=None) -> None:
    """Write the covariate CSV and its schema sidecar."""
    with open(path, "w", newline="") as fh:
        _comment(fh, header_comment)
        fh.write(",".join(table.names) + "\n")
        for row in table.values:
            cells = []
            for v, kind in zip(row, table.kinds):
                if np.isnan(v):
                    cells.append("")
                elif kind == CATEGORICAL:
                    cells.append(str(int(v) + 1))
                else:
                    cells.append(repr(float(v)))
            fh.write(",".join(cells) + "\n")
    schema_path = schema_path or CovariateFileSpec(str(path)).schema_path
    with open(schema_path, "w", newline="") as fh:
        _comment(fh, header_comment)
        fh.write("column,kind\n")
        for name, kind, B in zip(table.names, table.kinds, table.levels):
            fh.write(f"{name},{kind if kind == CONTINUOUS else f'{CATEGORICAL}:{B}'}\n")


def write_labels(path, labels, header_comment: str | None = None, column: str = "true_label") -> None:
    with open(path, "w", newline="") as fh:
        _comment(fh, header_comment)
        fh.write(f"assessor,{column}\n")
        for j, c in enumerate(labels, start=1):
            fh.write(f"{j},{int(c) + 1}\n")


def load_labels(path) -> np.ndarray:
    """0-based labels from an ``assessor,<label>`` file."""
    rows = _rows(path, ",")[1:]
    return np.array([int(r[1]) - 1 for r in rows], dtype=np.int64)


# --------------------------------------------------------------------------
# manifests

def parse_manifest(text: str, source: str = "<manifest>") -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for i, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{source}: line {i}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise InputError(f"{source}: line {i}: empty key")
        out[key] = value
    return out


def load_manifest(path) -> dict[str, str]:
    with open(path) as fh:
        return parse_manifest(fh.read(), str(path))


def apply_overrides(manifest: dict[str, str], overrides) -> dict[str, str]:
    out = dict(manifest)
    for item in overrides or ():
        if "=" not in item:
            raise InputError(f"override {item!r} must look like key=value")
        k, v = (p.strip() for p in item.split("=", 1))
        out[k] = v
    return out


def format_manifest(manifest: dict[str, str]) -> str:
    return "".join(f"{k} = {manifest[k]}\n" for k in sorted(manifest))


def manifest_hash(manifest: dict[str, str]) -> str:
    return hashlib.sha256(format_manifest(manifest).encode()).hexdigest()[:16]


def resolve_path(base: str | os.PathLike, value: str) -> str:
    p = Path(value)
    return str(p if p.is_absolute() else Path(base) / p)
