"""Summaries of raw (not relabelled) chains.

Cluster labels are not aligned across iterations or chains, so summaries of
a mixture are only meaningful when the chain did not switch labels.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .ranks import as_metric, distances
from .sampler import PosteriorSamples


@dataclass(frozen=True)
class AssignmentMatrix:
    probs: np.ndarray  # (N, C)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 2 or np.any(p < 0) or np.any(p > 1) or np.any(np.abs(p.sum(axis=1) - 1) > 1e-9):
            raise ValueError("assignment probabilities must be an N x C row-stochastic matrix")
        object.__setattr__(self, "probs", p)

    @property
    def N(self) -> int:
        return self.probs.shape[0]

    @property
    def C(self) -> int:
        return self.probs.shape[1]


def _pool(samples) -> list[PosteriorSamples]:
    chains = [samples] if isinstance(samples, PosteriorSamples) else list(samples)
    if not chains or sum(s.num_records for s in chains) == 0:
        raise ValueError("no retained samples to summarise")
    return chains


def assignment_probs(samples) -> AssignmentMatrix:
    """Fraction of retained iterations in which each assessor sits in each cluster."""
    chains = _pool(samples)
    C = chains[0].C
    z = np.concatenate([s.z for s in chains]).astype(np.int64)
    R, N = z.shape
    counts = np.zeros((N, C), dtype=np.int64)
    for c in range(C):
        counts[:, c] = (z == c).sum(axis=0)
    return AssignmentMatrix(counts / R)


def map_clustering(probs: AssignmentMatrix | np.ndarray) -> np.ndarray:
    """Per-assessor most probable cluster (0-based); ties go to the smallest index."""
    p = probs.probs if isinstance(probs, AssignmentMatrix) else np.asarray(probs)
    return np.argmax(p, axis=1)


def elbow(samples, rankings=None, metric="footrule") -> np.ndarray:
    """Within-cluster distance sum Σ_c Σ_{j: z_j=c} d(R_j, ρ_c) per retained iteration.

    With ``rankings=None`` the stored augmented rankings are used.
    """
    metric = as_metric(metric)
    out = []
    for s in _pool(samples):
        for r in range(s.num_records):
            R = s.augmented[r] if rankings is None else np.asarray(rankings)
            if R is None:
                raise ValueError("no rankings given and the chain stores no augmented rankings")
            rho_j = s.rho[r][s.z[r].astype(np.int64)]
            out.append(int(distances(R, rho_j, metric).sum()))
    return np.array(out, dtype=np.int64)


def top_k_probs(samples, k: int) -> list[list[tuple[int, float]]]:
    """Per cluster, ``(item, P(rank <= k))`` sorted by probability; items are 0-based."""
    chains = _pool(samples)
    n = chains[0].n
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in 1..{n}")
    rho = np.concatenate([s.rho for s in chains])
    prob = (rho <= k).mean(axis=0)  # (C, n)
    out = []
    for c in range(prob.shape[0]):
        order = np.lexsort((np.arange(n), -prob[c]))
        out.append([(int(i), float(prob[c, i])) for i in order])
    return out


def cp_consensus(samples) -> np.ndarray:
    """Cumulative-probability consensus orderings, shape (C, n), 0-based items.

    Position r holds the unassigned item with the largest P(rank <= r);
    ties go to the smallest item index.
    """
    chains = _pool(samples)
    rho = np.concatenate([s.rho for s in chains]).astype(np.int64)
    _, C, n = rho.shape
    out = np.empty((C, n), dtype=np.int64)
    for c in range(C):
        cum = np.stack([(rho[:, c, :] <= r).mean(axis=0) for r in range(1, n + 1)])  # (n ranks, n items)
        free = np.ones(n, dtype=bool)
        for r in range(n):
            score = np.where(free, cum[r], -1.0)
            item = int(np.argmax(score))
            out[c, r] = item
            free[item] = False
    return out


def cp_consensus_ranks(samples) -> np.ndarray:
    """CP consensus as rank vectors (C, n)."""
    orders = cp_consensus(samples)
    ranks = np.empty_like(orders)
    for c, o in enumerate(orders):
        ranks[c, o] = np.arange(1, o.size + 1)
    return ranks


def contingency(labels_a, labels_b, C_a: int | None = None, C_b: int | None = None) -> np.ndarray:
    """Cross-tabulation of two 0-based labelings."""
    a = np.asarray(labels_a, dtype=np.int64)
    b = np.asarray(labels_b, dtype=np.int64)
    if a.shape != b.shape:
        raise ValueError(f"label vectors differ in length: {a.size} vs {b.size}")
    C_a = int(a.max()) + 1 if C_a is None else C_a
    C_b = int(b.max()) + 1 if C_b is None else C_b
    table = np.zeros((C_a, C_b), dtype=np.int64)
    np.add.at(table, (a, b), 1)
    return table


# --------------------------------------------------------------------------
# CSV exports (1-based labels and items)

def _open(path, header_comment: str | None):
    fh = open(path, "w", newline="")
    if header_comment:
        fh.write(f"# {header_comment}\n")
    return fh, csv.writer(fh, lineterminator="\n")


def write_assignment_csv(path, probs: AssignmentMatrix, header_comment: str | None = None) -> None:
    """Long format ``assessor,cluster,probability`` (N*C rows)."""
    fh, w = _open(path, header_comment)
    with fh:
        w.writerow(["assessor", "cluster", "probability"])
        for j in range(probs.N):
            for c in range(probs.C):
                w.writerow([j + 1, c + 1, repr(float(probs.probs[j, c]))])


def write_map_csv(path, labels, header_comment: str | None = None) -> None:
    fh, w = _open(path, header_comment)
    with fh:
        w.writerow(["assessor", "cluster"])
        for j, c in enumerate(labels):
            w.writerow([j + 1, int(c) + 1])


def write_elbow_csv(path, values, C: int, header_comment: str | None = None) -> None:
    fh, w = _open(path, header_comment)
    with fh:
        w.writerow(["C", "sample", "distance_sum"])
        for i, v in enumerate(values):
            w.writerow([C, i + 1, int(v)])


def write_top_k_csv(path, table, k: int, header_comment: str | None = None) -> None:
    fh, w = _open(path, header_comment)
    with fh:
        w.writerow(["cluster", "item", "k", "probability"])
        for c, rows in enumerate(table):
            for item, p in rows:
                w.writerow([c + 1, item + 1, k, repr(p)])


def write_cp_csv(path, orders, header_comment: str | None = None) -> None:
    fh, w = _open(path, header_comment)
    with fh:
        w.writerow(["cluster", "position", "item"])
        for c, o in enumerate(orders):
            for r, item in enumerate(o):
                w.writerow([c + 1, r + 1, int(item) + 1])


def write_contingency_csv(path, table, header_comment: str | None = None) -> None:
    fh, w = _open(path, header_comment)
    with fh:
        w.writerow(["row_cluster", "col_cluster", "count"])
        for a in range(table.shape[0]):
            for b in range(table.shape[1]):
                w.writerow([a + 1, b + 1, int(table[a, b])])
