"""Retrieval metrics over a :class:`~fcoh.index.BinaryCodeTable`.

Rankings come from the table's (distance, id) order, so every number here is
reproducible bit for bit. A database item is relevant to a query when the two
share a label.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from fcoh.index import BinaryCodeTable

# Cutoffs used for the precision-at-K curves.
DEFAULT_KS = (1, 5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100)


@dataclass
class GroundTruth:
    query_labels: np.ndarray
    db_labels: np.ndarray

    def __post_init__(self):
        self.query_labels = np.asarray(self.query_labels, dtype=np.int64).reshape(-1)
        self.db_labels = np.asarray(self.db_labels, dtype=np.int64).reshape(-1)

    def relevant(self, i: int) -> np.ndarray:
        """Boolean relevance of each database item (table order) to query ``i``."""
        return self.db_labels == self.query_labels[i]


def average_precision(flags, n_relevant: int | None = None) -> float:
    """AP of one ranked list of relevance flags.

    ``n_relevant`` is the normalizer (all relevant items in the database, or
    ``min(R, K)`` for a truncated list); it defaults to the hits in ``flags``.
    Returns 0 when there is nothing relevant.
    """
    flags = np.asarray(flags, dtype=bool)
    if n_relevant is None:
        n_relevant = int(flags.sum())
    if n_relevant == 0:
        return 0.0
    hits = np.cumsum(flags)
    ranks = np.flatnonzero(flags) + 1
    return float((hits[flags] / ranks).sum() / n_relevant)


def _check_queries(queries, gt):
    queries = np.asarray(queries, dtype=np.uint64)
    if queries.ndim == 1:
        queries = queries.reshape(1, -1)
    if queries.shape[0] < 1:
        raise ValueError("need at least one query")
    if queries.shape[0] != len(gt.query_labels):
        raise ValueError(f"{queries.shape[0]} queries but {len(gt.query_labels)} query labels")
    return queries


def _mean(values) -> float:
    # Fixed left-to-right reduction so the mean does not depend on numpy's pairwise sum.
    total = 0.0
    for v in values:
        total += v
    return total / len(values)


def _query_scores(queries, table, gt, *, ks=(), cutoff=None, radius=None):
    """Single ranking pass per query; returns per-query metric lists."""
    queries = _check_queries(queries, gt)
    ks = list(ks)
    out = {"ap": [], "ap_cut": [], "radius": [], "pk": {k: [] for k in ks}}
    for i, q in enumerate(queries):
        rel = gt.relevant(i)
        order, dist = table.ranking(q)
        flags = rel[order]
        n_rel = int(rel.sum())
        out["ap"].append(average_precision(flags, n_rel))
        if cutoff is not None:
            out["ap_cut"].append(average_precision(flags[:cutoff], min(n_rel, cutoff)))
        if radius is not None:
            inside = dist <= radius
            found = int(inside.sum())
            out["radius"].append(int(flags[inside].sum()) / found if found else 0.0)
        if ks:
            hits = np.cumsum(flags)
            for k in ks:
                m = min(k, len(order))
                out["pk"][k].append(hits[m - 1] / m if m else 0.0)
    return out


def mean_ap(queries, table: BinaryCodeTable, gt: GroundTruth, cutoff: int | None = None) -> float:
    """Mean AP over the full ranking, or over the top ``cutoff`` with normalizer min(R, cutoff)."""
    if cutoff is not None and cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    scores = _query_scores(queries, table, gt, cutoff=cutoff)
    return _mean(scores["ap"] if cutoff is None else scores["ap_cut"])


def precision_at_radius(queries, table: BinaryCodeTable, gt: GroundTruth, radius: int = 2) -> float:
    """Mean precision inside the Hamming ball; an empty ball scores 0."""
    return _mean(_query_scores(queries, table, gt, radius=radius)["radius"])


def precision_at_h2(queries, table: BinaryCodeTable, gt: GroundTruth) -> float:
    return precision_at_radius(queries, table, gt, 2)


def _check_ks(ks):
    ks = list(ks)
    if not ks:
        raise ValueError("need at least one K")
    if min(ks) < 1:
        raise ValueError("K must be >= 1")
    return ks


def precision_at_k(queries, table: BinaryCodeTable, gt: GroundTruth, ks=DEFAULT_KS) -> list[tuple[int, float]]:
    """Mean fraction of relevant items among the top K, for each K.

    When the table holds fewer than K items the fraction is over what was returned.
    """
    ks = _check_ks(ks)
    pk = _query_scores(queries, table, gt, ks=ks)["pk"]
    return [(k, _mean(pk[k])) for k in ks]


def auc(curve) -> float:
    """Trapezoidal area under ``[(x, y), ...]`` divided by the x span."""
    pts = [(float(x), float(y)) for x, y in curve]
    if len(pts) < 2:
        raise ValueError("AUC needs at least two points")
    xs = [p[0] for p in pts]
    if any(b <= a for a, b in zip(xs, xs[1:])):
        raise ValueError("x values must be strictly increasing")
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        area += 0.5 * (y0 + y1) * (x1 - x0)
    return area / (xs[-1] - xs[0])


@dataclass
class EvalReport:
    stage: int
    samples_seen: int
    map: float
    precision_at_h2: float
    precision_at_k: list[tuple[int, float]]
    map_at: tuple[int, float] | None = None
    timings: dict[str, float] = field(default_factory=dict)

    def to_record(self) -> dict:
        """Deterministic part of the report, keys in a fixed order (timings excluded)."""
        return {
            "stage": self.stage,
            "samples_seen": self.samples_seen,
            "map": self.map,
            "map_at": None if self.map_at is None else {"k": self.map_at[0], "value": self.map_at[1]},
            "precision_at_h2": self.precision_at_h2,
            "precision_at_k": [{"k": k, "value": v} for k, v in self.precision_at_k],
            "map_at_truncation": "min(R,K)",
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record())

    def timing_record(self) -> dict:
        return {"stage": self.stage, "samples_seen": self.samples_seen, **self.timings}

    @classmethod
    def from_record(cls, rec: dict) -> "EvalReport":
        m = rec.get("map_at")
        return cls(
            stage=rec["stage"],
            samples_seen=rec["samples_seen"],
            map=rec["map"],
            precision_at_h2=rec["precision_at_h2"],
            precision_at_k=[(p["k"], p["value"]) for p in rec["precision_at_k"]],
            map_at=None if m is None else (m["k"], m["value"]),
        )


def evaluate(queries, table: BinaryCodeTable, gt: GroundTruth, *, stage: int = 0, samples_seen: int = 0,
             ks=DEFAULT_KS, map_cutoff: int | None = None) -> EvalReport:
    """Compute every retrieval metric for one stage with one ranking per query."""
    ks = _check_ks(ks)
    scores = _query_scores(queries, table, gt, ks=ks, cutoff=map_cutoff, radius=2)
    return EvalReport(
        stage=stage,
        samples_seen=samples_seen,
        map=_mean(scores["ap"]),
        map_at=None if map_cutoff is None else (map_cutoff, _mean(scores["ap_cut"])),
        precision_at_h2=_mean(scores["radius"]),
        precision_at_k=[(k, _mean(scores["pk"][k])) for k in ks],
    )
