"""Retrieval metrics: truncated mean average precision and recall at k.

Queries are captions and the gallery is audio (text-to-audio retrieval),
so a similarity matrix with audio on rows and captions on columns is
scored column by column.  Relevance arrives as data, one ordered id list
per query whose first entry is the query's own paired item; "multiple"
mode scores against the full list, "single" mode against that first
entry only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import as_matrix
from .errors import ConfigError, ContractError, DataError

MODES = ("multiple", "single")
METRIC_KEYS = ("map_at_10", "map_at_16", "r_at_1", "r_at_5", "r_at_10")


@dataclass(frozen=True)
class RelevanceMap:
    """Ordered relevant gallery ids per query; entry 0 is the paired item."""

    entries: tuple

    def __post_init__(self):
        normalized = []
        for q, ids in enumerate(self.entries):
            ids = tuple(int(i) for i in ids)
            if not ids:
                raise DataError(f"query {q} has no relevant items")
            if any(i < 0 for i in ids):
                raise DataError(f"query {q} lists a negative gallery id")
            if len(set(ids)) != len(ids):
                raise DataError(f"query {q} lists a gallery id twice")
            normalized.append(ids)
        object.__setattr__(self, "entries", tuple(normalized))

    def __len__(self):
        return len(self.entries)

    def max_id(self):
        return max(max(ids) for ids in self.entries)


@dataclass(frozen=True)
class MetricsReport:
    """Mean retrieval metrics over all queries."""

    map_at_10: float
    map_at_16: float
    r_at_1: float
    r_at_5: float
    r_at_10: float
    query_count: int

    def __post_init__(self):
        for key in METRIC_KEYS:
            v = getattr(self, key)
            if not 0.0 <= v <= 1.0:
                raise ContractError(f"{key} must be in [0, 1], got {v}")
        if not self.r_at_1 <= self.r_at_5 <= self.r_at_10:
            raise ContractError("recall must be monotone in k")
        if self.query_count < 1:
            raise ContractError("query_count must be >= 1")

    def as_dict(self):
        d = {key: getattr(self, key) for key in METRIC_KEYS}
        d["query_count"] = self.query_count
        return d


def rank_gallery(scores):
    """Gallery indices in descending score order, ties by ascending index."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1:
        raise ContractError(f"scores must be 1-D, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise DataError("scores must be finite")
    return np.argsort(-s, kind="stable")


def average_precision_at_k(ranking, relevant, k):
    """Truncated AP: mean precision at each relevant hit in the top k.

    Normalized by min(|relevant|, k) so a perfect ranking scores 1 even
    when more relevant items exist than the cutoff can hold.
    """
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    rel = set(int(i) for i in relevant)
    if not rel:
        raise DataError("relevant set is empty")
    hits = 0
    total = 0.0
    for rank, item in enumerate(np.asarray(ranking)[:k], start=1):
        if int(item) in rel:
            hits += 1
            total += hits / rank
    return total / min(len(rel), k)


def recall_at_k(ranking, relevant, k):
    """Fraction of the relevant set found in the top k."""
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    rel = set(int(i) for i in relevant)
    if not rel:
        raise DataError("relevant set is empty")
    top = set(int(i) for i in np.asarray(ranking)[:k])
    return len(rel & top) / len(rel)


def evaluate(sim, relevance, mode="multiple"):
    """Score a similarity matrix column-by-column against relevance data.

    Column q of `sim` holds caption q's scores over the audio gallery.
    "multiple" mode uses each query's full relevant list; "single" mode
    keeps only the first (paired) id.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    s = as_matrix(sim, "similarity matrix")
    n_gallery, n_queries = s.shape
    if len(relevance) != n_queries:
        raise ContractError(
            f"{len(relevance)} relevance entries for {n_queries} queries")
    if relevance.max_id() >= n_gallery:
        raise ContractError(
            f"relevance names gallery id {relevance.max_id()} but the "
            f"gallery holds {n_gallery} items")
    ap10 = ap16 = r1 = r5 = r10 = 0.0
    for q in range(n_queries):
        ids = relevance.entries[q]
        rel = ids[:1] if mode == "single" else ids
        ranking = rank_gallery(s[:, q])
        ap10 += average_precision_at_k(ranking, rel, 10)
        ap16 += average_precision_at_k(ranking, rel, 16)
        r1 += recall_at_k(ranking, rel, 1)
        r5 += recall_at_k(ranking, rel, 5)
        r10 += recall_at_k(ranking, rel, 10)
    n = n_queries
    return MetricsReport(map_at_10=ap10 / n, map_at_16=ap16 / n,
                         r_at_1=r1 / n, r_at_5=r5 / n, r_at_10=r10 / n,
                         query_count=n)
