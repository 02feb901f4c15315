"""Recall@K over cosine nearest neighbours."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RecallResult:
    recall: dict[int, float]
    num_queries: int


def first_hit_rank(query, query_labels, gallery, gallery_labels, self_match_excluded=False):
    """0-based rank of the first same-class gallery item for each query.

    Gallery items are ordered by decreasing cosine similarity, ties broken by
    lower gallery index. Queries without any same-class candidate get rank
    ``inf``.
    """
    q = np.atleast_2d(np.asarray(query, dtype=np.float64))
    g = np.atleast_2d(np.asarray(gallery, dtype=np.float64))
    ql = np.asarray(query_labels).ravel()
    gl = np.asarray(gallery_labels).ravel()
    if len(q) != len(ql) or len(g) != len(gl):
        raise ValueError("embeddings and labels differ in length")
    sims = q @ g.T
    if self_match_excluded:
        if len(q) != len(g):
            raise ValueError("self-match exclusion needs the query set to be the gallery")
        np.fill_diagonal(sims, -np.inf)
    # stable sort on -sim keeps lower indices first among ties
    order = np.argsort(-sims, axis=1, kind="stable")
    same = gl[order] == ql[:, None]
    if self_match_excluded:
        # the query itself sorts last (at -inf); drop that slot
        same = same[:, :-1]
    hit = same.any(axis=1)
    rank = np.where(hit, same.argmax(axis=1), np.inf)
    return rank


def recall_at_k(
    query_embeddings,
    query_labels,
    gallery_embeddings,
    gallery_labels,
    ks,
    self_match_excluded: bool = False,
) -> RecallResult:
    """Fraction of queries with a same-class item among their K most similar gallery items."""
    ks = [int(k) for k in ks]
    if not ks:
        raise ValueError("ks must be non-empty")
    n_gallery = len(np.atleast_2d(gallery_embeddings))
    candidates = n_gallery - 1 if self_match_excluded else n_gallery
    for k in ks:
        if k < 1 or k > candidates:
            raise ValueError(f"K={k} outside [1, {candidates}] candidates per query")
    rank = first_hit_rank(
        query_embeddings, query_labels, gallery_embeddings, gallery_labels, self_match_excluded
    )
    return RecallResult(
        recall={k: float(np.mean(rank < k)) for k in ks},
        num_queries=len(rank),
    )
