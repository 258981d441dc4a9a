"""Maximal Marginal Relevance re-ranking of a retrieved candidate pool.

Greedy selection balancing similarity to the query against redundancy with
already-selected captions: at each step pick the candidate maximizing

    sim(cand, query) - lambda * max(sim(cand, selected) for selected so far)

with the redundancy term defined as 0 for the very first pick. Similarity is
cosine. lambda > 0 favors diversity, lambda < 0 favors redundancy, and
lambda = 0 reduces to plain similarity ranking. Any real lambda is accepted.

Ties are broken by ascending caption id so selection is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .correction import as_vector
from .errors import DimMismatch, EmptyCandidates
from .formats import CaptionRecord

DEFAULT_POOL_SIZE = 16


@dataclass
class MmrConfig:
    """Re-ranking settings: trade-off weight, pool size, and output size."""

    lam: float
    pool_size: int = DEFAULT_POOL_SIZE
    select_count: int = 4

    def __post_init__(self):
        if self.pool_size < 1:
            raise ValueError(f"pool_size must be >= 1, got {self.pool_size}")
        if self.select_count < 1:
            raise ValueError(f"select_count must be >= 1, got {self.select_count}")
        if self.select_count > self.pool_size:
            raise ValueError(
                f"select_count {self.select_count} exceeds pool_size {self.pool_size}")


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; 0 when either vector has zero norm."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def mmr_rerank(query_embedding, candidates: list[tuple[CaptionRecord, np.ndarray]],
               cfg: MmrConfig) -> list[CaptionRecord]:
    """Select up to ``cfg.select_count`` candidates in MMR order.

    Args:
        query_embedding: the (corrected) query vector.
        candidates: (record, embedding) pairs, typically the top pool from a
            datastore search.
        cfg: lambda and selection sizes.

    Returns:
        Selected records, in selection order (a duplicate-free subset of the
        input). If there are fewer candidates than ``select_count``, all of
        them are returned.

    Raises:
        EmptyCandidates: no candidates given.
        DimMismatch: a candidate embedding disagrees with the query dim.
    """
    if not candidates:
        raise EmptyCandidates("MMR requires at least one candidate")
    q = as_vector(query_embedding)
    vecs = []
    for rec, emb in candidates:
        v = np.asarray(emb, dtype=np.float64)
        if v.shape != q.shape:
            raise DimMismatch(
                f"candidate {rec.id} has dim {v.shape}, query has {q.shape}")
        vecs.append(v)

    n = len(candidates)
    query_sims = np.array([cosine_similarity(v, q) for v in vecs])
    ids = np.array([rec.id for rec, _ in candidates], dtype=np.uint64)

    selected: list[int] = []
    remaining = set(range(n))
    # running max of sim(candidate, selected); -inf until something is selected,
    # and never clamped so genuinely negative redundancy terms survive
    max_sim_to_selected = np.full(n, -np.inf)

    while remaining and len(selected) < cfg.select_count:
        best_i = None
        best_score = -np.inf
        for i in sorted(remaining):
            penalty = cfg.lam * max_sim_to_selected[i] if selected else 0.0
            score = query_sims[i] - penalty
            if best_i is None or score > best_score or (
                    score == best_score and ids[i] < ids[best_i]):
                best_score = score
                best_i = i
        selected.append(best_i)
        remaining.discard(best_i)
        for j in remaining:
            sim = cosine_similarity(vecs[best_i], vecs[j])
            if sim > max_sim_to_selected[j]:
                max_sim_to_selected[j] = sim

    return [candidates[i][0] for i in selected]
