"""Flat caption datastore with exact nearest-neighbor search.

The store keeps a contiguous float32 matrix (row i belongs to caption record
i) and scans it exhaustively for every query: no approximation structures,
which makes results an anchor for correctness tests. Scoring runs in float64
over fixed-size row blocks so memory stays bounded and results do not depend
on store size or internal chunking.

Two metrics are supported: L2 (score = Euclidean distance, ascending is
better) and cosine (score = cosine similarity, descending is better). Ties
are broken by ascending caption id, which makes every search deterministic.

Retrieval protocols: inference fetches the K best captions; training fetches
K+1 and promotes the single best to the training target, leaving K prompt
captions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .correction import as_vector
from .errors import (
    BuildError,
    DimMismatch,
    DuplicateId,
    EmptyStore,
    InsufficientStore,
    InvalidEmbedding,
)
from .formats import CaptionRecord, read_store_file, write_store_file

METRIC_L2 = "l2"
METRIC_COSINE = "cosine"

# Rows scored per block during the scan; bounds the float64 working set.
SCORE_BLOCK_ROWS = 8192


@dataclass(frozen=True)
class SearchResult:
    """One scored neighbor: caption id, 0-based rank, and metric score."""

    id: int
    rank: int
    score: float


@dataclass
class RetrievalBundle:
    """Output of one retrieval: prompt captions plus decoder-side payload.

    ``target`` is populated only by the training protocol. ``prompt_captions``
    are in decreasing-similarity order (rank order); ``neighbor_embeddings``
    holds their store rows, aligned, for the decoder conditioning payload.
    ``raw_results`` keeps every scored neighbor that was fetched, for audit.
    """

    prompt_captions: list[CaptionRecord]
    raw_results: list[SearchResult]
    neighbor_embeddings: np.ndarray
    target: CaptionRecord | None = None


class Datastore:
    """Immutable caption store over a contiguous embedding matrix.

    Build once with :meth:`build`; afterwards concurrent searches are safe
    (nothing is mutated). Use :meth:`save`/:meth:`load` for the on-disk form.
    """

    def __init__(self, embeddings: np.ndarray, records: list[CaptionRecord], metric: str):
        # internal: use build() / load() instead
        self._embeddings = embeddings
        self._records = records
        self._metric = metric
        self._ids = np.array([r.id for r in records], dtype=np.uint64)
        self._row_by_id = {r.id: i for i, r in enumerate(records)}
        if metric == METRIC_COSINE:
            e64 = embeddings.astype(np.float64)
            self._row_norms = np.sqrt(np.einsum("ij,ij->i", e64, e64))
        else:
            self._row_norms = None

    @classmethod
    def build(cls, embeddings, records: list[CaptionRecord], metric: str = METRIC_L2) -> "Datastore":
        """Validate inputs and assemble a searchable store.

        Raises:
            BuildError: count or dim inconsistency, or unknown metric.
            DuplicateId: repeated caption id.
            InvalidEmbedding: non-finite embedding values.
        """
        a = np.asarray(embeddings, dtype=np.float32)
        if a.ndim != 2:
            raise BuildError(f"embeddings must be 2-D, got shape {a.shape}")
        if a.shape[0] != len(records):
            raise BuildError(f"{a.shape[0]} embedding rows but {len(records)} caption records")
        if a.shape[0] > 0 and a.shape[1] == 0:
            raise BuildError("embedding dim must be positive")
        if not np.all(np.isfinite(a)):
            raise InvalidEmbedding("store embeddings contain NaN or Inf")
        if metric not in (METRIC_L2, METRIC_COSINE):
            raise BuildError(f"unknown metric {metric!r}")
        seen = set()
        for rec in records:
            if rec.id in seen:
                raise DuplicateId(f"caption id {rec.id} occurs more than once")
            seen.add(rec.id)
        return cls(np.ascontiguousarray(a), list(records), metric)

    # read-only views -------------------------------------------------------

    @property
    def metric(self) -> str:
        return self._metric

    @property
    def dim(self) -> int:
        return self._embeddings.shape[1] if self._embeddings.size else 0

    @property
    def embeddings(self) -> np.ndarray:
        return self._embeddings

    @property
    def records(self) -> list[CaptionRecord]:
        return list(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def record_for(self, caption_id: int) -> CaptionRecord:
        return self._records[self._row_by_id[caption_id]]

    def embedding_for(self, caption_id: int) -> np.ndarray:
        return self._embeddings[self._row_by_id[caption_id]]

    # persistence -----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        write_store_file(path, self._embeddings, self._records, self._metric)

    @classmethod
    def load(cls, path: str | Path) -> "Datastore":
        embeddings, records, metric = read_store_file(path)
        return cls.build(embeddings, records, metric)

    # search ----------------------------------------------------------------

    def knn_search(self, query, k: int) -> list[SearchResult]:
        """Exact k-nearest-neighbor scan.

        Returns min(k, len(store)) results sorted best-first (ascending L2
        distance or descending cosine similarity), ties broken by ascending
        caption id.

        Raises:
            EmptyStore: the store has no rows.
            DimMismatch: query dim differs from the store's.
            ValueError: k < 1.
        """
        if len(self._records) == 0:
            raise EmptyStore("cannot search an empty store")
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        q = as_vector(query, dim=self.dim)
        scores = self._score_all(q)
        return self._select(scores, k, exclude_row=None)

    def _score_all(self, q: np.ndarray) -> np.ndarray:
        n = self._embeddings.shape[0]
        scores = np.empty(n, dtype=np.float64)
        if self._metric == METRIC_COSINE:
            qnorm = float(np.linalg.norm(q))
        for start in range(0, n, SCORE_BLOCK_ROWS):
            block = self._embeddings[start:start + SCORE_BLOCK_ROWS].astype(np.float64)
            if self._metric == METRIC_L2:
                diff = block - q
                scores[start:start + block.shape[0]] = np.sqrt(
                    np.einsum("ij,ij->i", diff, diff))
            else:
                dots = block @ q
                denom = self._row_norms[start:start + block.shape[0]] * qnorm
                sims = np.zeros(block.shape[0], dtype=np.float64)
                nz = denom > 0
                sims[nz] = dots[nz] / denom[nz]
                scores[start:start + block.shape[0]] = sims
        return scores

    def _select(self, scores: np.ndarray, k: int,
                exclude_row: int | None) -> list[SearchResult]:
        key = scores if self._metric == METRIC_L2 else -scores
        if exclude_row is not None:
            key = key.copy()
            key[exclude_row] = np.inf
        order = np.lexsort((self._ids, key))
        limit = len(order) - (1 if exclude_row is not None else 0)
        top = order[:min(k, limit)]
        return [
            SearchResult(id=int(self._ids[row]), rank=rank, score=float(scores[row]))
            for rank, row in enumerate(top)
        ]

    # retrieval protocols ---------------------------------------------------

    def retrieve_for_inference(self, query, k: int) -> RetrievalBundle:
        """Fetch the K most similar captions; no training target."""
        results = self.knn_search(query, k)
        return RetrievalBundle(
            prompt_captions=[self.record_for(r.id) for r in results],
            raw_results=results,
            neighbor_embeddings=self._rows_for(results),
            target=None,
        )

    def retrieve_for_training(self, query, k: int,
                              exclude_id: int | None = None) -> RetrievalBundle:
        """Fetch K+1 captions; best becomes the target, the rest the prompt.

        ``exclude_id`` drops one caption (typically the query's own) from
        consideration before selection.

        Raises:
            InsufficientStore: fewer than K+1 eligible captions.
        """
        if len(self._records) == 0:
            raise EmptyStore("cannot search an empty store")
        exclude_row = self._row_by_id.get(exclude_id) if exclude_id is not None else None
        eligible = len(self._records) - (1 if exclude_row is not None else 0)
        if eligible < k + 1:
            raise InsufficientStore(
                f"training retrieval needs K+1={k + 1} captions, store has {eligible} eligible")
        q = as_vector(query, dim=self.dim)
        scores = self._score_all(q)
        results = self._select(scores, k + 1, exclude_row=exclude_row)
        prompt_results = results[1:]
        return RetrievalBundle(
            prompt_captions=[self.record_for(r.id) for r in prompt_results],
            raw_results=results,
            neighbor_embeddings=self._rows_for(prompt_results),
            target=self.record_for(results[0].id),
        )

    def _rows_for(self, results: list[SearchResult]) -> np.ndarray:
        if not results:
            return np.empty((0, self.dim), dtype=np.float32)
        rows = [self._row_by_id[r.id] for r in results]
        return self._embeddings[rows].copy()
