"""Modality-gap diagnostics: neighborhood overlap and projection export.

The k-nearest-neighbors overlap ratio (KNOR) measures how similarly a store
responds when queried with an image embedding versus its paired text
embedding: for each pair and each k, the two k-NN id sets are intersected
and the intersection size divided by k; the reported score is the mean over
pairs. Identical query matrices give exactly 1.0; disjoint neighborhoods
give 0.0.

Projection export writes labeled embedding matrices to a CSV suitable for
external dimensionality-reduction tooling; no projection happens here.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .correction import as_matrix
from .datastore import Datastore
from .errors import InvalidK, IoError, PairMismatch


@dataclass
class KnorReport:
    """Overlap score per requested k, plus the pair count used."""

    k_values: list[int]
    scores: list[float]
    pair_count: int

    def to_dict(self) -> dict:
        return {
            "k_values": list(self.k_values),
            "scores": list(self.scores),
            "pair_count": self.pair_count,
        }

    def write_csv(self, path: str | Path) -> None:
        try:
            with open(path, "w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f)
                writer.writerow(["k", "knor"])
                for k, score in zip(self.k_values, self.scores):
                    writer.writerow([k, repr(score)])
        except OSError as exc:
            raise IoError(f"cannot write KNOR CSV {path}: {exc}") from exc


def knor(store: Datastore, paired_image_queries, paired_text_queries,
         k_values: list[int]) -> KnorReport:
    """Mean k-NN id overlap between paired image and text queries.

    Row i of each query matrix is one image-caption pair; both matrices must
    already have passed through whatever correction/noise path is under
    study. Requires max(k_values) <= len(store).

    Raises:
        PairMismatch: query matrices have different row counts.
        InvalidK: a k is non-positive or exceeds the store size.
    """
    img = as_matrix(paired_image_queries, dim=store.dim)
    txt = as_matrix(paired_text_queries, dim=store.dim)
    if img.shape[0] != txt.shape[0]:
        raise PairMismatch(
            f"pair counts differ: {img.shape[0]} image vs {txt.shape[0]} text queries")
    ks = list(k_values)
    if not ks:
        raise InvalidK("k_values must be non-empty")
    for k in ks:
        if k < 1:
            raise InvalidK(f"k must be >= 1, got {k}")
        if k > len(store):
            raise InvalidK(f"k={k} exceeds store size {len(store)}")

    k_max = max(ks)
    pair_count = img.shape[0]
    overlap_sums = {k: 0.0 for k in ks}
    for i in range(pair_count):
        ids_img = [r.id for r in store.knn_search(img[i], k_max)]
        ids_txt = [r.id for r in store.knn_search(txt[i], k_max)]
        for k in ks:
            shared = set(ids_img[:k]) & set(ids_txt[:k])
            overlap_sums[k] += len(shared) / k
    return KnorReport(
        k_values=ks,
        scores=[overlap_sums[k] / pair_count for k in ks],
        pair_count=pair_count,
    )


def export_projection_input(matrices: list[tuple[str, np.ndarray]],
                            path: str | Path) -> None:
    """Write labeled embeddings as CSV: label, row_index, v0..v{dim-1}.

    Values use repr serialization, which round-trips IEEE doubles exactly.
    All matrices must share one dimensionality.

    Raises:
        IoError: the file cannot be written.
    """
    if not matrices:
        raise ValueError("need at least one labeled matrix")
    dim = None
    validated = []
    for label, m in matrices:
        a = as_matrix(m, dim=dim)
        dim = a.shape[1]
        validated.append((label, a))
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["label", "row_index"] + [f"v{d}" for d in range(dim)])
            for label, a in validated:
                for i, row in enumerate(a):
                    writer.writerow([label, i] + [repr(float(x)) for x in row])
    except OSError as exc:
        raise IoError(f"cannot write projection CSV {path}: {exc}") from exc
