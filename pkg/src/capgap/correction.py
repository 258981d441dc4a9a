"""Per-dimension statistics, cross-modal gap correction, and noise injection.

Dual-encoder vision-language models place image and text embeddings in the
same space but systematically displaced from one another (the modality gap).
This module implements the affine correction that maps one modality's
per-dimension distribution onto the other's:

    out[d] = (e[d] - src_mean[d]) * tgt_std[d] / max(src_std[d], eps) + tgt_mean[d]

together with a mean-only variant and zero-mean Gaussian noise injection used
to simulate the residual gap. All operations treat embedding dimensions as
independent; there is no covariance-aware variant.

Embedding vectors and matrices are plain numpy arrays (1-D and 2-D float
arrays respectively); validation helpers enforce finiteness and shape.

Standard-deviation convention: population (divide-by-N). Consumers that
produce stats files externally must use the same convention.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DimMismatch, InvalidEmbedding, IoError, PairMismatch, StatsInsufficientData

STATS_FILE_VERSION = 1

# Denominator clamp for degenerate (zero-variance) dimensions.
DEFAULT_EPSILON_FLOOR = 1e-8


def as_vector(e, dim: int | None = None) -> np.ndarray:
    """Validate and return ``e`` as a 1-D float64 array.

    Raises InvalidEmbedding on non-finite values and DimMismatch when ``dim``
    is given and does not match.
    """
    v = np.asarray(e, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise InvalidEmbedding(f"expected a non-empty 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidEmbedding("embedding contains NaN or Inf")
    if dim is not None and v.shape[0] != dim:
        raise DimMismatch(f"expected dim {dim}, got {v.shape[0]}")
    return v


def as_matrix(m, dim: int | None = None) -> np.ndarray:
    """Validate and return ``m`` as a 2-D float64 array (rows = samples)."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] == 0:
        raise InvalidEmbedding(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidEmbedding("embedding matrix contains NaN or Inf")
    if dim is not None and a.shape[1] != dim:
        raise DimMismatch(f"expected dim {dim}, got {a.shape[1]}")
    return a


class CorrectionMode(Enum):
    """Which parts of the affine correction to apply."""

    NONE = "none"
    MEAN_ONLY = "mean"
    MEAN_STD = "meanstd"

    @classmethod
    def parse(cls, s: str) -> "CorrectionMode":
        key = s.strip().lower().replace("_", "").replace("-", "")
        for mode in cls:
            if key == mode.value.replace("_", ""):
                return mode
        if key in ("meanonly",):
            return cls.MEAN_ONLY
        if key in ("meanstd", "full", "std"):
            return cls.MEAN_STD
        raise ValueError(f"unknown correction mode {s!r}")


class NoiseMode(Enum):
    """How the per-dimension noise std vector is obtained."""

    FIXED = "fixed"          # std = scale on every dimension
    RESAMPLED = "resampled"  # std = |N(0,1)| * scale, redrawn per call


@dataclass
class ModalityStats:
    """Per-dimension mean and population standard deviation of one modality.

    Attributes:
        mean: length-dim array of per-dimension means.
        std: length-dim array of per-dimension population stds (>= 0).
        sample_count: number of rows the stats were computed from (>= 2).
        modality_tag: free-form label, conventionally "image" or "text".
    """

    mean: np.ndarray
    std: np.ndarray
    sample_count: int
    modality_tag: str

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.ndim != 1 or self.std.ndim != 1:
            raise InvalidEmbedding("stats arrays must be 1-D")
        if self.mean.shape != self.std.shape:
            raise DimMismatch(
                f"mean/std length mismatch: {self.mean.shape[0]} vs {self.std.shape[0]}"
            )
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.std))):
            raise InvalidEmbedding("stats contain NaN or Inf")
        if np.any(self.std < 0):
            raise InvalidEmbedding("std must be non-negative")
        if self.sample_count < 2:
            raise StatsInsufficientData(f"sample_count must be >= 2, got {self.sample_count}")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def to_dict(self) -> dict:
        return {
            "version": STATS_FILE_VERSION,
            "dim": self.dim,
            "modality_tag": self.modality_tag,
            "sample_count": self.sample_count,
            "mean": [float(x) for x in self.mean],
            "std": [float(x) for x in self.std],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModalityStats":
        version = d.get("version")
        if version != STATS_FILE_VERSION:
            raise IoError(f"unsupported stats file version {version!r}")
        stats = cls(
            mean=np.array(d["mean"], dtype=np.float64),
            std=np.array(d["std"], dtype=np.float64),
            sample_count=int(d["sample_count"]),
            modality_tag=str(d["modality_tag"]),
        )
        if stats.dim != int(d["dim"]):
            raise IoError(f"stats file dim field {d['dim']} disagrees with array length {stats.dim}")
        return stats

    def save(self, path: str | Path) -> None:
        """Write the versioned stats JSON document.

        Floats are serialized with repr precision, which round-trips exactly
        for IEEE doubles.
        """
        try:
            Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot write stats file {path}: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "ModalityStats":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoError(f"cannot read stats file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise IoError(f"stats file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(payload)


@dataclass
class GapCorrector:
    """Affine map aligning the source modality's distribution to the target's.

    The direction is generic: build the corrector with whichever stats pair
    matches the data flow (text->image during datastore construction,
    image->text at query time, or the reverse).
    """

    source: ModalityStats
    target: ModalityStats
    mode: CorrectionMode = CorrectionMode.MEAN_STD
    epsilon_floor: float = DEFAULT_EPSILON_FLOOR

    def __post_init__(self):
        if self.source.dim != self.target.dim:
            raise DimMismatch(
                f"source dim {self.source.dim} != target dim {self.target.dim}"
            )
        if not self.epsilon_floor > 0:
            raise ValueError("epsilon_floor must be positive")

    @property
    def dim(self) -> int:
        return self.source.dim

    def inverted(self) -> "GapCorrector":
        """Corrector for the opposite direction (target -> source)."""
        return GapCorrector(
            source=self.target,
            target=self.source,
            mode=self.mode,
            epsilon_floor=self.epsilon_floor,
        )

    def apply(self, e) -> np.ndarray:
        return correct(e, self)

    def apply_matrix(self, m) -> np.ndarray:
        return correct_matrix(m, self)


@dataclass
class NoiseConfig:
    """Zero-mean Gaussian noise settings.

    ``scale`` is the noise magnitude (the retrieval-side L or decoder-side B
    value). FIXED mode uses ``scale`` directly as the per-dimension std;
    RESAMPLED draws a fresh |N(0,1)| * scale std vector on every call.
    """

    scale: float
    mode: NoiseMode = NoiseMode.FIXED
    seed: int = 0

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError(f"noise scale must be >= 0, got {self.scale}")


def compute_stats(matrix, tag: str) -> ModalityStats:
    """Per-dimension sample mean and population (1/N) standard deviation.

    Args:
        matrix: (N, dim) array with N >= 2 finite rows.
        tag: modality label stored on the result.

    Raises:
        StatsInsufficientData: fewer than 2 rows.
        InvalidEmbedding: non-finite input.
    """
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidEmbedding(f"expected a 2-D matrix, got shape {a.shape}")
    if a.shape[0] < 2:
        raise StatsInsufficientData(f"need >= 2 rows to compute stats, got {a.shape[0]}")
    a = as_matrix(a)
    mean = a.mean(axis=0)
    std = a.std(axis=0)  # ddof=0: population convention
    return ModalityStats(mean=mean, std=std, sample_count=a.shape[0], modality_tag=tag)


def correct(e, corrector: GapCorrector) -> np.ndarray:
    """Apply the gap correction to a single embedding vector.

    MEAN_STD:  out = (e - src_mean) * tgt_std / max(src_std, eps) + tgt_mean
    MEAN_ONLY: out = e - src_mean + tgt_mean
    NONE:      out = e (copied)
    """
    v = as_vector(e, dim=corrector.dim)
    return _correct_array(v, corrector)


def correct_matrix(m, corrector: GapCorrector) -> np.ndarray:
    """Row-wise gap correction of an (N, dim) matrix."""
    a = as_matrix(m, dim=corrector.dim)
    return _correct_array(a, corrector)


def _correct_array(a: np.ndarray, corrector: GapCorrector) -> np.ndarray:
    if corrector.mode is CorrectionMode.NONE:
        return a.copy()
    src, tgt = corrector.source, corrector.target
    if corrector.mode is CorrectionMode.MEAN_ONLY:
        return a - src.mean + tgt.mean
    denom = np.maximum(src.std, corrector.epsilon_floor)
    return (a - src.mean) * (tgt.std / denom) + tgt.mean


def inject_noise(e, cfg: NoiseConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Add zero-mean Gaussian noise to an embedding vector.

    out[d] = e[d] + z[d] * s[d], with z ~ N(0,1) from the seeded generator.
    FIXED mode uses s[d] = scale; RESAMPLED draws s[d] = |w[d]| * scale with
    w ~ N(0,1) first, then z. With scale == 0 the input is returned unchanged
    and the generator is not advanced.

    When ``rng`` is omitted a fresh generator seeded from ``cfg.seed`` is
    created, so repeated calls with the same config and input are identical.
    Pass a long-lived generator to draw from a continuing stream instead.
    """
    v = as_vector(e)
    if cfg.scale == 0:
        return v.copy()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if cfg.mode is NoiseMode.RESAMPLED:
        s = np.abs(rng.standard_normal(v.shape[0])) * cfg.scale
    else:
        s = cfg.scale
    z = rng.standard_normal(v.shape[0])
    return v + z * s


def noise_rng(cfg: NoiseConfig) -> np.random.Generator:
    """Fresh generator for a sequence of inject_noise calls under one config."""
    return np.random.default_rng(cfg.seed)


def gap_radius(paired_image, paired_text, corrector: GapCorrector) -> float:
    """Mean Euclidean distance between corrected members of image-text pairs.

    Row i of each matrix is one image-caption pair. The correction is applied
    to the side whose positional role matches ``corrector.source.modality_tag``
    ("image" corrects the image matrix toward text space; any other tag
    corrects the text matrix toward image space). The other side passes
    through unchanged. Smaller values mean a smaller residual gap.

    Raises:
        PairMismatch: row counts differ.
        DimMismatch: dims differ from the corrector's.
    """
    img = as_matrix(paired_image, dim=corrector.dim)
    txt = as_matrix(paired_text, dim=corrector.dim)
    if img.shape[0] != txt.shape[0]:
        raise PairMismatch(f"pair counts differ: {img.shape[0]} images vs {txt.shape[0]} texts")
    if corrector.source.modality_tag == "image":
        img = _correct_array(img, corrector)
    else:
        txt = _correct_array(txt, corrector)
    diff = img - txt
    dists = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return float(dists.mean())
