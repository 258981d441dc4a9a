"""Statistics, gap correction, and noise injection."""

import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from capgap import (
    CorrectionMode,
    GapCorrector,
    ModalityStats,
    NoiseConfig,
    NoiseMode,
    compute_stats,
    correct,
    correct_matrix,
    gap_radius,
    inject_noise,
)
from capgap.errors import (
    DimMismatch,
    InvalidEmbedding,
    IoError,
    PairMismatch,
    StatsInsufficientData,
)

from oracles import correct_scalar, stats_loop


class TestComputeStats:
    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        m = rng.normal(loc=3.0, scale=2.0, size=(40, 5))
        stats = compute_stats(m, "image")
        means, stds = stats_loop(m.tolist())
        assert_allclose(stats.mean, means, atol=1e-12)
        assert_allclose(stats.std, stds, atol=1e-12)
        assert stats.sample_count == 40
        assert stats.modality_tag == "image"

    def test_population_std_convention(self):
        # two samples 0 and 2: population std is 1, sample (ddof=1) would be sqrt(2)
        stats = compute_stats([[0.0], [2.0]], "text")
        assert stats.std[0] == pytest.approx(1.0, abs=0)

    def test_rejects_single_row(self):
        with pytest.raises(StatsInsufficientData):
            compute_stats([[1.0, 2.0]], "image")

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidEmbedding):
            compute_stats([[1.0, np.nan], [2.0, 3.0]], "image")

    def test_rejects_vector_input(self):
        with pytest.raises(InvalidEmbedding):
            compute_stats([1.0, 2.0, 3.0], "image")


class TestStatsFile:
    def test_round_trip(self, tmp_path, stats_pair):
        img, _ = stats_pair
        path = tmp_path / "img.json"
        img.save(path)
        loaded = ModalityStats.load(path)
        assert_array_equal(loaded.mean, img.mean)
        assert_array_equal(loaded.std, img.std)
        assert loaded.sample_count == img.sample_count
        assert loaded.modality_tag == img.modality_tag

    def test_version_checked(self, tmp_path, stats_pair):
        img, _ = stats_pair
        doc = img.to_dict()
        doc["version"] = 99
        path = tmp_path / "img.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(IoError):
            ModalityStats.load(path)

    def test_dim_field_checked(self, tmp_path, stats_pair):
        img, _ = stats_pair
        doc = img.to_dict()
        doc["dim"] = doc["dim"] + 1
        path = tmp_path / "img.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(IoError):
            ModalityStats.load(path)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(IoError):
            ModalityStats.load(path)

    def test_negative_std_rejected(self):
        with pytest.raises(InvalidEmbedding):
            ModalityStats(mean=np.zeros(3), std=np.array([1.0, -0.1, 1.0]),
                          sample_count=5, modality_tag="image")


class TestCorrect:
    @pytest.mark.parametrize("mode,name", [
        (CorrectionMode.NONE, "none"),
        (CorrectionMode.MEAN_ONLY, "mean"),
        (CorrectionMode.MEAN_STD, "meanstd"),
    ])
    def test_matches_scalar_oracle(self, stats_pair, mode, name):
        src, tgt = stats_pair
        corrector = GapCorrector(source=src, target=tgt, mode=mode)
        rng = np.random.default_rng(1)
        for _ in range(50):
            v = rng.normal(size=src.dim) * 3.0
            expected = correct_scalar(v, src.mean, src.std, tgt.mean, tgt.std, name)
            assert_allclose(correct(v, corrector), expected, atol=1e-12)

    def test_matrix_matches_per_row(self, stats_pair):
        src, tgt = stats_pair
        corrector = GapCorrector(source=src, target=tgt)
        m = np.random.default_rng(2).normal(size=(20, src.dim))
        full = correct_matrix(m, corrector)
        for i in range(20):
            assert_allclose(full[i], correct(m[i], corrector), atol=0)

    def test_none_mode_copies(self, stats_pair):
        src, tgt = stats_pair
        corrector = GapCorrector(source=src, target=tgt, mode=CorrectionMode.NONE)
        v = np.arange(src.dim, dtype=np.float64)
        out = correct(v, corrector)
        assert out is not v
        assert_array_equal(out, v)

    def test_round_trip_inverts(self, stats_pair):
        src, tgt = stats_pair
        corrector = GapCorrector(source=src, target=tgt)
        back = corrector.inverted()
        rng = np.random.default_rng(3)
        for _ in range(100):
            v = rng.normal(size=src.dim) * 5.0
            assert_allclose(back.apply(corrector.apply(v)), v, atol=1e-9)

    def test_matches_target_distribution(self, stats_pair):
        src, tgt = stats_pair
        corrector = GapCorrector(source=src, target=tgt)
        rng = np.random.default_rng(4)
        m = rng.normal(loc=src.mean, scale=np.maximum(src.std, 0.1), size=(400, src.dim))
        source_stats = compute_stats(m, "image")
        moved = correct_matrix(m, GapCorrector(source=source_stats, target=tgt))
        new_stats = compute_stats(moved, "image")
        assert_allclose(new_stats.mean, tgt.mean, atol=1e-9)
        assert_allclose(new_stats.std, tgt.std, atol=1e-9)

    def test_mean_only_preserves_spread(self, stats_pair):
        src, tgt = stats_pair
        rng = np.random.default_rng(5)
        m = rng.normal(size=(200, src.dim))
        source_stats = compute_stats(m, "image")
        moved = correct_matrix(
            m, GapCorrector(source=source_stats, target=tgt, mode=CorrectionMode.MEAN_ONLY))
        new_stats = compute_stats(moved, "image")
        assert_allclose(new_stats.mean, tgt.mean, atol=1e-9)
        assert_allclose(new_stats.std, source_stats.std, atol=1e-12)

    def test_zero_variance_dimension_uses_floor(self):
        src = ModalityStats(mean=np.array([1.0, 0.0]), std=np.array([0.0, 1.0]),
                            sample_count=10, modality_tag="image")
        tgt = ModalityStats(mean=np.array([5.0, 0.0]), std=np.array([2.0, 1.0]),
                            sample_count=10, modality_tag="text")
        corrector = GapCorrector(source=src, target=tgt, epsilon_floor=1e-8)
        out = correct(np.array([1.0 + 1e-8, 3.0]), corrector)
        # denominator is clamped to 1e-8, so a 1e-8 offset maps to ~1 * tgt_std
        # (loose tolerance: the 1e-8 offset itself carries float64 rounding)
        assert out[0] == pytest.approx(5.0 + 2.0, rel=1e-7)
        assert np.all(np.isfinite(out))

    def test_dim_mismatch(self, stats_pair):
        src, tgt = stats_pair
        corrector = GapCorrector(source=src, target=tgt)
        with pytest.raises(DimMismatch):
            correct(np.zeros(src.dim + 1), corrector)

    def test_non_finite_rejected(self, stats_pair):
        src, tgt = stats_pair
        corrector = GapCorrector(source=src, target=tgt)
        v = np.zeros(src.dim)
        v[0] = np.inf
        with pytest.raises(InvalidEmbedding):
            correct(v, corrector)

    def test_corrector_requires_matching_dims(self, stats_pair):
        src, _ = stats_pair
        other = ModalityStats(mean=np.zeros(3), std=np.ones(3),
                              sample_count=5, modality_tag="text")
        with pytest.raises(DimMismatch):
            GapCorrector(source=src, target=other)

    def test_mode_parse_aliases(self):
        assert CorrectionMode.parse("none") is CorrectionMode.NONE
        assert CorrectionMode.parse("Mean") is CorrectionMode.MEAN_ONLY
        assert CorrectionMode.parse("mean_std") is CorrectionMode.MEAN_STD
        assert CorrectionMode.parse("meanstd") is CorrectionMode.MEAN_STD
        with pytest.raises(ValueError):
            CorrectionMode.parse("bogus")


class TestInjectNoise:
    def test_seeded_determinism(self):
        cfg = NoiseConfig(scale=0.1, seed=7)
        v = np.linspace(-1, 1, 16)
        assert_array_equal(inject_noise(v, cfg), inject_noise(v, cfg))

    def test_different_seeds_differ(self):
        v = np.zeros(16)
        a = inject_noise(v, NoiseConfig(scale=0.1, seed=1))
        b = inject_noise(v, NoiseConfig(scale=0.1, seed=2))
        assert not np.array_equal(a, b)

    def test_zero_scale_is_identity(self):
        v = np.linspace(-1, 1, 16)
        out = inject_noise(v, NoiseConfig(scale=0.0, seed=3))
        assert out is not v
        assert_array_equal(out, v)

    def test_zero_scale_does_not_advance_generator(self):
        rng = np.random.default_rng(9)
        inject_noise(np.zeros(4), NoiseConfig(scale=0.0), rng=rng)
        assert_array_equal(rng.standard_normal(4),
                           np.random.default_rng(9).standard_normal(4))

    def test_fixed_mode_formula(self):
        # out = v + z * scale with z drawn directly from the seeded generator
        v = np.arange(8, dtype=np.float64)
        cfg = NoiseConfig(scale=0.25, mode=NoiseMode.FIXED, seed=11)
        z = np.random.default_rng(11).standard_normal(8)
        assert_allclose(inject_noise(v, cfg), v + z * 0.25, atol=0)

    def test_resampled_mode_formula(self):
        # std vector |w| * scale is drawn first, then z
        v = np.zeros(8)
        cfg = NoiseConfig(scale=0.5, mode=NoiseMode.RESAMPLED, seed=12)
        rng = np.random.default_rng(12)
        w = rng.standard_normal(8)
        z = rng.standard_normal(8)
        assert_allclose(inject_noise(v, cfg), z * np.abs(w) * 0.5, atol=0)

    def test_noise_statistics(self):
        # mean stays ~0 and std ~scale over a large sample
        cfg = NoiseConfig(scale=0.1, seed=13)
        rng = np.random.default_rng(13)
        deltas = np.concatenate([
            inject_noise(np.zeros(1000), cfg, rng=rng) for _ in range(20)])
        assert abs(deltas.mean()) < 0.005
        assert abs(deltas.std() - 0.1) < 0.005

    def test_negative_scale_rejected(self):
        with pytest.raises(ValueError):
            NoiseConfig(scale=-0.1)


class TestGapRadius:
    def test_hand_case(self):
        img = np.array([[3.0, 0.0], [0.0, 4.0]])
        txt = np.array([[0.0, 0.0], [0.0, 0.0]])
        stats = compute_stats(np.vstack([img, img]), "image")
        corrector = GapCorrector(source=stats, target=stats, mode=CorrectionMode.NONE)
        # distances are 3 and 4, mean 3.5
        assert gap_radius(img, txt, corrector) == pytest.approx(3.5, abs=1e-12)

    def test_corrects_image_side_when_source_is_image(self, stats_pair):
        img_stats, txt_stats = stats_pair
        rng = np.random.default_rng(20)
        img = rng.normal(loc=2.0, scale=1.5, size=(100, 8))
        txt = rng.normal(loc=-1.0, scale=0.4, size=(100, 8))
        forward = GapCorrector(source=img_stats, target=txt_stats)
        manual = float(np.mean(np.linalg.norm(forward.apply_matrix(img) - txt, axis=1)))
        assert gap_radius(img, txt, forward) == pytest.approx(manual, rel=1e-12)

    def test_corrects_text_side_otherwise(self, stats_pair):
        img_stats, txt_stats = stats_pair
        rng = np.random.default_rng(21)
        img = rng.normal(size=(50, 8))
        txt = rng.normal(size=(50, 8))
        backward = GapCorrector(source=txt_stats, target=img_stats)
        manual = float(np.mean(np.linalg.norm(img - backward.apply_matrix(txt), axis=1)))
        assert gap_radius(img, txt, backward) == pytest.approx(manual, rel=1e-12)

    def test_pair_mismatch(self, stats_pair):
        src, tgt = stats_pair
        corrector = GapCorrector(source=src, target=tgt)
        with pytest.raises(PairMismatch):
            gap_radius(np.zeros((3, 8)), np.zeros((4, 8)), corrector)
