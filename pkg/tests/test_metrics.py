"""Metric oracles: KL double loop, analytic Gaussians, brute-force k-NN."""

import json
import math

import numpy as np
import pytest

from timbregen.demo import make_demo_dataset, synth_note
from timbregen.metrics import (
    ClassifierExtractor,
    EvalConfig,
    FamilyClassifier,
    FeatureSet,
    MetricReport,
    SpectralStatsExtractor,
    evaluate,
    extract_features,
    fad,
    get_extractor,
    inception_score,
    precision_recall,
    register_extractor,
    train_family_classifier,
)
from timbregen.spectral import AudioClip, StftConfig, stft_plus, write_wav

CFG = StftConfig(window_size=64, hop_size=16, sample_rate=1000, duration=0.256)


def feature_set(matrix, source="real", tag="test"):
    return FeatureSet(matrix=matrix, source=source, extractor_id=tag)


class TestInceptionScore:
    def test_identical_rows_give_one(self):
        probs = np.tile([0.2, 0.3, 0.5], (6, 1))
        assert inception_score(probs) == pytest.approx(1.0, abs=1e-12)

    def test_distinct_one_hots_give_k(self):
        probs = np.eye(4)
        assert inception_score(probs) == pytest.approx(4.0, abs=1e-9)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(0)
        raw = rng.random((10, 4))
        probs = raw / raw.sum(axis=1, keepdims=True)
        marginal = probs.mean(axis=0)
        total = 0.0
        for n in range(10):
            kl = 0.0
            for k in range(4):
                kl += probs[n, k] * math.log(probs[n, k] / marginal[k])
            total += kl
        assert inception_score(probs) == pytest.approx(math.exp(total / 10), abs=1e-9)

    def test_row_permutation_invariant(self):
        rng = np.random.default_rng(1)
        raw = rng.random((8, 5))
        probs = raw / raw.sum(axis=1, keepdims=True)
        perm = rng.permutation(8)
        assert inception_score(probs) == pytest.approx(
            inception_score(probs[perm]), abs=1e-12
        )

    def test_validation(self):
        with pytest.raises(ValueError, match="sum to 1"):
            inception_score(np.full((3, 4), 0.3))
        with pytest.raises(ValueError, match="non-negative"):
            inception_score(np.array([[1.5, -0.5], [0.5, 0.5]]))
        with pytest.raises(ValueError, match="K >= 2"):
            inception_score(np.ones((3, 1)))


class TestFad:
    def test_identical_sets_near_zero(self):
        rng = np.random.default_rng(2)
        m = rng.normal(size=(50, 6))
        a = feature_set(m)
        b = feature_set(m.copy(), source="generated")
        assert fad(a, b) <= 1e-6

    def test_mean_offset_gaussians(self):
        rng = np.random.default_rng(3)
        delta = np.array([1.0, 0.5, -0.3, 0.2])
        a = feature_set(rng.normal(size=(5000, 4)))
        b = feature_set(rng.normal(size=(5000, 4)) + delta, source="generated")
        expected = float((delta**2).sum())
        assert fad(a, b) == pytest.approx(expected, rel=0.05, abs=0.02)

    def test_one_dim_scale_gap(self):
        rng = np.random.default_rng(4)
        a = feature_set(rng.normal(size=(5000, 1)))
        b = feature_set(rng.normal(scale=2.0, size=(5000, 1)), source="generated")
        assert fad(a, b) == pytest.approx(1.0, abs=0.1)

    def test_symmetry(self):
        rng = np.random.default_rng(5)
        a = feature_set(rng.normal(size=(40, 3)))
        b = feature_set(rng.normal(size=(60, 3)) + 0.5, source="generated")
        assert fad(a, b) == pytest.approx(fad(b, a), abs=1e-9)

    def test_self_distance_zero(self):
        rng = np.random.default_rng(6)
        a = feature_set(rng.normal(size=(30, 5)))
        assert fad(a, a) <= 1e-9

    def test_dimension_mismatch(self):
        a = feature_set(np.zeros((5, 3)) + np.eye(5, 3))
        b = feature_set(np.eye(5, 4), source="generated")
        with pytest.raises(ValueError, match="dims differ"):
            fad(a, b)

    def test_warns_when_underdetermined(self):
        rng = np.random.default_rng(7)
        a = feature_set(rng.normal(size=(4, 6)))
        b = feature_set(rng.normal(size=(40, 6)), source="generated")
        with pytest.warns(UserWarning, match="rank-deficient"):
            fad(a, b)

    def test_feature_set_validation(self):
        with pytest.raises(ValueError, match="N >= 2"):
            feature_set(np.zeros((1, 4)))
        with pytest.raises(ValueError, match="finite"):
            feature_set(np.full((3, 2), np.nan))
        with pytest.raises(ValueError, match="source"):
            FeatureSet(np.zeros((3, 2)), "fake", "x")


class TestPrecisionRecall:
    def test_identical_sets(self):
        rng = np.random.default_rng(8)
        m = rng.normal(size=(20, 2))
        p, r = precision_recall(feature_set(m), feature_set(m, "generated"), k=3)
        assert (p, r) == (1.0, 1.0)

    def test_far_clusters(self):
        rng = np.random.default_rng(9)
        a = feature_set(rng.normal(size=(30, 2)))
        b = feature_set(rng.normal(size=(30, 2)) + 1e6, source="generated")
        assert precision_recall(a, b, k=3) == (0.0, 0.0)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(10)
        real = rng.normal(size=(60, 2))
        gen = rng.normal(size=(45, 2)) + 0.3
        k = 3

        def oracle():
            def dist(p, q):
                return math.dist(p, q)

            def radius(points, i):
                ds = sorted(dist(points[i], points[j]) for j in range(len(points)))
                return ds[k]

            real_r = [radius(real, i) for i in range(len(real))]
            gen_r = [radius(gen, i) for i in range(len(gen))]
            prec = sum(
                any(dist(g, real[i]) <= real_r[i] for i in range(len(real)))
                for g in gen
            ) / len(gen)
            rec = sum(
                any(dist(r_pt, gen[j]) <= gen_r[j] for j in range(len(gen)))
                for r_pt in real
            ) / len(real)
            return prec, rec

        got = precision_recall(feature_set(real), feature_set(gen, "generated"), k=k)
        assert got == oracle()

    def test_k_out_of_range(self):
        rng = np.random.default_rng(11)
        a = feature_set(rng.normal(size=(5, 2)))
        b = feature_set(rng.normal(size=(5, 2)), source="generated")
        with pytest.raises(ValueError, match="k="):
            precision_recall(a, b, k=5)
        with pytest.raises(ValueError, match="k="):
            precision_recall(a, b, k=0)


class TestExtractors:
    def _clips(self, n=4):
        return [synth_note(36 + i, "bright" if i % 2 else "dark", CFG, seed=i) for i in range(n)]

    def test_too_few_clips_rejected(self):
        with pytest.raises(ValueError, match="at least 2"):
            extract_features([], "spectral-stats")
        with pytest.raises(ValueError, match="at least 2"):
            extract_features(self._clips(1), "spectral-stats")

    def test_deterministic_and_shaped(self):
        clips = self._clips(4)
        a = extract_features(clips, "spectral-stats")
        b = extract_features(clips, "spectral-stats")
        assert a.matrix.shape == (4, 12)  # 8 bands + 4 envelope statistics
        assert np.array_equal(a.matrix, b.matrix)

    def test_unknown_extractor(self):
        with pytest.raises(KeyError, match="unknown extractor"):
            extract_features(self._clips(2), "audio-transformer")

    def test_register_custom(self):
        class Stub:
            id = "stub"

            def features(self, clips):
                return np.arange(len(clips) * 2, dtype=float).reshape(len(clips), 2)

            def class_probs(self, clips):
                return np.full((len(clips), 2), 0.5)

        register_extractor("stub", Stub())
        fs = extract_features(self._clips(3), "stub")
        assert fs.matrix.shape == (3, 2)
        assert get_extractor("stub").id == "stub"

    def test_stats_probs_are_distributions(self):
        probs = SpectralStatsExtractor().class_probs(self._clips(4))
        assert probs.shape == (4, 8)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(probs >= 0)

    def test_classifier_extractor(self):
        clips = self._clips(6)
        images = [stft_plus(c, CFG) for c in clips]
        labels = [i % 2 for i in range(6)]
        model = train_family_classifier(images, labels, num_classes=2, steps=40)
        ex = ClassifierExtractor(model, CFG)
        feats = ex.features(clips)
        probs = ex.class_probs(clips)
        assert feats.shape == (6, 32)
        assert probs.shape == (6, 2)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert np.array_equal(feats, ex.features(clips))


class TestEvaluate:
    def _make_dirs(self, tmp_path, n=4):
        real = tmp_path / "real"
        gen = tmp_path / "gen"
        make_demo_dataset(real, CFG, num_per_class=n // 2)
        make_demo_dataset(gen, CFG, num_per_class=n // 2, seed=1)
        return real, gen

    def test_same_directory_is_perfect(self, tmp_path):
        real, _ = self._make_dirs(tmp_path)
        report = evaluate(real, real, EvalConfig(k=3))
        assert report.fad <= 1e-6
        assert report.precision == 1.0 and report.recall == 1.0
        assert report.is_score >= 1.0

    def test_report_written_with_fields(self, tmp_path):
        real, gen = self._make_dirs(tmp_path)
        report = evaluate(real, gen, EvalConfig(k=3))
        payload = json.loads((gen / "metrics_report.json").read_text())
        assert payload["is_score"] == report.is_score
        assert payload["n_real"] == 4 and payload["n_gen"] == 4
        assert payload["config"]["extractor"] == "spectral-stats"
        assert payload["started_at"] <= payload["finished_at"]
        assert payload["unreadable"] == []

    def test_unreadable_files_listed(self, tmp_path):
        real, gen = self._make_dirs(tmp_path)
        for name in ("a.wav", "b.wav", "c.wav"):
            (gen / name).write_bytes(b"not a wav")
        for wav in gen.glob("*_*.wav"):
            wav.unlink()
        with pytest.raises(ValueError, match=r"unreadable.*a\.wav"):
            evaluate(real, gen, EvalConfig())

    def test_too_few_files(self, tmp_path):
        real, gen = self._make_dirs(tmp_path)
        clip = AudioClip(samples=np.zeros(100), sample_rate=1000)
        solo = tmp_path / "solo"
        solo.mkdir()
        write_wav(solo / "only.wav", clip)
        with pytest.raises(ValueError, match="at least 2"):
            evaluate(real, solo, EvalConfig())

    def test_report_invariants_enforced(self):
        with pytest.raises(ValueError):
            MetricReport(0.5, 1.0, 0.5, 0.5, 4, 4, "x")
        with pytest.raises(ValueError):
            MetricReport(1.0, -1.0, 0.5, 0.5, 4, 4, "x")
        with pytest.raises(ValueError):
            MetricReport(1.0, 1.0, 1.5, 0.5, 4, 4, "x")
