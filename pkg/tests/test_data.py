"""Manifest parsing, label augmentation, and pair-building tests."""

import json

import numpy as np
import pytest

from timbregen.data import (
    AugmentConfig,
    ManifestError,
    NoteRecord,
    TextDescription,
    augment_labels,
    build_pairs,
    describe,
    load_manifest,
    load_quality_vocabulary,
    load_templates,
    pad_or_trim,
    peak_normalize,
)
from timbregen.demo import make_demo_dataset, synth_note
from timbregen.spectral import (
    AudioClip,
    InvalidAudioError,
    StftConfig,
    stft_plus,
    write_wav,
)

CFG = StftConfig(window_size=64, hop_size=16, sample_rate=1000, duration=0.256)


def make_record(**overrides) -> NoteRecord:
    base = dict(
        audio_path="unused.wav",
        instrument_id="guitar_000",
        instrument_source="acoustic",
        instrument_family="guitar",
        qualities=("bright",),
        pitch=60,
        velocity=100,
    )
    base.update(overrides)
    return NoteRecord(**base)


def manifest_line(**overrides) -> str:
    base = dict(
        audio="a.wav",
        instrument_id="guitar_000",
        source="acoustic",
        family="guitar",
        qualities=["bright"],
        pitch=60,
        velocity=100,
    )
    base.update(overrides)
    return json.dumps(base)


class TestAugment:
    def test_keywords_single_quality(self):
        record = make_record(qualities=("bright",), instrument_family="guitar")
        desc = augment_labels(record, "keywords", rng_seed=0)
        assert desc.text == "bright, guitar"
        assert desc.style == "keywords"

    def test_keywords_family_always_last(self):
        record = make_record(qualities=("bright", "distortion", "percussive"))
        for seed in range(10):
            desc = augment_labels(record, "keywords", rng_seed=seed)
            parts = desc.text.split(", ")
            assert parts[-1] == "guitar"
            assert sorted(parts[:-1]) == ["bright", "distortion", "percussive"]

    def test_keywords_underscores_prettified(self):
        record = make_record(qualities=("fast_decay",))
        desc = augment_labels(record, "keywords", rng_seed=0)
        assert desc.text == "fast decay, guitar"

    def test_natural_empty_qualities_collapses(self):
        record = make_record(
            qualities=(),
            instrument_family="flute",
            instrument_source="acoustic",
        )
        desc = augment_labels(record, "natural", rng_seed=1)
        assert desc.text == "a sound played by an acoustic flute"

    def test_natural_article_agreement(self):
        record = make_record(
            qualities=("bright",),
            instrument_family="organ",
            instrument_source="electronic",
        )
        desc = augment_labels(record, "natural", rng_seed=0)
        assert "a electronic" not in desc.text
        assert "an electronic organ" in desc.text

    def test_phrase_mentions_family(self):
        record = make_record(qualities=("dark",), instrument_family="bass")
        for seed in range(8):
            desc = augment_labels(record, "phrase", rng_seed=seed)
            assert "bass" in desc.text
            assert desc.style == "phrase"

    def test_deterministic_in_seed(self):
        record = make_record(qualities=("bright", "dark", "reverb"))
        for style in ("keywords", "natural", "phrase"):
            a = augment_labels(record, style, rng_seed=42)
            b = augment_labels(record, style, rng_seed=42)
            assert a == b

    def test_unknown_style_rejected(self):
        with pytest.raises(ValueError, match="style"):
            augment_labels(make_record(), "haiku", rng_seed=0)

    def test_description_length_capped(self):
        with pytest.raises(ValueError, match="256"):
            TextDescription(text="x" * 300, style="keywords")
        with pytest.raises(ValueError):
            TextDescription(text="", style="keywords")

    def test_describe_styles_follow_weights(self):
        record = make_record()
        cfg = AugmentConfig(style_weights={"phrase": 1.0})
        for seed in range(5):
            assert describe(record, cfg, seed).style == "phrase"

    def test_describe_mixes_styles(self):
        record = make_record()
        cfg = AugmentConfig()
        styles = {describe(record, cfg, seed).style for seed in range(60)}
        assert styles == {"keywords", "natural", "phrase"}

    def test_custom_augmenter_hook(self):
        calls = []

        def fake_llm(record, style, seed):
            calls.append((record.instrument_family, style, seed))
            return "a warm plucked tone"

        cfg = AugmentConfig(augmenter=fake_llm)
        desc = describe(make_record(), cfg, rng_seed=3)
        assert desc.text == "a warm plucked tone"
        assert len(calls) == 1

    def test_augment_config_rejects_bad_weights(self):
        with pytest.raises(ValueError, match="unknown styles"):
            AugmentConfig(style_weights={"sonnet": 1.0})
        with pytest.raises(ValueError, match="positive"):
            AugmentConfig(style_weights={"keywords": 0.0})

    def test_vocabulary_and_templates_load(self):
        vocab = load_quality_vocabulary()
        assert "bright" in vocab and "dark" in vocab
        assert len(load_templates("phrase")) >= 2
        with pytest.raises(ValueError):
            load_templates("keywords")


class TestManifest:
    def test_three_valid_lines(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text("\n".join(manifest_line(pitch=50 + i) for i in range(3)) + "\n")
        records = load_manifest(p)
        assert len(records) == 3
        assert [r.pitch for r in records] == [50, 51, 52]
        assert records[0].instrument_family == "guitar"

    def test_missing_key_cites_line(self, tmp_path):
        p = tmp_path / "m.jsonl"
        bad = json.loads(manifest_line())
        del bad["pitch"]
        p.write_text(manifest_line() + "\n" + json.dumps(bad) + "\n")
        with pytest.raises(ManifestError, match=r"line 2.*pitch"):
            load_manifest(p)

    def test_unknown_quality_cites_line(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text(manifest_line(qualities=["bright", "sparkly"]) + "\n")
        with pytest.raises(ManifestError, match=r"line 1.*sparkly"):
            load_manifest(p)

    def test_invalid_json_cites_line(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text(manifest_line() + "\n{not json\n")
        with pytest.raises(ManifestError, match="line 2"):
            load_manifest(p)

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "m.jsonl"
        obj = json.loads(manifest_line())
        obj["loudness"] = 3
        p.write_text(json.dumps(obj) + "\n")
        with pytest.raises(ManifestError, match="loudness"):
            load_manifest(p)

    def test_pitch_out_of_range(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text(manifest_line(pitch=200) + "\n")
        with pytest.raises(ManifestError, match=r"pitch.*\[0, 127\]"):
            load_manifest(p)

    def test_blank_lines_skipped(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text(manifest_line() + "\n\n" + manifest_line() + "\n")
        assert len(load_manifest(p)) == 2

    def test_empty_manifest_ok(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text("")
        assert load_manifest(p) == []

    def test_missing_file(self, tmp_path):
        with pytest.raises(ManifestError, match="not found"):
            load_manifest(tmp_path / "nope.jsonl")


class TestAudioPrep:
    def test_peak_normalize(self):
        x = np.array([0.1, -0.5, 0.25])
        y = peak_normalize(x)
        assert np.max(np.abs(y)) == pytest.approx(1.0)
        assert np.allclose(y, x / 0.5)

    def test_peak_normalize_silence(self):
        x = np.zeros(10)
        assert np.array_equal(peak_normalize(x), x)

    def test_pad_keeps_range(self):
        x = np.array([1.0, -1.0])
        y = pad_or_trim(x, 6)
        assert len(y) == 6
        assert np.max(np.abs(y)) <= 1.0
        assert np.array_equal(y[:2], x)
        assert np.all(y[2:] == 0)

    def test_trim_keeps_attack(self):
        x = np.arange(10.0)
        y = pad_or_trim(x, 4)
        assert np.array_equal(y, x[:4])


class TestBuildPairs:
    def _write_clip(self, tmp_path, name="a.wav", sr=CFG.sample_rate):
        rng = np.random.default_rng(0)
        clip = AudioClip(samples=rng.uniform(-0.5, 0.5, 300), sample_rate=sr)
        path = tmp_path / name
        write_wav(path, clip)
        return path

    def test_single_record_round_trip(self, tmp_path):
        path = self._write_clip(tmp_path)
        record = make_record(audio_path=str(path))
        pairs = list(build_pairs([record], CFG, AugmentConfig(), rng_seed=0))
        assert len(pairs) == 1
        pair = pairs[0]
        assert pair.spectral.data.shape == (3, CFG.freq_bins, CFG.num_frames)
        assert pair.record is record
        assert pair.description.text

    def test_spectral_matches_normalized_audio(self, tmp_path):
        path = self._write_clip(tmp_path)
        record = make_record(audio_path=str(path))
        (pair,) = build_pairs([record], CFG, AugmentConfig(), rng_seed=0)
        from timbregen.spectral import read_wav

        clip = read_wav(path)
        samples = pad_or_trim(peak_normalize(clip.samples), CFG.num_samples)
        expected = stft_plus(AudioClip(samples=samples, sample_rate=CFG.sample_rate), CFG)
        assert np.array_equal(pair.spectral.data, expected.data)

    def test_deterministic_across_runs(self, tmp_path):
        path = self._write_clip(tmp_path)
        records = [make_record(audio_path=str(path), pitch=60 + i) for i in range(4)]
        run1 = list(build_pairs(records, CFG, AugmentConfig(), rng_seed=7))
        run2 = list(build_pairs(records, CFG, AugmentConfig(), rng_seed=7))
        for a, b in zip(run1, run2):
            assert a.description == b.description
            assert np.array_equal(a.spectral.data, b.spectral.data)

    def test_epoch_changes_sampling(self, tmp_path):
        path = self._write_clip(tmp_path)
        records = [make_record(audio_path=str(path), pitch=60 + i) for i in range(8)]
        e0 = [p.description for p in build_pairs(records, CFG, AugmentConfig(), 7, epoch=0)]
        e1 = [p.description for p in build_pairs(records, CFG, AugmentConfig(), 7, epoch=1)]
        assert e0 != e1

    def test_wrong_sample_rate_rejected(self, tmp_path):
        path = self._write_clip(tmp_path, sr=2 * CFG.sample_rate)
        record = make_record(audio_path=str(path))
        with pytest.raises(InvalidAudioError, match="resampling"):
            list(build_pairs([record], CFG, AugmentConfig(), rng_seed=0))

    def test_zero_records(self):
        assert list(build_pairs([], CFG, AugmentConfig(), rng_seed=0)) == []


class TestDemoDataset:
    def test_manifest_loads_and_pairs_build(self, tmp_path):
        manifest = make_demo_dataset(tmp_path, CFG, num_per_class=2)
        records = load_manifest(manifest)
        assert len(records) == 4
        qualities = {q for r in records for q in r.qualities}
        assert {"bright", "dark"} <= qualities
        # every note carries a distinct tag combination
        assert len({r.qualities for r in records}) == 4
        pairs = list(build_pairs(records, CFG, AugmentConfig(), rng_seed=0))
        assert all(p.spectral.data.shape == (3, CFG.freq_bins, CFG.num_frames) for p in pairs)

    def test_bright_has_more_high_band_energy(self):
        bright = synth_note(36, "bright", CFG, seed=1)
        dark = synth_note(36, "dark", CFG, seed=1)

        def high_ratio(clip):
            spec = np.abs(np.fft.rfft(clip.samples))
            half = len(spec) // 4
            return spec[half:].sum() / spec.sum()

        assert high_ratio(bright) > 2 * high_ratio(dark)
