"""Dataset ingestion and text augmentation.

Reads JSON-lines manifests of annotated notes, normalizes audio to the
fixed training length, and expands the structured labels into text
descriptions in several styles.  Everything is a pure function of
(manifest, config, seed).
"""

from __future__ import annotations

import json
import random
import re
import zlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .spectral import AudioClip, InvalidAudioError, SpectralImage, StftConfig, read_wav, stft_plus

STYLES = ("keywords", "natural", "phrase")

MANIFEST_KEYS = {"audio", "instrument_id", "source", "family", "qualities", "pitch", "velocity"}


class ManifestError(ValueError):
    """Manifest file is missing, malformed, or fails validation."""


def _resource_text(name: str) -> str:
    return resources.files("timbregen.resources").joinpath(name).read_text()


def load_quality_vocabulary(path: str | Path | None = None) -> frozenset[str]:
    text = Path(path).read_text() if path else _resource_text("qualities.txt")
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


def load_templates(style: str, path: str | Path | None = None) -> list[str]:
    if style not in ("natural", "phrase"):
        raise ValueError(f"no templates for style {style!r}")
    text = Path(path).read_text() if path else _resource_text(f"templates_{style}.txt")
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if not lines:
        raise ValueError(f"template file for {style!r} is empty")
    return lines


@dataclass(frozen=True)
class NoteRecord:
    audio_path: str
    instrument_id: str
    instrument_source: str
    instrument_family: str
    qualities: tuple[str, ...]
    pitch: int
    velocity: int


@dataclass(frozen=True)
class TextDescription:
    text: str
    style: str

    def __post_init__(self):
        if not self.text:
            raise ValueError("description must be non-empty")
        if len(self.text) > 256:
            raise ValueError("description longer than 256 characters")
        if self.style not in STYLES:
            raise ValueError(f"unknown style {self.style!r}")


@dataclass
class TrainingPair:
    spectral: SpectralImage
    description: TextDescription
    record: NoteRecord


@dataclass
class AugmentConfig:
    """Style mix and template sources for label augmentation.

    ``augmenter``, when set, replaces the template path entirely (the hook
    for an external language-model backend); it must be deterministic in
    (record, style, seed) for the pipeline determinism guarantees to hold.
    """

    style_weights: dict[str, float] = field(
        default_factory=lambda: {s: 1.0 for s in STYLES}
    )
    natural_templates: str | Path | None = None
    phrase_templates: str | Path | None = None
    augmenter: Callable[[NoteRecord, str, int], str] | None = None

    def __post_init__(self):
        unknown = set(self.style_weights) - set(STYLES)
        if unknown:
            raise ValueError(f"unknown styles in weights: {sorted(unknown)}")
        if not self.style_weights or all(w <= 0 for w in self.style_weights.values()):
            raise ValueError("style_weights must contain a positive weight")


def _parse_record(obj: dict, line_no: int, vocabulary: frozenset[str]) -> NoteRecord:
    missing = MANIFEST_KEYS - set(obj)
    if missing:
        raise ManifestError(f"line {line_no}: missing key(s) {sorted(missing)}")
    extra = set(obj) - MANIFEST_KEYS
    if extra:
        raise ManifestError(f"line {line_no}: unknown key(s) {sorted(extra)}")
    qualities = obj["qualities"]
    if not isinstance(qualities, list):
        raise ManifestError(f"line {line_no}: 'qualities' must be a list")
    bad = [q for q in qualities if q not in vocabulary]
    if bad:
        raise ManifestError(f"line {line_no}: unknown quality tag(s) {bad}")
    pitch = obj["pitch"]
    if not isinstance(pitch, int) or not 0 <= pitch <= 127:
        raise ManifestError(f"line {line_no}: pitch must be an integer in [0, 127]")
    velocity = obj["velocity"]
    if not isinstance(velocity, int):
        raise ManifestError(f"line {line_no}: velocity must be an integer")
    return NoteRecord(
        audio_path=str(obj["audio"]),
        instrument_id=str(obj["instrument_id"]),
        instrument_source=str(obj["source"]),
        instrument_family=str(obj["family"]),
        qualities=tuple(sorted(qualities)),
        pitch=pitch,
        velocity=velocity,
    )


def load_manifest(
    path: str | Path, vocabulary: frozenset[str] | None = None
) -> list[NoteRecord]:
    """Read a JSON-lines manifest; malformed lines are reported by number."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    vocabulary = vocabulary if vocabulary is not None else load_quality_vocabulary()
    records = []
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ManifestError(f"line {line_no}: invalid JSON ({e.msg})") from e
        if not isinstance(obj, dict):
            raise ManifestError(f"line {line_no}: expected a JSON object")
        records.append(_parse_record(obj, line_no, vocabulary))
    return records


def _pretty(tag: str) -> str:
    return tag.replace("_", " ")


def _fix_articles(text: str) -> str:
    return re.sub(r"\ba(?= [aeiou])", "an", text)


def _fill_template(template: str, quality: str, record: NoteRecord) -> str:
    text = template.format(
        quality=_pretty(quality),
        source=_pretty(record.instrument_source),
        family=_pretty(record.instrument_family),
    )
    text = re.sub(r"\s+", " ", text).strip()
    return _fix_articles(text)


def augment_labels(
    record: NoteRecord,
    style: str,
    rng_seed: int,
    templates: Sequence[str] | None = None,
) -> TextDescription:
    """Expand a record's labels into one text description.

    Deterministic in (record, style, rng_seed).  ``keywords`` joins the
    shuffled quality tags plus the family with commas; the other styles
    fill a seeded template, picking one quality when several are present.
    """
    if style not in STYLES:
        raise ValueError(f"unknown style {style!r}")
    rng = random.Random(rng_seed)
    if style == "keywords":
        tags = [_pretty(q) for q in record.qualities]
        rng.shuffle(tags)
        tags.append(_pretty(record.instrument_family))
        return TextDescription(text=", ".join(tags), style=style)
    if templates is None:
        templates = load_templates(style)
    template = templates[rng.randrange(len(templates))]
    quality = rng.choice(record.qualities) if record.qualities else ""
    return TextDescription(text=_fill_template(template, quality, record), style=style)


def describe(record: NoteRecord, cfg: AugmentConfig, rng_seed: int) -> TextDescription:
    """Pick a style by the configured weights, then augment."""
    rng = random.Random(rng_seed)
    styles = sorted(cfg.style_weights)
    weights = [cfg.style_weights[s] for s in styles]
    style = rng.choices(styles, weights=weights, k=1)[0]
    if cfg.augmenter is not None:
        return TextDescription(text=cfg.augmenter(record, style, rng_seed), style=style)
    templates = None
    if style == "natural" and cfg.natural_templates:
        templates = load_templates(style, cfg.natural_templates)
    elif style == "phrase" and cfg.phrase_templates:
        templates = load_templates(style, cfg.phrase_templates)
    return augment_labels(record, style, rng_seed, templates=templates)


def peak_normalize(samples: np.ndarray) -> np.ndarray:
    peak = np.max(np.abs(samples))
    if peak == 0:
        return samples.copy()
    return samples / peak


def pad_or_trim(samples: np.ndarray, length: int) -> np.ndarray:
    """Right-pad with silence or trim from the tail, keeping the attack."""
    if len(samples) >= length:
        return samples[:length].copy()
    out = np.zeros(length, dtype=samples.dtype)
    out[: len(samples)] = samples
    return out


def _derive_seed(base: int, epoch: int, index: int) -> int:
    return zlib.crc32(f"{base}:{epoch}:{index}".encode())


def normalize_clip(clip: AudioClip, cfg: StftConfig) -> AudioClip:
    if clip.sample_rate != cfg.sample_rate:
        raise InvalidAudioError(
            f"sample rate {clip.sample_rate} != configured {cfg.sample_rate}; "
            "resampling is not supported"
        )
    samples = pad_or_trim(peak_normalize(clip.samples), cfg.num_samples)
    return AudioClip(samples=samples, sample_rate=cfg.sample_rate)


def build_pairs(
    records: Iterable[NoteRecord],
    stft_cfg: StftConfig,
    augment_cfg: AugmentConfig,
    rng_seed: int,
    epoch: int = 0,
) -> Iterator[TrainingPair]:
    """Stream (spectral, description, record) triples in manifest order.

    Audio is peak-normalized and padded/trimmed to the fixed duration; one
    description is sampled per record per epoch.
    """
    for index, record in enumerate(records):
        clip = read_wav(record.audio_path)
        clip = normalize_clip(clip, stft_cfg)
        seed = _derive_seed(rng_seed, epoch, index)
        description = describe(record, augment_cfg, seed)
        yield TrainingPair(
            spectral=stft_plus(clip, stft_cfg),
            description=description,
            record=record,
        )
