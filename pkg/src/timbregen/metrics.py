"""Objective evaluation: Inception Score, Fréchet distance, precision/recall.

Feature extraction is pluggable.  The spectral-statistics extractor is
training-free and fully deterministic; the classifier extractor embeds
clips with a small instrument-family classifier and reports its softmax
as the class distribution for the Inception Score.
"""

from __future__ import annotations

import datetime as _dt
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .spectral import AudioClip, SpectralImage, StftConfig, read_wav, stft_plus


@dataclass
class FeatureSet:
    matrix: np.ndarray
    source: str
    extractor_id: str

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] < 2:
            raise ValueError("feature matrix must be N x F with N >= 2")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("feature matrix contains non-finite values")
        if self.source not in ("real", "generated"):
            raise ValueError(f"unknown source tag {self.source!r}")


@dataclass
class MetricReport:
    is_score: float
    fad: float
    precision: float
    recall: float
    n_real: int
    n_gen: int
    extractor_id: str

    def __post_init__(self):
        if self.is_score < 1.0 - 1e-9:
            raise ValueError(f"inception score {self.is_score} below 1")
        if self.fad < 0:
            raise ValueError(f"negative distance {self.fad}")
        for name in ("precision", "recall"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "is_score": self.is_score,
            "fad": self.fad,
            "precision": self.precision,
            "recall": self.recall,
            "n_real": self.n_real,
            "n_gen": self.n_gen,
            "extractor_id": self.extractor_id,
        }


def inception_score(probs: np.ndarray) -> float:
    """exp of the mean KL divergence between each row and the mean row."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] < 2:
        raise ValueError("probs must be N x K with K >= 2")
    if np.any(probs < 0):
        raise ValueError("probabilities must be non-negative")
    sums = probs.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-5):
        raise ValueError("probability rows must sum to 1 within 1e-5")
    marginal = probs.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl_terms = np.where(probs > 0, probs * (np.log(probs) - np.log(marginal)), 0.0)
    return float(np.exp(kl_terms.sum(axis=1).mean()))


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Square root of a (near-)PSD matrix through symmetrized eigh.

    The roundoff tolerance scales with the largest eigenvalue so feature
    sets far from unit scale do not trip the negativity check.
    """
    sym = (mat + mat.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    tol = 1e-8 * max(1.0, float(np.abs(vals).max(initial=0.0)))
    if np.any(vals < -tol):
        raise ValueError(
            f"matrix square root failed: eigenvalue {vals.min():.3g} below tolerance"
        )
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fad(real: FeatureSet, gen: FeatureSet) -> float:
    """Fréchet distance between Gaussian fits of the two feature sets."""
    if real.matrix.shape[1] != gen.matrix.shape[1]:
        raise ValueError(
            f"feature dims differ: {real.matrix.shape[1]} vs {gen.matrix.shape[1]}"
        )
    f_dim = real.matrix.shape[1]
    for fs in (real, gen):
        if fs.matrix.shape[0] < f_dim + 1:
            warnings.warn(
                f"{fs.source} set has {fs.matrix.shape[0]} rows for {f_dim} "
                "features; covariance estimate is rank-deficient",
                stacklevel=2,
            )
    mu_r, mu_g = real.matrix.mean(axis=0), gen.matrix.mean(axis=0)
    cov_r = np.atleast_2d(np.cov(real.matrix, rowvar=False))
    cov_g = np.atleast_2d(np.cov(gen.matrix, rowvar=False))
    sr = _psd_sqrt(cov_r)
    sg = _psd_sqrt(cov_g)
    # tr((Σ_r Σ_g)^{1/2}) equals the nuclear norm of S_r S_g; summing
    # singular values keeps roundoff in rank-deficient directions linear
    # instead of amplifying it under a square root.
    cross_trace = float(np.linalg.svd(sr @ sg, compute_uv=False).sum())
    value = float(
        ((mu_r - mu_g) ** 2).sum()
        + np.trace(cov_r)
        + np.trace(cov_g)
        - 2.0 * cross_trace
    )
    if value < 0:
        if value < -1e-6:
            raise ValueError(f"distance computation produced {value}")
        value = 0.0
    return value


def precision_recall(real: FeatureSet, gen: FeatureSet, k: int = 3) -> tuple[float, float]:
    """k-NN manifold estimate: coverage of each set by the other's balls."""
    if real.matrix.shape[1] != gen.matrix.shape[1]:
        raise ValueError("feature dims differ")
    n_real, n_gen = real.matrix.shape[0], gen.matrix.shape[0]
    if not 1 <= k < min(n_real, n_gen):
        raise ValueError(f"k={k} must satisfy 1 <= k < min(N_real, N_gen)")

    def radii(points: np.ndarray) -> np.ndarray:
        d = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=2)
        return np.sort(d, axis=1)[:, k]  # column 0 is the self-distance

    def covered(points: np.ndarray, manifold: np.ndarray, r: np.ndarray) -> float:
        d = np.linalg.norm(manifold[:, None, :] - points[None, :, :], axis=2)
        return float((d <= r[:, None]).any(axis=0).mean())

    precision = covered(gen.matrix, real.matrix, radii(real.matrix))
    recall = covered(real.matrix, gen.matrix, radii(gen.matrix))
    return precision, recall


# ---------------------------------------------------------------------------
# Feature extractors


class SpectralStatsExtractor:
    """Training-free features: band log-energies plus envelope statistics.

    The normalized band-energy distribution doubles as the class
    distribution for the Inception Score.
    """

    def __init__(self, num_bands: int = 8, floor: float = 1e-12):
        if num_bands < 2:
            raise ValueError("need at least 2 bands")
        self.num_bands = num_bands
        self.floor = floor
        self.id = "spectral-stats"

    def _band_energies(self, clip: AudioClip) -> np.ndarray:
        spec = np.abs(np.fft.rfft(clip.samples)) ** 2
        bands = np.array_split(spec, self.num_bands)
        return np.array([b.sum() for b in bands]) + self.floor

    def features(self, clips: list[AudioClip]) -> np.ndarray:
        rows = []
        for clip in clips:
            energy = self._band_energies(clip)
            spec = np.abs(np.fft.rfft(clip.samples))
            freqs = np.arange(len(spec))
            total = spec.sum() + self.floor
            centroid = float((freqs * spec).sum() / total)
            bandwidth = float(
                np.sqrt(((freqs - centroid) ** 2 * spec).sum() / total)
            )
            rms = float(np.sqrt(np.mean(clip.samples**2)))
            crossings = float(np.mean(np.abs(np.diff(np.signbit(clip.samples)))))
            rows.append(
                np.concatenate(
                    [np.log(energy), [centroid, bandwidth, np.log(rms + self.floor), crossings]]
                )
            )
        return np.stack(rows)

    def class_probs(self, clips: list[AudioClip]) -> np.ndarray:
        rows = []
        for clip in clips:
            energy = self._band_energies(clip)
            rows.append(energy / energy.sum())
        return np.stack(rows)


class FamilyClassifier(nn.Module):
    """Tiny conv net over spectral images; penultimate layer is the feature."""

    def __init__(self, num_classes: int, width: int = 16, feature_dim: int = 32):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(3, width, 3, padding=1),
            nn.GroupNorm(min(8, width), width),
            nn.SiLU(),
            nn.Conv2d(width, width * 2, 4, stride=2, padding=1),
            nn.GroupNorm(min(8, width * 2), width * 2),
            nn.SiLU(),
            nn.Conv2d(width * 2, width * 2, 4, stride=2, padding=1),
            nn.AdaptiveAvgPool2d(1),
        )
        self.embed = nn.Linear(width * 2, feature_dim)
        self.head = nn.Linear(feature_dim, num_classes)
        self.num_classes = num_classes

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.body(x).flatten(1)
        feats = self.embed(h)
        return feats, self.head(F.silu(feats))


def train_family_classifier(
    images: list[SpectralImage],
    labels: list[int],
    num_classes: int,
    steps: int = 200,
    lr: float = 1e-3,
    seed: int = 0,
) -> FamilyClassifier:
    torch.manual_seed(seed)
    model = FamilyClassifier(num_classes)
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    x = torch.from_numpy(np.stack([im.data for im in images])).to(torch.float32)
    y = torch.tensor(labels, dtype=torch.long)
    for _ in range(steps):
        _, logits = model(x)
        loss = F.cross_entropy(logits, y)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    return model.eval()


class ClassifierExtractor:
    """Features and class probabilities from a trained family classifier."""

    def __init__(self, model: FamilyClassifier, stft_config: StftConfig):
        self.model = model.eval()
        self.stft_config = stft_config
        self.id = "classifier"

    def _images(self, clips: list[AudioClip]) -> torch.Tensor:
        data = [stft_plus(clip, self.stft_config).data for clip in clips]
        return torch.from_numpy(np.stack(data)).to(torch.float32)

    @torch.no_grad()
    def features(self, clips: list[AudioClip]) -> np.ndarray:
        feats, _ = self.model(self._images(clips))
        return feats.numpy().astype(np.float64)

    @torch.no_grad()
    def class_probs(self, clips: list[AudioClip]) -> np.ndarray:
        _, logits = self.model(self._images(clips))
        return torch.softmax(logits, dim=1).numpy().astype(np.float64)


_EXTRACTORS: dict[str, object] = {}


def register_extractor(name: str, extractor) -> None:
    _EXTRACTORS[name] = extractor


def get_extractor(name: str):
    if name not in _EXTRACTORS:
        raise KeyError(
            f"unknown extractor {name!r}; registered: {sorted(_EXTRACTORS)}"
        )
    return _EXTRACTORS[name]


register_extractor("spectral-stats", SpectralStatsExtractor())


def extract_features(
    clips: list[AudioClip], extractor: str, source: str = "real"
) -> FeatureSet:
    ex = get_extractor(extractor)
    if len(clips) < 2:
        raise ValueError("need at least 2 clips for Gaussian fitting")
    return FeatureSet(matrix=ex.features(clips), source=source, extractor_id=ex.id)


# ---------------------------------------------------------------------------
# Directory-level evaluation


@dataclass(frozen=True)
class EvalConfig:
    extractor: str = "spectral-stats"
    k: int = 3
    report_path: str | None = None

    def to_dict(self) -> dict:
        return {"extractor": self.extractor, "k": self.k, "report_path": self.report_path}


def _load_dir(path: Path) -> tuple[list[AudioClip], list[str], list[str]]:
    clips, names, bad = [], [], []
    for wav in sorted(path.glob("*.wav")):
        try:
            clips.append(read_wav(wav))
            names.append(wav.name)
        except Exception as exc:  # noqa: BLE001 - report and continue
            bad.append(f"{wav.name}: {exc}")
    return clips, names, bad


def evaluate(real_dir, gen_dir, config: EvalConfig | None = None) -> MetricReport:
    """Run all three metrics over two directories of WAV files.

    Writes a JSON report next to gen_dir (or at config.report_path) with
    the metric values, configuration echo, and timestamps.
    """
    config = config or EvalConfig()
    real_dir, gen_dir = Path(real_dir), Path(gen_dir)
    started = _dt.datetime.now(_dt.timezone.utc)

    real_clips, real_names, real_bad = _load_dir(real_dir)
    gen_clips, gen_names, gen_bad = _load_dir(gen_dir)
    problems = [f"real/{p}" for p in real_bad] + [f"generated/{p}" for p in gen_bad]
    if len(real_clips) < 2 or len(gen_clips) < 2:
        detail = f" (unreadable: {'; '.join(problems)})" if problems else ""
        raise ValueError(
            f"need at least 2 readable WAVs per side, got {len(real_clips)} real "
            f"and {len(gen_clips)} generated{detail}"
        )

    ex = get_extractor(config.extractor)
    real_set = FeatureSet(ex.features(real_clips), "real", ex.id)
    gen_set = FeatureSet(ex.features(gen_clips), "generated", ex.id)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        distance = fad(real_set, gen_set)
    precision, recall = precision_recall(real_set, gen_set, k=config.k)
    score = inception_score(ex.class_probs(gen_clips))

    report = MetricReport(
        is_score=max(score, 1.0),
        fad=distance,
        precision=precision,
        recall=recall,
        n_real=len(real_clips),
        n_gen=len(gen_clips),
        extractor_id=ex.id,
    )
    payload = {
        **report.to_dict(),
        "config": config.to_dict(),
        "real_dir": str(real_dir),
        "gen_dir": str(gen_dir),
        "real_files": real_names,
        "gen_files": gen_names,
        "unreadable": problems,
        "started_at": started.isoformat(),
        "finished_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    out_path = (
        Path(config.report_path)
        if config.report_path
        else gen_dir / "metrics_report.json"
    )
    out_path.write_text(json.dumps(payload, indent=2) + "\n")
    return report
