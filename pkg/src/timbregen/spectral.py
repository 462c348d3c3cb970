"""Phase-explicit spectral codec.

Audio is converted to a 3-channel image (log-magnitude, sine of phase,
cosine of phase of the STFT) and back.  Because phase travels with the
magnitude, inversion is a plain overlap-add and no phase-retrieval step
ever runs.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class InvalidAudioError(ValueError):
    """Audio samples are non-finite or otherwise unusable."""


class ShapeMismatchError(ValueError):
    """Array dimensions disagree with the active configuration."""


class DegeneratePhaseError(ValueError):
    """A (sin, cos) phase pair is too small in modulus to renormalize."""


def _periodic_hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _periodic_hamming(n: int) -> np.ndarray:
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(n) / n)


_WINDOW_FNS = {
    "hann": _periodic_hann,
    "hamming": _periodic_hamming,
    "rect": lambda n: np.ones(n, dtype=np.float64),
}

# Minimum modulus below which a (sin, cos) pair is considered corrupted
# rather than renormalizable.
_PHASE_MODULUS_FLOOR = 0.5


def _cola_deviation(window: np.ndarray, hop: int) -> float:
    """Relative peak-to-peak ripple of the overlap-added window envelope."""
    n = len(window)
    frames = max(8, (6 * n) // hop)
    env = np.zeros((frames - 1) * hop + n)
    for m in range(frames):
        env[m * hop : m * hop + n] += window
    interior = env[n : (frames - 1) * hop]
    if interior.size == 0:
        return 0.0
    return float((interior.max() - interior.min()) / max(interior.mean(), 1e-12))


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis parameters for the phase-explicit transform.

    The window must satisfy constant overlap-add at the chosen hop; the
    reconstruction additionally normalizes by the squared-window envelope
    per sample, so the inverse is exact wherever that envelope is positive.
    """

    window_size: int = 1024
    hop_size: int = 256
    window_fn: str = "hann"
    eps_floor: float = 1e-5
    sample_rate: int = 16000
    duration: float = 4.0

    def __post_init__(self):
        if self.window_size < 2 or self.window_size % 2 != 0:
            raise ValueError("window_size must be a positive even integer")
        if not 1 <= self.hop_size <= self.window_size:
            raise ValueError("hop_size must satisfy 1 <= hop <= window_size")
        if self.window_fn not in _WINDOW_FNS:
            raise ValueError(f"unknown window_fn {self.window_fn!r}")
        if self.eps_floor <= 0:
            raise ValueError("eps_floor must be positive")
        if self.sample_rate <= 0 or self.duration <= 0:
            raise ValueError("sample_rate and duration must be positive")
        dev = _cola_deviation(self.window(), self.hop_size)
        if dev > 1e-6:
            raise ValueError(
                f"window {self.window_fn!r} does not satisfy COLA at hop "
                f"{self.hop_size} (ripple {dev:.3g})"
            )

    def window(self) -> np.ndarray:
        return _WINDOW_FNS[self.window_fn](self.window_size)

    @property
    def num_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))

    @property
    def freq_bins(self) -> int:
        return self.window_size // 2 + 1

    @property
    def num_frames(self) -> int:
        return 1 + int(np.ceil(self.num_samples / self.hop_size))

    def to_dict(self) -> dict:
        return {
            "window_size": self.window_size,
            "hop_size": self.hop_size,
            "window_fn": self.window_fn,
            "eps_floor": self.eps_floor,
            "sample_rate": self.sample_rate,
            "duration": self.duration,
        }


@dataclass
class AudioClip:
    """Fixed-length mono audio, samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def validate(self) -> None:
        if self.samples.ndim != 1:
            raise ShapeMismatchError("audio must be a 1-D sample array")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidAudioError("audio contains non-finite samples")


@dataclass
class SpectralImage:
    """3 x H x W array: log-magnitude, sine phase, cosine phase.

    ``stft_config`` points back at the configuration that produced the
    image when it came from :func:`stft_plus`; decoded or synthetic images
    may carry the config of the pipeline that owns them.
    """

    data: np.ndarray
    stft_config: StftConfig | None = field(default=None, repr=False)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)

    @property
    def freq_bins(self) -> int:
        return self.data.shape[1]

    @property
    def frames(self) -> int:
        return self.data.shape[2]

    def validate(self, strict_phase: bool = True) -> None:
        if self.data.ndim != 3 or self.data.shape[0] != 3:
            raise ShapeMismatchError(
                f"spectral image must be 3 x H x W, got {self.data.shape}"
            )
        if not np.all(np.isfinite(self.data)):
            raise InvalidAudioError("spectral image contains non-finite entries")
        if strict_phase:
            sq = self.data[1] ** 2 + self.data[2] ** 2
            if np.any(np.abs(sq - 1.0) > 1e-4):
                raise DegeneratePhaseError(
                    "sin^2 + cos^2 deviates from 1 by more than 1e-4"
                )
        if self.stft_config is not None:
            floor = np.log(self.stft_config.eps_floor)
            if np.any(self.data[0] < floor - 1e-9):
                raise InvalidAudioError("log-magnitude below the configured floor")


def silence_values(cfg: StftConfig) -> tuple[float, float, float]:
    """Channel values of a silent bin: floor log-magnitude, phase angle 0."""
    return float(np.log(cfg.eps_floor)), 0.0, 1.0


def _frame_signal(s: np.ndarray, cfg: StftConfig) -> np.ndarray:
    frames = cfg.num_frames
    left = cfg.window_size // 2
    total = (frames - 1) * cfg.hop_size + cfg.window_size
    padded = np.zeros(total)
    padded[left : left + len(s)] = s
    idx = (
        np.arange(cfg.window_size)[None, :]
        + cfg.hop_size * np.arange(frames)[:, None]
    )
    return padded[idx]


def stft_plus(clip: AudioClip, cfg: StftConfig) -> SpectralImage:
    """Forward transform to the 3-channel spectral representation.

    The clip must already have the configured fixed length; padding or
    trimming to that length is the data pipeline's job.
    """
    clip.validate()
    s = clip.samples
    if clip.sample_rate != cfg.sample_rate:
        raise ShapeMismatchError(
            f"clip sample rate {clip.sample_rate} != config {cfg.sample_rate}"
        )
    if len(s) != cfg.num_samples:
        raise ShapeMismatchError(
            f"clip length {len(s)} != configured {cfg.num_samples} samples"
        )
    segs = _frame_signal(s, cfg) * cfg.window()
    spec = np.fft.rfft(segs, axis=1)  # frames x bins
    mag = np.abs(spec)
    angle = np.angle(spec)
    data = np.stack(
        [
            np.log(np.maximum(mag, cfg.eps_floor)).T,
            np.sin(angle).T,
            np.cos(angle).T,
        ]
    )
    return SpectralImage(data=data, stft_config=cfg)


def istft_plus(x: SpectralImage, cfg: StftConfig) -> AudioClip:
    """Inverse transform: rebuild the complex STFT and overlap-add.

    (sin, cos) pairs are renormalized to unit modulus first; a modulus
    below 0.5 indicates corrupted input and raises
    :class:`DegeneratePhaseError` instead of being silently fixed.
    """
    data = x.data
    if data.ndim != 3 or data.shape[0] != 3:
        raise ShapeMismatchError(f"expected 3 x H x W, got {data.shape}")
    if data.shape[1] != cfg.freq_bins:
        raise ShapeMismatchError(
            f"{data.shape[1]} frequency bins but config implies {cfg.freq_bins}"
        )
    if not np.all(np.isfinite(data)):
        raise InvalidAudioError("spectral image contains non-finite entries")
    logmag, sin_p, cos_p = data
    modulus = np.hypot(sin_p, cos_p)
    if np.any(modulus < _PHASE_MODULUS_FLOOR):
        raise DegeneratePhaseError(
            f"phase modulus below {_PHASE_MODULUS_FLOOR}; input looks corrupted"
        )
    spec = np.exp(logmag) * (cos_p / modulus + 1j * sin_p / modulus)

    frames = spec.shape[1]
    win = cfg.window()
    segs = np.fft.irfft(spec.T, n=cfg.window_size, axis=1) * win
    total = (frames - 1) * cfg.hop_size + cfg.window_size
    idx = (
        np.arange(cfg.window_size)[None, :]
        + cfg.hop_size * np.arange(frames)[:, None]
    )
    out = np.zeros(total)
    den = np.zeros(total)
    np.add.at(out, idx, segs)
    np.add.at(den, idx, np.broadcast_to(win * win, segs.shape))

    left = cfg.window_size // 2
    n = cfg.num_samples
    num = out[left : left + n]
    d = den[left : left + n]
    covered = d > 1e-12
    samples = np.where(covered, num / np.where(covered, d, 1.0), 0.0)
    return AudioClip(samples=samples, sample_rate=cfg.sample_rate)


def spectral_to_image(x: SpectralImage) -> np.ndarray:
    """8-bit grayscale raster of the log-magnitude channel.

    Frequency runs bottom-to-top; values are min/max normalized, with a
    constant channel mapping to mid-gray.
    """
    x.validate(strict_phase=False)
    ch0 = x.data[0]
    lo = float(ch0.min())
    hi = float(ch0.max())
    if hi - lo < 1e-12:
        raster = np.full(ch0.shape, 128, dtype=np.uint8)
    else:
        raster = np.round((ch0 - lo) / (hi - lo) * 255.0).astype(np.uint8)
    return raster[::-1, :].copy()


def save_raster_png(raster: np.ndarray, path: str | Path) -> None:
    from PIL import Image

    Image.fromarray(raster, mode="L").save(str(path), format="PNG")


def fit_to_grid(x: SpectralImage, multiple: int) -> SpectralImage:
    """Crop/pad to dimensions divisible by ``multiple``.

    Frequency rows are cropped from the top (highest bins, typically just
    the Nyquist row); time frames are padded on the right with silence so
    the note onset stays at frame 0.
    """
    if multiple < 1:
        raise ValueError("multiple must be >= 1")
    _, h, w = x.data.shape
    new_h = (h // multiple) * multiple
    if new_h == 0:
        raise ShapeMismatchError(f"{h} rows cannot be cropped to a multiple of {multiple}")
    new_w = int(np.ceil(w / multiple)) * multiple
    data = x.data[:, :new_h, :]
    if new_w > w:
        cfg = x.stft_config or StftConfig()
        lm, sn, cs = silence_values(cfg)
        pad = np.empty((3, new_h, new_w - w))
        pad[0] = lm
        pad[1] = sn
        pad[2] = cs
        data = np.concatenate([data, pad], axis=2)
    return SpectralImage(data=data.copy(), stft_config=x.stft_config)


def unfit_from_grid(x: SpectralImage, freq_bins: int, frames: int) -> SpectralImage:
    """Undo :func:`fit_to_grid`: restore cropped top rows as silence, drop padding."""
    _, h, w = x.data.shape
    if freq_bins < h or frames > w:
        raise ShapeMismatchError(
            f"cannot restore {freq_bins}x{frames} from fitted {h}x{w}"
        )
    data = x.data[:, :, :frames]
    if freq_bins > h:
        cfg = x.stft_config or StftConfig()
        lm, sn, cs = silence_values(cfg)
        pad = np.empty((3, freq_bins - h, frames))
        pad[0] = lm
        pad[1] = sn
        pad[2] = cs
        data = np.concatenate([data, pad], axis=1)
    return SpectralImage(data=data.copy(), stft_config=x.stft_config)


# --- 16-bit PCM mono WAV I/O -------------------------------------------------


def write_wav(path: str | Path, clip: AudioClip) -> None:
    clip.validate()
    pcm = np.round(np.clip(clip.samples, -1.0, 1.0) * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(clip.sample_rate)
        f.writeframes(pcm.tobytes())


def read_wav(path: str | Path) -> AudioClip:
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise InvalidAudioError(f"{path}: expected mono, got {f.getnchannels()} channels")
        if f.getsampwidth() != 2:
            raise InvalidAudioError(f"{path}: expected 16-bit PCM")
        rate = f.getframerate()
        raw = f.readframes(f.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioClip(samples=pcm.astype(np.float64) / 32767.0, sample_rate=rate)


# --- versioned binary container for spectral images --------------------------

_SPECTRAL_MAGIC = b"TGSI"
_SPECTRAL_VERSION = 1
_HEADER = struct.Struct("<4sI III II I d d 16s")


def save_spectral(path_or_buf, x: SpectralImage, cfg: StftConfig | None = None) -> None:
    """Write the versioned container: header with shape and config echo,
    then row-major float32 data."""
    cfg = cfg or x.stft_config or StftConfig()
    c, h, w = x.data.shape
    header = _HEADER.pack(
        _SPECTRAL_MAGIC,
        _SPECTRAL_VERSION,
        c,
        h,
        w,
        cfg.window_size,
        cfg.hop_size,
        cfg.sample_rate,
        cfg.eps_floor,
        cfg.duration,
        cfg.window_fn.encode("ascii").ljust(16, b"\0"),
    )
    payload = np.ascontiguousarray(x.data, dtype="<f4").tobytes()
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(header + payload)
    else:
        with open(path_or_buf, "wb") as f:
            f.write(header + payload)


def load_spectral(path_or_buf) -> tuple[SpectralImage, StftConfig]:
    if hasattr(path_or_buf, "read"):
        blob = path_or_buf.read()
    else:
        with open(path_or_buf, "rb") as f:
            blob = f.read()
    if len(blob) < _HEADER.size:
        raise ValueError("truncated spectral container")
    (magic, version, c, h, w, win, hop, rate, eps, dur, fn) = _HEADER.unpack_from(blob)
    if magic != _SPECTRAL_MAGIC:
        raise ValueError("not a spectral container")
    if version != _SPECTRAL_VERSION:
        raise ValueError(f"unsupported container version {version}")
    expected = c * h * w * 4
    body = blob[_HEADER.size :]
    if len(body) != expected:
        raise ValueError(f"payload is {len(body)} bytes, expected {expected}")
    data = np.frombuffer(body, dtype="<f4").reshape(c, h, w).astype(np.float64)
    cfg = StftConfig(
        window_size=win,
        hop_size=hop,
        window_fn=fn.rstrip(b"\0").decode("ascii"),
        eps_floor=eps,
        sample_rate=rate,
        duration=dur,
    )
    return SpectralImage(data=data, stft_config=cfg), cfg
