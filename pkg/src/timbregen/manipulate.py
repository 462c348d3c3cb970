"""Zero-shot timbre editing on a trained latent diffusion model.

Three operations share the sampler: masked regeneration that keeps known
latent cells pinned at every step, global transformation that re-noises
the input to a chosen strength before denoising, and length adjustment
that builds an attack/sustain/release canvas and repaints the inserted
sustain columns window by window.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

from .diffusion import (
    NoiseSchedule,
    RespacedSchedule,
    cfg_noise,
    p_sample_step,
    q_sample,
    respace_schedule,
)
from .spectral import ShapeMismatchError, SpectralImage
from .vqgan import LatentCode, VqGan


@dataclass(frozen=True)
class RepaintConfig:
    jump_length: int = 10
    resample_count: int = 2
    w: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.jump_length < 1:
            raise ValueError("jump_length must be at least 1")
        if self.resample_count < 1:
            raise ValueError("resample_count must be at least 1")
        if self.w < 0:
            raise ValueError("guidance scale w must be non-negative")


@dataclass
class InpaintMask:
    """Binary latent-resolution grid; 1 = keep, 0 = regenerate."""

    grid: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid)
        if self.grid.ndim != 2:
            raise ShapeMismatchError("mask grid must be 2-D")
        if not np.isin(self.grid, (0, 1)).all():
            raise ValueError("mask values must be 0 or 1")
        self.grid = self.grid.astype(np.uint8)

    @classmethod
    def ones(cls, h: int, w: int) -> "InpaintMask":
        return cls(grid=np.ones((h, w), dtype=np.uint8))

    @classmethod
    def zeros(cls, h: int, w: int) -> "InpaintMask":
        return cls(grid=np.zeros((h, w), dtype=np.uint8))


def spectral_mask_to_latent(mask_spec: np.ndarray, r: int) -> InpaintMask:
    """AND-pool an H x W spectral mask down to latent cells.

    A latent cell stays "known" only when every covered spectral pixel is
    known, so drawn edits can never bleed into audio the user left alone.
    """
    mask_spec = np.asarray(mask_spec)
    if mask_spec.ndim != 2:
        raise ShapeMismatchError("spectral mask must be 2-D")
    h, w = mask_spec.shape
    if h % r or w % r:
        raise ShapeMismatchError(f"mask dims {h}x{w} not divisible by r={r}")
    if not np.isin(mask_spec, (0, 1)).all():
        raise ValueError("mask values must be 0 or 1")
    blocks = mask_spec.reshape(h // r, r, w // r, r)
    return InpaintMask(grid=blocks.all(axis=(1, 3)).astype(np.uint8))


def save_mask_png(path, mask_spec: np.ndarray) -> None:
    arr = (np.asarray(mask_spec, dtype=np.uint8) * 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def load_mask_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"))
    return (arr > 127).astype(np.uint8)


def mask_to_rle(mask: InpaintMask) -> dict:
    """Row-major run lengths; counts alternate starting with a run of zeros."""
    flat = mask.grid.reshape(-1)
    counts = []
    value = 0
    run = 0
    for v in flat:
        if v == value:
            run += 1
        else:
            counts.append(run)
            value = int(v)
            run = 1
    counts.append(run)
    return {"shape": list(mask.grid.shape), "counts": counts}


def rle_to_mask(payload: dict) -> InpaintMask:
    h, w = payload["shape"]
    flat = np.empty(h * w, dtype=np.uint8)
    pos = 0
    value = 0
    for count in payload["counts"]:
        flat[pos : pos + count] = value
        pos += count
        value = 1 - value
    if pos != h * w:
        raise ValueError("run lengths do not cover the mask")
    return InpaintMask(grid=flat.reshape(h, w))


def _derive_seed(tag: str, seed: int) -> int:
    return zlib.crc32(f"{tag}:{seed}".encode())


def repaint_time_sequence(
    T: int, jump_length: int, resample_count: int
) -> list[tuple[str, int]]:
    """Denoise/renoise walk from T down to 0 with resampling jumps.

    With resample_count=1 this is the plain descent T, T-1, ..., 1.  Every
    jump_length steps an anchor is revisited resample_count-1 extra times
    by re-noising jump_length single steps upward and descending again.
    """
    jumps = {
        t: resample_count - 1 for t in range(1, T - jump_length + 1, jump_length)
    }
    seq: list[tuple[str, int]] = []
    t = T
    while t >= 1:
        seq.append(("denoise", t))
        t -= 1
        if t >= 1 and jumps.get(t, 0) > 0:
            jumps[t] -= 1
            for _ in range(jump_length):
                t += 1
                seq.append(("renoise", t))
    return seq


def _spaced(schedule: NoiseSchedule, steps_override: int | None) -> RespacedSchedule:
    if steps_override is not None:
        return respace_schedule(schedule, steps_override)
    return RespacedSchedule(schedule, np.arange(1, schedule.T + 1))


@torch.no_grad()
def repaint(
    predictor,
    schedule: NoiseSchedule,
    z_known: LatentCode,
    mask: InpaintMask,
    e_cond: torch.Tensor,
    e_null: torch.Tensor,
    cfg: RepaintConfig,
    steps_override: int | None = None,
) -> LatentCode:
    """Regenerate the unknown cells while pinning known cells every step.

    The generation stream is seeded with cfg.seed exactly like plain
    sampling, so an all-zeros mask with resample_count=1 reproduces
    sample() bit for bit; the known-region noising uses a derived stream.
    """
    c, h, w = z_known.data.shape
    if mask.grid.shape != (h, w):
        raise ShapeMismatchError(
            f"mask {mask.grid.shape} does not match latent spatial dims {(h, w)}"
        )
    raw = torch.from_numpy(np.ascontiguousarray(z_known.data))[None]
    known_norm = predictor.normalize_latent(raw.to(torch.float32))
    keep = torch.from_numpy(mask.grid.astype(bool))[None, None]

    spaced = _spaced(schedule, steps_override)
    sub, tmap = spaced.schedule, spaced.timestep_map
    gen_rng = torch.Generator().manual_seed(cfg.seed)
    known_rng = torch.Generator().manual_seed(_derive_seed("repaint-known", cfg.seed))

    z = torch.randn(known_norm.shape, generator=gen_rng)
    for op, t in repaint_time_sequence(sub.T, cfg.jump_length, cfg.resample_count):
        if op == "denoise":
            t_orig = torch.tensor([float(tmap[t - 1])])
            eps_hat = cfg_noise(predictor, z, t_orig, e_cond, e_null, cfg.w)
            z_gen = p_sample_step(z, t, eps_hat, sub, gen_rng)
            if t - 1 == 0:
                known_part = known_norm
            else:
                eps_k = torch.randn(known_norm.shape, generator=known_rng)
                known_part = q_sample(known_norm, t - 1, eps_k, sub)
            z = torch.where(keep, known_part, z_gen)
        else:
            eps = torch.randn(z.shape, generator=gen_rng)
            z = math.sqrt(sub.alpha[t - 1]) * z + math.sqrt(sub.beta[t - 1]) * eps

    out = torch.where(keep, raw, predictor.denormalize_latent(z).to(raw.dtype))
    return LatentCode(data=out[0].numpy(), quantized=False)


@torch.no_grad()
def transform(
    predictor,
    schedule: NoiseSchedule,
    z_input: LatentCode,
    T0: int,
    e_cond: torch.Tensor,
    e_null: torch.Tensor,
    w: float,
    rng: torch.Generator,
    steps_override: int | None = None,
) -> LatentCode:
    """Noise the input to strength T0, then denoise under text guidance.

    T0=0 returns the input untouched; T0=T discards essentially all of the
    input and behaves like sampling from the prompt.
    """
    if not 0 <= T0 <= schedule.T:
        raise ValueError(f"T0={T0} outside [0, {schedule.T}]")
    if T0 == 0:
        return LatentCode(data=np.array(z_input.data, copy=True), quantized=False)

    spaced = _spaced(schedule, steps_override)
    sub, tmap = spaced.schedule, spaced.timestep_map
    start = int(np.searchsorted(tmap, T0, side="right"))
    start = max(start, 1)

    z = predictor.normalize_latent(
        torch.from_numpy(np.ascontiguousarray(z_input.data))[None].to(torch.float32)
    )
    eps = torch.randn(z.shape, generator=rng)
    z = q_sample(z, start, eps, sub)
    for i in reversed(range(start)):
        t_orig = torch.tensor([float(tmap[i])])
        eps_hat = cfg_noise(predictor, z, t_orig, e_cond, e_null, w)
        z = p_sample_step(z, i + 1, eps_hat, sub, rng)
    return LatentCode(data=predictor.denormalize_latent(z)[0].numpy(), quantized=False)


@dataclass
class ExtensionPlan:
    """Column bookkeeping for a resized latent canvas.

    ``source_cols[j]`` is the input column copied into target column j;
    ``known[j]`` is False only for inserted sustain repetitions, which the
    repainter must synthesize.
    """

    source_cols: np.ndarray
    known: np.ndarray
    attack_cols: int
    release_cols: int


def plan_extension(
    width: int,
    target_cols: int,
    attack_frac: float = 0.25,
    release_frac: float = 0.25,
) -> ExtensionPlan:
    attack = max(1, round(width * attack_frac))
    release = max(1, round(width * release_frac))
    sustain = width - attack - release
    if sustain < 1:
        raise ValueError(
            f"width {width} leaves no sustain region between attack {attack} "
            f"and release {release} columns"
        )
    if target_cols < attack + release:
        raise ValueError(
            f"target of {target_cols} columns is below the attack+release "
            f"minimum of {attack + release}"
        )
    middle = target_cols - attack - release
    source = np.empty(target_cols, dtype=np.int64)
    known = np.ones(target_cols, dtype=bool)
    source[:attack] = np.arange(attack)
    for j in range(middle):
        source[attack + j] = attack + (j % sustain)
        known[attack + j] = j < sustain
    source[attack + middle :] = np.arange(width - release, width)
    return ExtensionPlan(
        source_cols=source, known=known, attack_cols=attack, release_cols=release
    )


def build_extension_canvas(
    z: np.ndarray, plan: ExtensionPlan
) -> tuple[np.ndarray, InpaintMask]:
    canvas = z[:, :, plan.source_cols]
    mask = np.broadcast_to(
        plan.known[None, :].astype(np.uint8), (z.shape[1], len(plan.known))
    )
    return canvas, InpaintMask(grid=np.array(mask))


@dataclass
class ExtendResult:
    image: SpectralImage
    latent: LatentCode
    requested_frames: int
    actual_frames: int

    @property
    def rounded(self) -> bool:
        return self.actual_frames != self.requested_frames


def extend_length(
    model: VqGan,
    predictor,
    schedule: NoiseSchedule,
    x: SpectralImage,
    target_frames: int,
    e_cond: torch.Tensor,
    e_null: torch.Tensor,
    cfg: RepaintConfig,
    attack_frac: float = 0.25,
    release_frac: float = 0.25,
    steps_override: int | None = None,
) -> ExtendResult:
    """Resize a note to target_frames frames, repainting inserted sustain.

    The canvas keeps the original attack on the left and release on the
    right; when the canvas is wider than the model's native width, windows
    of native width are repainted independently and averaged where they
    overlap (known cells are taken from the canvas directly).
    """
    r = model.cfg.downsample_factor
    _, height, width = x.data.shape
    if height % r or width % r:
        raise ShapeMismatchError("input image dims must be divisible by r")
    if target_frames < 1:
        raise ValueError("target_frames must be positive")

    target_cols = -(-target_frames // r)
    actual_frames = target_cols * r
    native_cols = width // r

    z = model.encode(x)
    plan = plan_extension(native_cols, target_cols, attack_frac, release_frac)
    canvas, mask = build_extension_canvas(z.data, plan)

    if mask.grid.all():
        final = canvas
    else:
        total = np.zeros_like(canvas, dtype=np.float64)
        hits = np.zeros(target_cols, dtype=np.int64)
        stride = max(1, native_cols // 2)
        starts = list(range(0, target_cols - native_cols + 1, stride))
        if not starts or starts[-1] != target_cols - native_cols:
            starts.append(target_cols - native_cols)
        for w_index, start in enumerate(starts):
            window = slice(start, start + native_cols)
            piece = repaint(
                predictor,
                schedule,
                LatentCode(data=canvas[:, :, window], quantized=False),
                InpaintMask(grid=mask.grid[:, window]),
                e_cond,
                e_null,
                RepaintConfig(
                    jump_length=cfg.jump_length,
                    resample_count=cfg.resample_count,
                    w=cfg.w,
                    seed=_derive_seed(f"extend-window-{w_index}", cfg.seed),
                ),
                steps_override=steps_override,
            )
            total[:, :, window] += piece.data
            hits[window] += 1
        averaged = total / hits[None, None, :]
        final = np.where(plan.known[None, None, :], canvas, averaged).astype(
            canvas.dtype
        )

    latent = LatentCode(data=final, quantized=False)
    return ExtendResult(
        image=model.decode(latent),
        latent=latent,
        requested_frames=target_frames,
        actual_frames=actual_frames,
    )
