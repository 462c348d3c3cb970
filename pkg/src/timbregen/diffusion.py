"""Latent denoising diffusion.

Forward noising, a FiLM-conditioned U-Net noise predictor, the simple
noise-matching training objective with conditioning dropout, and ancestral
sampling with classifier-free guidance.  The variance of the reverse step
is fixed to beta_t; sampling may stride the training schedule down to a
smaller number of uniform steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .spectral import ShapeMismatchError


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise rates; alpha_bar is the running signal fraction."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        for name in ("beta", "alpha", "alpha_bar"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, arr)
            if arr.shape != (self.T,):
                raise ValueError(f"{name} must have length T={self.T}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if np.any(self.beta <= 0) or np.any(self.beta >= 1):
            raise ValueError("beta values must lie strictly in (0, 1)")
        if not np.allclose(self.alpha, 1.0 - self.beta, atol=1e-12):
            raise ValueError("alpha must equal 1 - beta")
        if np.any(self.alpha_bar <= 0) or np.any(self.alpha_bar > 1):
            raise ValueError("alpha_bar values must lie in (0, 1]")
        if self.T > 1 and not np.all(np.diff(self.alpha_bar) < 0):
            raise ValueError("alpha_bar must be strictly decreasing")

    @classmethod
    def from_betas(cls, beta: np.ndarray) -> "NoiseSchedule":
        beta = np.asarray(beta, dtype=np.float64)
        alpha = 1.0 - beta
        return cls(T=len(beta), beta=beta, alpha=alpha, alpha_bar=np.cumprod(alpha))


def make_schedule(
    T: int,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    kind: str = "linear",
) -> NoiseSchedule:
    if T < 1:
        raise ValueError("T must be at least 1")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    if kind == "linear":
        return NoiseSchedule.from_betas(np.linspace(beta_start, beta_end, T))
    if kind == "cosine":
        s = 0.008
        steps = np.arange(T + 1, dtype=np.float64)
        f = np.cos(((steps / T) + s) / (1 + s) * math.pi / 2) ** 2
        alpha_bar = f[1:] / f[0]
        beta = np.clip(1.0 - alpha_bar / np.concatenate([[1.0], alpha_bar[:-1]]), 1e-8, 0.999)
        return NoiseSchedule.from_betas(beta)
    raise ValueError(f"unknown schedule kind {kind!r}")


@dataclass(frozen=True)
class RespacedSchedule:
    """A strided view of a training schedule for faster sampling.

    ``timestep_map[i]`` is the original (1-based) timestep fed to the noise
    predictor when the strided schedule is at its own step i+1.
    """

    schedule: NoiseSchedule
    timestep_map: np.ndarray


def respace_schedule(schedule: NoiseSchedule, num_steps: int) -> RespacedSchedule:
    """Keep num_steps uniformly spaced timesteps, recomputing the betas."""
    if num_steps < 1:
        raise ValueError("num_steps must be at least 1")
    if num_steps >= schedule.T:
        return RespacedSchedule(
            schedule=schedule, timestep_map=np.arange(1, schedule.T + 1)
        )
    idx = np.unique(np.round(np.linspace(0, schedule.T - 1, num_steps)).astype(int))
    abar = schedule.alpha_bar[idx]
    prev = np.concatenate([[1.0], abar[:-1]])
    sub = NoiseSchedule.from_betas(1.0 - abar / prev)
    return RespacedSchedule(schedule=sub, timestep_map=idx + 1)


@dataclass(frozen=True)
class GuidanceConfig:
    w: float = 2.0
    p_uncond: float = 0.1

    def __post_init__(self):
        if self.w < 0:
            raise ValueError("guidance scale w must be non-negative")
        if not 0 <= self.p_uncond <= 1:
            raise ValueError("p_uncond must lie in [0, 1]")


@dataclass
class DiffusionState:
    z_t: torch.Tensor
    t: int

    def __post_init__(self):
        if not isinstance(self.t, int) or self.t < 0:
            raise ValueError("t must be a non-negative integer")


def q_sample(
    z0: torch.Tensor, t: int, eps: torch.Tensor, schedule: NoiseSchedule
) -> torch.Tensor:
    """Closed-form forward noising; t=0 returns z0 unchanged (alpha_bar_0 = 1)."""
    if eps.shape != z0.shape:
        raise ShapeMismatchError("noise must match the latent shape")
    if not 0 <= t <= schedule.T:
        raise ValueError(f"t={t} outside [0, {schedule.T}]")
    if t == 0:
        return z0.clone()
    abar = float(schedule.alpha_bar[t - 1])
    return math.sqrt(abar) * z0 + math.sqrt(1.0 - abar) * eps


def p_sample_step(
    z_t: torch.Tensor,
    t: int,
    eps_hat: torch.Tensor,
    schedule: NoiseSchedule,
    rng: torch.Generator,
) -> torch.Tensor:
    """One ancestral reverse step; deterministic at t=1, variance beta_t above."""
    if not 1 <= t <= schedule.T:
        raise ValueError(f"t={t} outside [1, {schedule.T}]")
    if eps_hat.shape != z_t.shape:
        raise ShapeMismatchError("predicted noise must match the latent shape")
    beta = float(schedule.beta[t - 1])
    alpha = float(schedule.alpha[t - 1])
    abar = float(schedule.alpha_bar[t - 1])
    mu = (z_t - (beta / math.sqrt(1.0 - abar)) * eps_hat) / math.sqrt(alpha)
    if t == 1:
        return mu
    xi = torch.randn(z_t.shape, generator=rng, dtype=z_t.dtype)
    return mu + math.sqrt(beta) * xi


def cfg_noise(
    predictor: Callable[[torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor],
    z_t: torch.Tensor,
    t: torch.Tensor,
    e_cond: torch.Tensor,
    e_null: torch.Tensor,
    w: float,
) -> torch.Tensor:
    """Guided noise estimate e_null + w * (e_cond - e_null).

    Always exactly two predictor calls; the w=0 and w=1 endpoints return
    the respective single-condition estimate bit-for-bit.
    """
    if w < 0:
        raise ValueError("guidance scale w must be non-negative")
    eps_null = predictor(z_t, t, e_null)
    eps_cond = predictor(z_t, t, e_cond)
    if w == 0.0:
        return eps_null
    if w == 1.0:
        return eps_cond
    return eps_null + w * (eps_cond - eps_null)


def _sinusoidal(t: torch.Tensor, freqs: torch.Tensor) -> torch.Tensor:
    args = t[:, None].to(freqs.dtype) * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class FilmResBlock(nn.Module):
    """Residual conv block; the conditioning vector scales and shifts the norm."""

    def __init__(self, in_ch: int, out_ch: int, emb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(min(8, in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, 2 * out_ch)
        self.norm2 = nn.GroupNorm(min(8, out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        scale, shift = self.emb_proj(F.silu(emb)).chunk(2, dim=1)
        h = self.norm2(h) * (1 + scale[:, :, None, None]) + shift[:, :, None, None]
        h = self.conv2(F.silu(h))
        return h + self.skip(x)


@dataclass(frozen=True)
class DiffusionConfig:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    schedule_kind: str = "linear"
    latent_channels: int = 4
    base_channels: int = 32
    channel_mults: tuple[int, ...] = (1, 2)
    time_dim: int = 128
    cond_dim: int = 128
    p_uncond: float = 0.1
    guidance_scale: float = 2.0
    sample_steps: int = 50
    learning_rate: float = 1e-3
    quantize_samples: bool = False

    def __post_init__(self):
        if self.time_dim % 2:
            raise ValueError("time_dim must be even")
        if not self.channel_mults:
            raise ValueError("channel_mults must be non-empty")
        GuidanceConfig(w=self.guidance_scale, p_uncond=self.p_uncond)

    def make_schedule(self) -> NoiseSchedule:
        return make_schedule(self.T, self.beta_start, self.beta_end, self.schedule_kind)

    def guidance(self, w: float | None = None) -> GuidanceConfig:
        return GuidanceConfig(
            w=self.guidance_scale if w is None else w, p_uncond=self.p_uncond
        )

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "schedule_kind": self.schedule_kind,
            "latent_channels": self.latent_channels,
            "base_channels": self.base_channels,
            "channel_mults": list(self.channel_mults),
            "time_dim": self.time_dim,
            "cond_dim": self.cond_dim,
            "p_uncond": self.p_uncond,
            "guidance_scale": self.guidance_scale,
            "sample_steps": self.sample_steps,
            "learning_rate": self.learning_rate,
            "quantize_samples": self.quantize_samples,
        }


class NoisePredictor(nn.Module):
    """Two-scale U-Net over latents with sinusoidal time + FiLM conditioning.

    The conditioning embedding is projected and added to the time embedding,
    then injected into every residual block as a scale/shift pair.  Latent
    standardization statistics ride along as buffers so checkpoints carry
    them.
    """

    def __init__(self, cfg: DiffusionConfig | None = None):
        super().__init__()
        self.cfg = cfg or DiffusionConfig()
        c = self.cfg
        half = c.time_dim // 2
        freqs = torch.exp(-math.log(10000.0) * torch.arange(half) / half)
        self.register_buffer("time_freqs", freqs)
        self.register_buffer("latent_mean", torch.zeros(()))
        self.register_buffer("latent_std", torch.ones(()))
        self.time_mlp = nn.Sequential(
            nn.Linear(c.time_dim, c.time_dim), nn.SiLU(), nn.Linear(c.time_dim, c.time_dim)
        )
        self.cond_mlp = nn.Sequential(
            nn.Linear(c.cond_dim, c.time_dim), nn.SiLU(), nn.Linear(c.time_dim, c.time_dim)
        )
        chs = [c.base_channels * m for m in c.channel_mults]
        self.levels = len(chs)
        self.in_conv = nn.Conv2d(c.latent_channels, chs[0], 3, padding=1)
        self.down_res = nn.ModuleList(
            [FilmResBlock(chs[max(i - 1, 0)], chs[i], c.time_dim) for i in range(self.levels)]
        )
        self.downs = nn.ModuleList(
            [nn.Conv2d(chs[i], chs[i], 4, stride=2, padding=1) for i in range(self.levels - 1)]
        )
        self.mid = FilmResBlock(chs[-1], chs[-1], c.time_dim)
        self.ups = nn.ModuleList(
            [nn.ConvTranspose2d(chs[i + 1], chs[i], 4, stride=2, padding=1) for i in range(self.levels - 1)]
        )
        self.up_res = nn.ModuleList(
            [FilmResBlock(chs[i] * 2, chs[i], c.time_dim) for i in range(self.levels)]
        )
        self.out_norm = nn.GroupNorm(min(8, chs[0]), chs[0])
        self.out_conv = nn.Conv2d(chs[0], c.latent_channels, 3, padding=1)
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

    def set_latent_stats(self, mean: float, std: float) -> None:
        if std <= 0:
            raise ValueError("latent std must be positive")
        with torch.no_grad():
            self.latent_mean.fill_(mean)
            self.latent_std.fill_(std)

    def normalize_latent(self, z: torch.Tensor) -> torch.Tensor:
        return (z - self.latent_mean) / self.latent_std

    def denormalize_latent(self, z: torch.Tensor) -> torch.Tensor:
        return z * self.latent_std + self.latent_mean

    def forward(self, z_t: torch.Tensor, t: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        if z_t.ndim != 4 or z_t.shape[1] != self.cfg.latent_channels:
            raise ShapeMismatchError(
                f"expected B x {self.cfg.latent_channels} x h x w, got {tuple(z_t.shape)}"
            )
        if not torch.is_tensor(t):
            t = torch.tensor([float(t)])
        t = t.to(z_t.dtype).reshape(-1)
        if t.numel() == 1:
            t = t.expand(z_t.shape[0])
        if cond.ndim == 1:
            cond = cond[None].expand(z_t.shape[0], -1)
        cond = cond.to(z_t.dtype)
        emb = self.time_mlp(_sinusoidal(t, self.time_freqs)) + self.cond_mlp(cond)

        h = self.in_conv(z_t)
        skips = []
        for i in range(self.levels):
            h = self.down_res[i](h, emb)
            skips.append(h)
            if i < self.levels - 1:
                h = self.downs[i](h)
        h = self.mid(h, emb)
        for i in reversed(range(self.levels)):
            if i < self.levels - 1:
                h = self.ups[i](h)
            h = self.up_res[i](torch.cat([h, skips[i]], dim=1), emb)
        return self.out_conv(F.silu(self.out_norm(h)))


def training_loss(
    predictor: nn.Module,
    schedule: NoiseSchedule,
    z0: torch.Tensor,
    e: torch.Tensor,
    e_null: torch.Tensor,
    guidance: GuidanceConfig,
    rng: torch.Generator,
) -> torch.Tensor:
    """Noise-matching objective with conditioning dropout.

    Draw order is fixed (t, dropout uniforms, noise) so runs with the same
    generator state are comparable regardless of p_uncond.
    """
    if z0.ndim != 4:
        raise ShapeMismatchError("z0 must be B x C x h x w")
    b = z0.shape[0]
    if e.ndim == 1:
        e = e[None].expand(b, -1)
    t = torch.randint(1, schedule.T + 1, (b,), generator=rng)
    u = torch.rand(b, generator=rng)
    eps = torch.randn(z0.shape, generator=rng, dtype=z0.dtype)
    abar = torch.from_numpy(schedule.alpha_bar).to(z0.dtype)[t - 1]
    scale = abar.sqrt()[:, None, None, None]
    sigma = (1 - abar).sqrt()[:, None, None, None]
    z_t = scale * z0 + sigma * eps
    cond = torch.where((u < guidance.p_uncond)[:, None], e_null[None].to(e.dtype), e)
    eps_hat = predictor(z_t, t.to(z0.dtype), cond)
    return ((eps - eps_hat) ** 2).mean()


def sample(
    predict_fn: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
    schedule: NoiseSchedule,
    shape: tuple[int, ...],
    rng: torch.Generator,
    steps_override: int | None = None,
) -> torch.Tensor:
    """Ancestral sampling from pure noise down to z_0.

    ``predict_fn(z_t, t_original)`` supplies the (possibly guided) noise
    estimate; respacing happens here, so the predictor always sees original
    timestep values.
    """
    spaced = (
        respace_schedule(schedule, steps_override)
        if steps_override is not None
        else RespacedSchedule(schedule, np.arange(1, schedule.T + 1))
    )
    sub = spaced.schedule
    z = torch.randn(shape, generator=rng)
    for i in reversed(range(sub.T)):
        t_orig = torch.tensor([float(spaced.timestep_map[i])])
        eps_hat = predict_fn(z, t_orig)
        z = p_sample_step(z, i + 1, eps_hat, sub, rng)
    return z


def make_cfg_predict_fn(
    predictor: nn.Module,
    e_cond: torch.Tensor,
    e_null: torch.Tensor,
    w: float,
) -> Callable[[torch.Tensor, torch.Tensor], torch.Tensor]:
    def fn(z_t: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        return cfg_noise(predictor, z_t, t, e_cond, e_null, w)

    return fn


class DiffusionTrainer:
    """Adam on the noise predictor with a private reproducible generator."""

    def __init__(
        self,
        predictor: NoisePredictor,
        schedule: NoiseSchedule | None = None,
        seed: int = 0,
    ):
        self.predictor = predictor
        self.schedule = schedule or predictor.cfg.make_schedule()
        self.optimizer = torch.optim.Adam(
            predictor.parameters(), lr=predictor.cfg.learning_rate
        )
        self.rng = torch.Generator().manual_seed(seed)
        self.step_count = 0

    def step(self, z0: torch.Tensor, e: torch.Tensor, e_null: torch.Tensor) -> float:
        z0 = self.predictor.normalize_latent(z0)
        loss = training_loss(
            self.predictor,
            self.schedule,
            z0,
            e,
            e_null,
            self.predictor.cfg.guidance(),
            self.rng,
        )
        if not torch.isfinite(loss):
            raise RuntimeError(f"non-finite diffusion loss at step {self.step_count}")
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        self.step_count += 1
        return float(loss.detach())
