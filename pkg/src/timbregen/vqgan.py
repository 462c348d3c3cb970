"""VQ-GAN spectral autoencoder.

Compresses a 3-channel spectral image to a quantized latent grid and
reconstructs it, trained with L1 reconstruction, codebook/commitment, and
hinge adversarial losses.  The codebook learns by gradient (no EMA), and
the encoder receives gradients through the straight-through estimator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .spectral import ShapeMismatchError, SpectralImage


class TrainingDivergedError(RuntimeError):
    """A loss became non-finite; training state is unusable."""


@dataclass(frozen=True)
class VqGanConfig:
    downsample_factor: int = 8
    latent_channels: int = 4
    codebook_size: int = 1024
    base_channels: int = 64
    max_channel_mult: int = 4
    commit_weight: float = 0.25
    adv_weight: float = 0.1
    disc_warmup_steps: int = 1000
    learning_rate: float = 2e-4
    eps_floor: float = 1e-5

    def __post_init__(self):
        r = self.downsample_factor
        if r < 1 or (r & (r - 1)) != 0:
            raise ValueError("downsample_factor must be a power of two")
        if self.codebook_size < 2:
            raise ValueError("codebook_size must be at least 2")
        if self.latent_channels < 1 or self.base_channels < 4:
            raise ValueError("channel counts too small")
        if self.commit_weight < 0 or self.adv_weight < 0:
            raise ValueError("loss weights must be non-negative")
        if self.eps_floor <= 0:
            raise ValueError("eps_floor must be positive")

    @property
    def num_stages(self) -> int:
        return int(math.log2(self.downsample_factor))

    @property
    def logmag_floor(self) -> float:
        return float(np.log(self.eps_floor))

    def to_dict(self) -> dict:
        return {
            "downsample_factor": self.downsample_factor,
            "latent_channels": self.latent_channels,
            "codebook_size": self.codebook_size,
            "base_channels": self.base_channels,
            "max_channel_mult": self.max_channel_mult,
            "commit_weight": self.commit_weight,
            "adv_weight": self.adv_weight,
            "disc_warmup_steps": self.disc_warmup_steps,
            "learning_rate": self.learning_rate,
            "eps_floor": self.eps_floor,
        }


@dataclass
class Codebook:
    """K x C table of latent prototype vectors."""

    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries)
        if self.entries.ndim != 2 or self.entries.shape[0] < 2:
            raise ValueError("codebook must be K x C with K >= 2")
        if not np.all(np.isfinite(self.entries)):
            raise ValueError("codebook entries must be finite")


@dataclass
class LatentCode:
    """C x h x w latent grid; quantized means every column is a codebook entry."""

    data: np.ndarray
    quantized: bool = False

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ShapeMismatchError("latent must be C x h x w")


@dataclass
class VqGanLossReport:
    recon: float
    codebook_loss: float
    commit_loss: float
    gen_adv: float
    disc_loss: float

    def all_finite(self) -> bool:
        return all(
            math.isfinite(v)
            for v in (self.recon, self.codebook_loss, self.commit_loss, self.gen_adv, self.disc_loss)
        )


def nearest_indices(flat: torch.Tensor, book: torch.Tensor, chunk: int = 4096) -> torch.Tensor:
    """Index of the nearest codebook row for each vector, ties to the lowest index.

    Distances use explicit differences in float64 so the result matches a
    brute-force oracle exactly regardless of the model dtype.
    """
    flat64 = flat.detach().to(torch.float64)
    book64 = book.detach().to(torch.float64)
    out = torch.empty(flat64.shape[0], dtype=torch.long)
    for start in range(0, flat64.shape[0], chunk):
        part = flat64[start : start + chunk]
        d2 = ((part[:, None, :] - book64[None, :, :]) ** 2).sum(dim=-1)
        out[start : start + chunk] = d2.argmin(dim=1)
    return out


def quantize_tensor(
    z: torch.Tensor, book: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Map each spatial vector of z (B,C,h,w) to its nearest codebook row.

    Returns the straight-through quantized tensor, the index grid, and the
    codebook / commitment losses (squared error summed over channels,
    averaged over vectors).
    """
    if z.ndim != 4:
        raise ShapeMismatchError("expected B x C x h x w latents")
    if z.shape[1] != book.shape[1]:
        raise ShapeMismatchError(
            f"latent channels {z.shape[1]} != codebook dim {book.shape[1]}"
        )
    b, c, h, w = z.shape
    flat = z.permute(0, 2, 3, 1).reshape(-1, c)
    idx = nearest_indices(flat, book)
    entries = book[idx]
    codebook_loss = ((flat.detach() - entries) ** 2).sum(dim=1).mean()
    commit_loss = ((flat - entries.detach()) ** 2).sum(dim=1).mean()
    z_q = entries.reshape(b, h, w, c).permute(0, 3, 1, 2).to(z.dtype)
    z_q = z + (z_q - z).detach()
    return z_q, idx.reshape(b, h, w), codebook_loss, commit_loss


def quantize(
    latent: LatentCode, book: Codebook
) -> tuple[LatentCode, np.ndarray, float, float]:
    """Quantize a single unquantized latent against a codebook table."""
    if latent.quantized:
        pass  # idempotent: re-quantizing maps each column to itself
    z = torch.from_numpy(np.ascontiguousarray(latent.data, dtype=np.float64))[None]
    entries = torch.from_numpy(np.ascontiguousarray(book.entries, dtype=np.float64))
    z_q, idx, cb, commit = quantize_tensor(z, entries)
    return (
        LatentCode(data=z_q[0].numpy(), quantized=True),
        idx[0].numpy(),
        float(cb),
        float(commit),
    )


def _gn(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, channels), channels)


class Encoder(nn.Module):
    def __init__(self, cfg: VqGanConfig):
        super().__init__()
        ch = cfg.base_channels
        layers: list[nn.Module] = [nn.Conv2d(3, ch, 3, padding=1)]
        for stage in range(cfg.num_stages):
            out = min(ch * 2, cfg.base_channels * cfg.max_channel_mult)
            layers += [_gn(ch), nn.SiLU(), nn.Conv2d(ch, out, 4, stride=2, padding=1)]
            ch = out
        layers += [_gn(ch), nn.SiLU(), nn.Conv2d(ch, cfg.latent_channels, 1)]
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class Decoder(nn.Module):
    """Mirror of the encoder; phase channels leave through tanh."""

    def __init__(self, cfg: VqGanConfig):
        super().__init__()
        mults = [min(2 ** s, cfg.max_channel_mult) for s in range(cfg.num_stages + 1)]
        ch = cfg.base_channels * mults[-1]
        layers: list[nn.Module] = [nn.Conv2d(cfg.latent_channels, ch, 3, padding=1)]
        for mult in reversed(mults[:-1]):
            out = cfg.base_channels * mult
            layers += [_gn(ch), nn.SiLU(), nn.ConvTranspose2d(ch, out, 4, stride=2, padding=1)]
            ch = out
        layers += [_gn(ch), nn.SiLU(), nn.Conv2d(ch, 3, 3, padding=1)]
        self.net = nn.Sequential(*layers)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        raw = self.net(z)
        return torch.cat([raw[:, :1], torch.tanh(raw[:, 1:])], dim=1)


class PatchDiscriminator(nn.Module):
    """Patch-level realness scores; three stride-2 stages, so the map is H/8 x W/8."""

    def __init__(self, cfg: VqGanConfig):
        super().__init__()
        ch = cfg.base_channels
        self.net = nn.Sequential(
            nn.Conv2d(3, ch, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(ch, ch * 2, 4, stride=2, padding=1),
            _gn(ch * 2),
            nn.LeakyReLU(0.2),
            nn.Conv2d(ch * 2, ch * 4, 4, stride=2, padding=1),
            _gn(ch * 4),
            nn.LeakyReLU(0.2),
            nn.Conv2d(ch * 4, 1, 3, padding=1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeMismatchError("discriminator expects B x 3 x H x W")
        return self.net(x)


class VqGan(nn.Module):
    """Encoder + quantizer + decoder over physical-scale spectral images.

    Internally the log-magnitude channel is mapped to roughly [0, 1] by an
    affine transform anchored at the magnitude floor; the phase channels
    are already in [-1, 1].  encode/decode speak the physical scale.
    """

    def __init__(self, cfg: VqGanConfig | None = None):
        super().__init__()
        self.cfg = cfg or VqGanConfig()
        self.encoder = Encoder(self.cfg)
        self.decoder = Decoder(self.cfg)
        self.embedding = nn.Embedding(self.cfg.codebook_size, self.cfg.latent_channels)
        nn.init.uniform_(self.embedding.weight, -1.0, 1.0)

    # -- scale mapping ---------------------------------------------------
    def normalize(self, x: torch.Tensor) -> torch.Tensor:
        floor = self.cfg.logmag_floor
        logmag = (x[:, :1] - floor) / (-floor)
        return torch.cat([logmag, x[:, 1:]], dim=1)

    def denormalize(self, x: torch.Tensor) -> torch.Tensor:
        floor = self.cfg.logmag_floor
        logmag = x[:, :1] * (-floor) + floor
        return torch.cat([logmag, x[:, 1:]], dim=1)

    # -- tensor paths ----------------------------------------------------
    def encode_tensor(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeMismatchError("expected B x 3 x H x W spectral batch")
        r = self.cfg.downsample_factor
        if x.shape[2] % r or x.shape[3] % r:
            raise ShapeMismatchError(
                f"spatial dims {tuple(x.shape[2:])} not divisible by r={r}"
            )
        return self.encoder(self.normalize(x))

    def decode_tensor(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 4 or z.shape[1] != self.cfg.latent_channels:
            raise ShapeMismatchError("expected B x C x h x w latent batch")
        return self.denormalize(self.decoder(z))

    def quantize_t(self, z: torch.Tensor):
        return quantize_tensor(z, self.embedding.weight)

    def forward(self, x: torch.Tensor):
        z_e = self.encode_tensor(x)
        z_q, idx, cb, commit = self.quantize_t(z_e)
        return self.decode_tensor(z_q), z_e, z_q, idx, cb, commit

    # -- single-image numpy surface --------------------------------------
    @property
    def codebook(self) -> Codebook:
        return Codebook(entries=self.embedding.weight.detach().numpy().copy())

    @torch.no_grad()
    def encode(self, image: SpectralImage) -> LatentCode:
        x = torch.from_numpy(image.data[None]).to(torch.float32)
        return LatentCode(data=self.encode_tensor(x)[0].numpy(), quantized=False)

    @torch.no_grad()
    def decode(self, latent: LatentCode) -> SpectralImage:
        z = torch.from_numpy(np.ascontiguousarray(latent.data))[None].to(torch.float32)
        return SpectralImage(data=self.decode_tensor(z)[0].numpy().astype(np.float64))

    @torch.no_grad()
    def reconstruct(self, image: SpectralImage) -> SpectralImage:
        latent = self.encode(image)
        z = torch.from_numpy(latent.data)[None]
        z_q, _, _, _ = self.quantize_t(z)
        return SpectralImage(data=self.decode_tensor(z_q)[0].numpy().astype(np.float64))


class VqGanTrainer:
    """Alternating generator / discriminator updates with hinge losses.

    The adversarial term switches on after ``disc_warmup_steps``; before
    that the discriminator is untouched and the generator trains purely on
    reconstruction + quantization terms.
    """

    def __init__(self, model: VqGan, disc: PatchDiscriminator | None = None):
        self.model = model
        self.disc = disc or PatchDiscriminator(model.cfg)
        cfg = model.cfg
        self.opt_g = torch.optim.Adam(
            model.parameters(), lr=cfg.learning_rate, betas=(0.5, 0.9)
        )
        self.opt_d = torch.optim.Adam(
            self.disc.parameters(), lr=cfg.learning_rate, betas=(0.5, 0.9)
        )
        self.step_count = 0

    def step(self, batch: torch.Tensor) -> VqGanLossReport:
        cfg = self.model.cfg
        adv_on = cfg.adv_weight > 0 and self.step_count >= cfg.disc_warmup_steps

        recon_x, _, _, _, cb, commit = self.model(batch)
        recon = F.l1_loss(recon_x, batch)
        if adv_on:
            gen_adv = -self.disc(self.model.normalize(recon_x)).mean()
        else:
            gen_adv = torch.zeros(())
        loss_g = recon + cb + cfg.commit_weight * commit + cfg.adv_weight * gen_adv
        if not torch.isfinite(loss_g):
            raise TrainingDivergedError(
                f"non-finite generator loss at step {self.step_count}: "
                f"recon={recon.detach().item()}, codebook={cb.detach().item()}, "
                f"commit={commit.detach().item()}"
            )
        self.opt_g.zero_grad()
        loss_g.backward()
        self.opt_g.step()

        disc_loss = torch.zeros(())
        if adv_on:
            real = self.disc(self.model.normalize(batch))
            fake = self.disc(self.model.normalize(recon_x.detach()))
            disc_loss = F.relu(1.0 - real).mean() + F.relu(1.0 + fake).mean()
            if not torch.isfinite(disc_loss):
                raise TrainingDivergedError(
                    f"non-finite discriminator loss at step {self.step_count}"
                )
            self.opt_d.zero_grad()
            disc_loss.backward()
            self.opt_d.step()

        self.step_count += 1
        report = VqGanLossReport(
            recon=float(recon.detach()),
            codebook_loss=float(cb.detach()),
            commit_loss=float(commit.detach()),
            gen_adv=float(gen_adv.detach()),
            disc_loss=float(disc_loss.detach()),
        )
        if not report.all_finite():
            raise TrainingDivergedError(f"non-finite loss report at step {self.step_count}")
        return report


def batch_from_images(images: list[SpectralImage]) -> torch.Tensor:
    return torch.from_numpy(np.stack([im.data for im in images])).to(torch.float32)
