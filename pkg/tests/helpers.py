"""Shared fixtures-in-spirit: a desk-speed configuration for end-to-end tests."""

from timbregen.config import RunConfig
from timbregen.diffusion import DiffusionConfig
from timbregen.embedding import EmbeddingConfig
from timbregen.spectral import StftConfig
from timbregen.vqgan import VqGanConfig


def tiny_config(seed: int = 11) -> RunConfig:
    """Short clips, shallow nets: full three-stage training runs in seconds."""
    return RunConfig(
        seed=seed,
        audio=StftConfig(window_size=64, hop_size=16, sample_rate=1000, duration=0.256),
        vqgan=VqGanConfig(
            downsample_factor=4,
            latent_channels=3,
            codebook_size=16,
            base_channels=8,
            disc_warmup_steps=2,
        ),
        embedding=EmbeddingConfig(
            dim=16,
            max_tokens=8,
            text_width=16,
            text_layers=1,
            text_heads=2,
            timbre_base=8,
            latent_channels=3,
        ),
        diffusion=DiffusionConfig(
            T=20,
            latent_channels=3,
            base_channels=8,
            channel_mults=(1,),
            time_dim=16,
            cond_dim=16,
            sample_steps=5,
        ),
    )
