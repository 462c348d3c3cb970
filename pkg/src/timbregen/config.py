"""Run configuration: one schema-validated document for every stage.

A :class:`RunConfig` composes the per-module configuration dataclasses and
wires cross-module fields (latent channel count, magnitude floor,
conditioning width) from their single sources of truth, so a stored
configuration can never describe an inconsistent pipeline.  Documents are
YAML mappings; unknown keys anywhere are rejected with their dotted path.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import STYLES
from .diffusion import DiffusionConfig
from .embedding import EmbeddingConfig
from .metrics import EvalConfig
from .spectral import StftConfig
from .vqgan import VqGanConfig


class ConfigError(ValueError):
    """A run configuration document failed validation."""


@dataclass(frozen=True)
class TrainConfig:
    """Per-stage step budgets and the shared data-loader knobs."""

    vqgan_steps: int = 2000
    embedding_steps: int = 1000
    diffusion_steps: int = 4000
    batch_size: int = 8
    log_every: int = 25
    text_styles: tuple[str, ...] = ("keywords", "natural", "phrase")

    def __post_init__(self):
        if min(self.vqgan_steps, self.embedding_steps, self.diffusion_steps) < 0:
            raise ConfigError("stage step counts must be non-negative")
        if self.batch_size < 1 or self.log_every < 1:
            raise ConfigError("batch_size and log_every must be positive")
        if not self.text_styles or any(s not in STYLES for s in self.text_styles):
            raise ConfigError(
                f"text_styles must be a non-empty subset of {sorted(STYLES)}"
            )

    def to_dict(self) -> dict:
        return {
            "vqgan_steps": self.vqgan_steps,
            "embedding_steps": self.embedding_steps,
            "diffusion_steps": self.diffusion_steps,
            "batch_size": self.batch_size,
            "log_every": self.log_every,
            "text_styles": list(self.text_styles),
        }


@dataclass(frozen=True)
class ServiceConfig:
    """HTTP service limits; model knobs live in the other sections."""

    max_steps: int = 50
    max_in_flight: int = 2
    cors_origins: tuple[str, ...] = ("*",)
    inline_audio_limit: int = 1 << 20
    artifact_ttl_seconds: float = 600.0

    def __post_init__(self):
        if self.max_steps < 1 or self.max_in_flight < 1:
            raise ConfigError("max_steps and max_in_flight must be positive")
        if self.inline_audio_limit < 0 or self.artifact_ttl_seconds <= 0:
            raise ConfigError("inline_audio_limit/artifact_ttl_seconds out of range")

    def to_dict(self) -> dict:
        return {
            "max_steps": self.max_steps,
            "max_in_flight": self.max_in_flight,
            "cors_origins": list(self.cors_origins),
            "inline_audio_limit": self.inline_audio_limit,
            "artifact_ttl_seconds": self.artifact_ttl_seconds,
        }


_SECTIONS: dict[str, type] = {
    "audio": StftConfig,
    "vqgan": VqGanConfig,
    "embedding": EmbeddingConfig,
    "diffusion": DiffusionConfig,
    "train": TrainConfig,
    "evaluate": EvalConfig,
    "service": ServiceConfig,
}

# section -> field -> "section.field" it is wired from; such fields may appear
# in a document only if they agree with their source.
_DERIVED: dict[str, dict[str, str]] = {
    "vqgan": {"eps_floor": "audio.eps_floor"},
    "embedding": {"latent_channels": "vqgan.latent_channels"},
    "diffusion": {
        "latent_channels": "vqgan.latent_channels",
        "cond_dim": "embedding.dim",
    },
}


def _coerce(path: str, value, default):
    """Check a document value against the type of the dataclass default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return tuple(value)
    if default is None:
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string or null, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported field type")  # pragma: no cover


@dataclass(frozen=True)
class RunConfig:
    """Every knob of the pipeline in one nested, validated document."""

    seed: int = 0
    audio: StftConfig = field(default_factory=StftConfig)
    vqgan: VqGanConfig = field(default_factory=VqGanConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluate: EvalConfig = field(default_factory=EvalConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)

    def __post_init__(self):
        if self.vqgan.eps_floor != self.audio.eps_floor:
            raise ConfigError("vqgan.eps_floor must equal audio.eps_floor")
        if self.embedding.latent_channels != self.vqgan.latent_channels:
            raise ConfigError("embedding.latent_channels must equal vqgan.latent_channels")
        if self.diffusion.latent_channels != self.vqgan.latent_channels:
            raise ConfigError("diffusion.latent_channels must equal vqgan.latent_channels")
        if self.diffusion.cond_dim != self.embedding.dim:
            raise ConfigError("diffusion.cond_dim must equal embedding.dim")
        if self.audio.freq_bins < self.vqgan.downsample_factor:
            raise ConfigError(
                f"{self.audio.freq_bins} frequency bins cannot be downsampled "
                f"by a factor of {self.vqgan.downsample_factor}"
            )

    # -- derived geometry -------------------------------------------------
    @property
    def grid_shape(self) -> tuple[int, int]:
        """Spectral dims after fitting to the autoencoder's granularity."""
        r = self.vqgan.downsample_factor
        h = (self.audio.freq_bins // r) * r
        w = -(-self.audio.num_frames // r) * r
        return h, w

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        h, w = self.grid_shape
        r = self.vqgan.downsample_factor
        return self.vqgan.latent_channels, h // r, w // r

    # -- document round trip ----------------------------------------------
    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            **{name: getattr(self, name).to_dict() for name in _SECTIONS},
        }

    @classmethod
    def from_dict(cls, doc) -> "RunConfig":
        if doc is None:
            doc = {}
        if not isinstance(doc, dict):
            raise ConfigError("configuration root must be a mapping")
        unknown = sorted(set(doc) - {"seed", *_SECTIONS})
        if unknown:
            raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
        seed = doc.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise ConfigError(f"seed: expected an integer, got {seed!r}")

        built: dict[str, object] = {}
        for name, section_cls in _SECTIONS.items():
            sub = doc.get(name)
            if sub is None:
                sub = {}
            if not isinstance(sub, dict):
                raise ConfigError(f"{name}: expected a mapping, got {sub!r}")
            defaults = section_cls()
            allowed = {f.name for f in dataclasses.fields(section_cls)}
            unknown = sorted(set(sub) - allowed)
            if unknown:
                raise ConfigError(
                    "unknown configuration key(s): "
                    + ", ".join(f"{name}.{key}" for key in unknown)
                )
            kwargs = {
                key: _coerce(f"{name}.{key}", value, getattr(defaults, key))
                for key, value in sub.items()
            }
            for key, source in _DERIVED.get(name, {}).items():
                src_section, src_field = source.split(".")
                derived = getattr(built[src_section], src_field)
                if key in kwargs and kwargs[key] != derived:
                    raise ConfigError(
                        f"{name}.{key} is wired from {source} ({derived!r}); "
                        "remove it or make the values match"
                    )
                kwargs[key] = derived
            try:
                built[name] = section_cls(**kwargs)
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{name}: {exc}") from None
        return cls(seed=seed, **built)  # type: ignore[arg-type]

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read configuration file {p}: {exc}") from None
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: invalid YAML: {exc}") from None
        return cls.from_dict(doc)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


def demo_config() -> RunConfig:
    """Desk-scale profile: trains on the synthetic demo set in minutes."""
    return RunConfig(
        seed=0,
        audio=StftConfig(
            window_size=256, hop_size=64, sample_rate=4000, duration=2.0
        ),
        vqgan=VqGanConfig(
            downsample_factor=8,
            latent_channels=4,
            codebook_size=64,
            base_channels=16,
            commit_weight=0.25,
            adv_weight=0.1,
            disc_warmup_steps=300,
            learning_rate=2e-4,
        ),
        embedding=EmbeddingConfig(
            dim=32,
            max_tokens=16,
            text_width=32,
            text_layers=1,
            text_heads=4,
            timbre_base=16,
            latent_channels=4,
            learning_rate=1e-3,
        ),
        diffusion=DiffusionConfig(
            T=400,
            beta_start=1e-4,
            beta_end=0.05,
            latent_channels=4,
            base_channels=32,
            channel_mults=(1, 2),
            time_dim=64,
            cond_dim=32,
            p_uncond=0.1,
            guidance_scale=2.0,
            sample_steps=50,
            learning_rate=2e-3,
        ),
        train=TrainConfig(
            vqgan_steps=400,
            embedding_steps=300,
            diffusion_steps=1500,
            batch_size=8,
            log_every=25,
            text_styles=("keywords",),
        ),
    )
