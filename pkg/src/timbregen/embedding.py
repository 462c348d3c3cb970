"""Joint text–timbre embedding space.

A small trainable text encoder and a convolutional timbre encoder project
into one unit sphere; symmetric InfoNCE pulls matching pairs together.
An external embedding table can replace the learned text path when a
stronger pretrained encoder is available as a file.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import TextDescription
from .spectral import ShapeMismatchError
from .vqgan import LatentCode

PAD, UNK, EMPTY = 0, 1, 2
_SPECIALS = ("<pad>", "<unk>", "<empty>")

_TOKEN_RE = re.compile(r"[a-z0-9'\-]+")


class Vocabulary:
    """Dense token-to-id map with reserved padding/unknown/empty ids."""

    def __init__(self, tokens: list[str]):
        self.id_to_token = list(_SPECIALS) + [t for t in tokens if t not in _SPECIALS]
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def content_tokens(self) -> list[str]:
        return self.id_to_token[len(_SPECIALS):]

    @classmethod
    def from_texts(cls, texts: list[str]) -> "Vocabulary":
        seen: dict[str, None] = {}
        for text in texts:
            for tok in _TOKEN_RE.findall(text.lower()):
                seen.setdefault(tok, None)
        return cls(sorted(seen))

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = [l.strip() for l in Path(path).read_text().splitlines() if l.strip()]
        return cls(lines)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.content_tokens))

    def encode(self, text: str, max_tokens: int) -> list[int]:
        """Token ids, padded to max_tokens; the empty string is its own token."""
        words = _TOKEN_RE.findall(text.lower())
        if not words:
            ids = [EMPTY]
        else:
            ids = [self.token_to_id.get(w, UNK) for w in words[:max_tokens]]
        return ids + [PAD] * (max_tokens - len(ids))


@dataclass(frozen=True)
class EmbeddingConfig:
    dim: int = 128
    max_tokens: int = 32
    text_width: int = 128
    text_layers: int = 2
    text_heads: int = 4
    timbre_base: int = 32
    latent_channels: int = 4
    temperature_init: float = 0.07
    learning_rate: float = 1e-3

    def __post_init__(self):
        if self.dim < 2 or self.max_tokens < 1:
            raise ValueError("dim and max_tokens must be positive")
        if not 0 < self.temperature_init <= 1:
            raise ValueError("temperature_init must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "max_tokens": self.max_tokens,
            "text_width": self.text_width,
            "text_layers": self.text_layers,
            "text_heads": self.text_heads,
            "timbre_base": self.timbre_base,
            "latent_channels": self.latent_channels,
            "temperature_init": self.temperature_init,
            "learning_rate": self.learning_rate,
        }


@dataclass
class Embedding:
    vector: np.ndarray
    modality: str

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.modality not in ("text", "timbre"):
            raise ValueError(f"unknown modality {self.modality!r}")
        norm = float(np.linalg.norm(self.vector))
        if abs(norm - 1.0) > 1e-5:
            raise ValueError(f"embedding norm {norm} not within 1e-5 of 1")


class TextEncoder(nn.Module):
    """Token embedding + self-attention stack + masked mean-pool + projection."""

    def __init__(self, vocab_size: int, cfg: EmbeddingConfig):
        super().__init__()
        self.cfg = cfg
        self.tokens = nn.Embedding(vocab_size, cfg.text_width, padding_idx=PAD)
        self.positions = nn.Embedding(cfg.max_tokens, cfg.text_width)
        layer = nn.TransformerEncoderLayer(
            d_model=cfg.text_width,
            nhead=cfg.text_heads,
            dim_feedforward=cfg.text_width * 2,
            dropout=0.0,
            batch_first=True,
        )
        self.stack = nn.TransformerEncoder(layer, num_layers=cfg.text_layers)
        self.project = nn.Linear(cfg.text_width, cfg.dim)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        pad_mask = ids == PAD
        pos = torch.arange(ids.shape[1], device=ids.device)
        h = self.tokens(ids) + self.positions(pos)[None]
        h = self.stack(h, src_key_padding_mask=pad_mask)
        keep = (~pad_mask).unsqueeze(-1).to(h.dtype)
        pooled = (h * keep).sum(dim=1) / keep.sum(dim=1).clamp_min(1.0)
        return F.normalize(self.project(pooled), dim=-1)


class TimbreEncoder(nn.Module):
    """Convolutional stack over quantized latents, pooled to one vector."""

    def __init__(self, cfg: EmbeddingConfig):
        super().__init__()
        ch = cfg.timbre_base
        self.net = nn.Sequential(
            nn.Conv2d(cfg.latent_channels, ch, 3, padding=1),
            nn.GroupNorm(min(8, ch), ch),
            nn.SiLU(),
            nn.Conv2d(ch, ch * 2, 4, stride=2, padding=1),
            nn.GroupNorm(min(8, ch * 2), ch * 2),
            nn.SiLU(),
            nn.Conv2d(ch * 2, ch * 2, 3, padding=1),
            nn.AdaptiveAvgPool2d(1),
        )
        self.project = nn.Linear(ch * 2, cfg.dim)
        self.latent_channels = cfg.latent_channels

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 4 or z.shape[1] != self.latent_channels:
            raise ShapeMismatchError(
                f"expected B x {self.latent_channels} x h x w latents, got {tuple(z.shape)}"
            )
        pooled = self.net(z).flatten(1)
        return F.normalize(self.project(pooled), dim=-1)


def load_embedding_table(path: str | Path) -> dict[str, np.ndarray]:
    """Tab-separated ``text<TAB>v1 v2 ...`` lines → unit float32 vectors."""
    table = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        text, _, rest = line.partition("\t")
        vec = np.asarray([float(v) for v in rest.split()], dtype=np.float32)
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise ValueError(f"zero vector for text {text!r}")
        table[text] = vec / norm
    return table


class JointEmbedding(nn.Module):
    """Both encoders plus the learnable contrastive temperature."""

    def __init__(self, vocabulary: Vocabulary, cfg: EmbeddingConfig | None = None):
        super().__init__()
        self.cfg = cfg or EmbeddingConfig()
        self.vocabulary = vocabulary
        self.text_encoder = TextEncoder(len(vocabulary), self.cfg)
        self.timbre_encoder = TimbreEncoder(self.cfg)
        self.log_temperature = nn.Parameter(
            torch.tensor(float(np.log(self.cfg.temperature_init)))
        )
        self.external_table: dict[str, np.ndarray] | None = None

    @property
    def temperature(self) -> torch.Tensor:
        return self.log_temperature.exp().clamp(1e-3, 1.0)

    def attach_table(self, table: dict[str, np.ndarray]) -> None:
        self.external_table = table

    def encode_text_batch(self, texts: list[str]) -> torch.Tensor:
        ids = torch.tensor(
            [self.vocabulary.encode(t, self.cfg.max_tokens) for t in texts],
            dtype=torch.long,
        )
        return self.text_encoder(ids)

    @torch.no_grad()
    def encode_text(self, text: str | TextDescription) -> Embedding:
        raw = text.text if isinstance(text, TextDescription) else text
        if self.external_table is not None and raw in self.external_table:
            vec = self.external_table[raw].astype(np.float64)
            return Embedding(vector=vec / np.linalg.norm(vec), modality="text")
        vec = self.encode_text_batch([raw])[0].numpy().astype(np.float64)
        return Embedding(vector=vec / np.linalg.norm(vec), modality="text")

    def empty_text(self) -> Embedding:
        return self.encode_text("")

    @torch.no_grad()
    def encode_timbre(self, latent: LatentCode) -> Embedding:
        z = torch.from_numpy(np.ascontiguousarray(latent.data))[None].to(torch.float32)
        vec = self.timbre_encoder(z)[0].numpy().astype(np.float64)
        return Embedding(vector=vec / np.linalg.norm(vec), modality="timbre")


def _check_rows(name: str, emb: torch.Tensor) -> None:
    if emb.ndim != 2:
        raise ShapeMismatchError(f"{name} must be N x d")
    norms = emb.norm(dim=1)
    if bool((torch.abs(norms - 1.0) > 1e-3).any()):
        raise ValueError(f"{name} rows are not unit-norm (tolerance 1e-3)")


def contrastive_loss_from_similarity(
    similarity: torch.Tensor, temperature: float | torch.Tensor
) -> torch.Tensor:
    """Symmetric InfoNCE over a precomputed N x N similarity matrix."""
    if isinstance(temperature, torch.Tensor):
        if bool((temperature <= 0).any()):
            raise ValueError("temperature must be positive")
    elif temperature <= 0:
        raise ValueError("temperature must be positive")
    logits = similarity / temperature
    targets = torch.arange(similarity.shape[0], device=similarity.device)
    return 0.5 * (
        F.cross_entropy(logits, targets) + F.cross_entropy(logits.t(), targets)
    )


def contrastive_loss(
    text_emb: torch.Tensor,
    timbre_emb: torch.Tensor,
    temperature: float | torch.Tensor,
) -> torch.Tensor:
    """½·[CE over rows + CE over columns] of the pair-similarity logits."""
    _check_rows("text_emb", text_emb)
    _check_rows("timbre_emb", timbre_emb)
    if text_emb.shape != timbre_emb.shape:
        raise ShapeMismatchError("embedding matrices must share a shape")
    if text_emb.shape[0] < 1:
        raise ValueError("need at least one pair")
    return contrastive_loss_from_similarity(text_emb @ timbre_emb.t(), temperature)


class ContrastiveTrainer:
    """Joint update of both encoders and the temperature."""

    def __init__(self, model: JointEmbedding):
        self.model = model
        self.optimizer = torch.optim.Adam(
            model.parameters(), lr=model.cfg.learning_rate
        )
        self.step_count = 0

    def step(self, latents: torch.Tensor, texts: list[str]) -> float:
        text_emb = self.model.encode_text_batch(texts)
        timbre_emb = self.model.timbre_encoder(latents)
        loss = contrastive_loss(text_emb, timbre_emb, self.model.temperature)
        if not torch.isfinite(loss):
            raise RuntimeError(f"non-finite contrastive loss at step {self.step_count}")
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        self.step_count += 1
        return float(loss.detach())
