"""Versioned checkpoint containers with atomic write-then-rename saves.

Each training stage produces one ``<stage>.pt`` file holding the format
version, the stage name, a full configuration echo, the parameter/optimizer
state, and the step counter — enough to resume training or rebuild the
models for inference without any other source of truth.
"""

from __future__ import annotations

import hashlib
import os
from pathlib import Path

import torch

from .config import RunConfig

FORMAT_VERSION = 1

STAGES = ("vqgan", "embedding", "diffusion")

STAGE_DEPENDENCIES: dict[str, tuple[str, ...]] = {
    "vqgan": (),
    "embedding": ("vqgan",),
    "diffusion": ("vqgan", "embedding"),
}


class CheckpointError(RuntimeError):
    """A checkpoint file exists but cannot be used."""


class MissingCheckpointError(CheckpointError):
    """A required checkpoint has not been produced yet."""


def stage_path(root: str | Path, stage: str) -> Path:
    return Path(root) / f"{stage}.pt"


def save_checkpoint(
    path: str | Path,
    kind: str,
    config: RunConfig,
    state: dict,
    step: int,
    extra: dict | None = None,
) -> Path:
    """Write atomically: a crash mid-save never corrupts an existing file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": config.to_dict(),
        "state": state,
        "step": int(step),
        "extra": extra or {},
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | Path, kind: str | None = None) -> dict:
    path = Path(path)
    if not path.exists():
        stage = kind or "requested"
        raise MissingCheckpointError(
            f"missing {stage} checkpoint at {path}; "
            f"run `timbregen train --stage {kind}` first"
            if kind
            else f"missing checkpoint at {path}"
        )
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(f"{path} is not a recognized checkpoint container")
    if payload["format_version"] != FORMAT_VERSION:
        raise CheckpointError(
            f"{path} uses checkpoint format {payload['format_version']}, "
            f"this build reads format {FORMAT_VERSION}"
        )
    if kind is not None and payload.get("kind") != kind:
        raise CheckpointError(
            f"{path} holds a {payload.get('kind')!r} checkpoint, expected {kind!r}"
        )
    return payload


def checkpoint_hash(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def require_stages(root: str | Path, stages: tuple[str, ...], context: str) -> None:
    """Fail with the name of the first missing upstream stage."""
    for stage in stages:
        path = stage_path(root, stage)
        if not path.exists():
            raise MissingCheckpointError(
                f"{context} requires the {stage} checkpoint at {path}; "
                f"run `timbregen train --stage {stage}` first"
            )
