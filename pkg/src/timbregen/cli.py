"""Command-line entry point for training, generation, editing, and evaluation.

Exit codes: 0 success, 2 configuration error (bad flags, files, or config
documents), 3 dependency error (missing or unusable checkpoints, named by
stage), 4 runtime or numerical error.

Every generation-style command writes a WAV, a spectrogram PNG, a JSON
sidecar with the parameters and checkpoint hashes, and the resolved
configuration — enough to reproduce the run from the sidecar alone.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import json
import os
import sys
import traceback
from pathlib import Path

from . import __version__
from .checkpoints import STAGES, CheckpointError, MissingCheckpointError
from .config import ConfigError, RunConfig, demo_config
from .data import ManifestError
from .demo import make_demo_dataset
from .manipulate import load_mask_png
from .metrics import evaluate
from .pipeline import Pipeline, PipelineResult, TrainResult, run_training_stage
from .spectral import (
    DegeneratePhaseError,
    read_wav,
    save_raster_png,
    spectral_to_image,
    write_wav,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DEPENDENCY = 3
EXIT_RUNTIME = 4

CHECKPOINT_ENV = "TIMBREGEN_CHECKPOINTS"

_LOSS_COLUMNS = {
    "vqgan": ("step", "recon", "codebook", "commit", "gen_adv", "disc"),
    "embedding": ("step", "loss", "temperature"),
    "diffusion": ("step", "loss"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="timbregen",
        description="Text-guided generation and editing of musical note timbres.",
    )
    p.add_argument("--version", action="version", version=f"timbregen {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add_checkpoints(sp):
        sp.add_argument(
            "--checkpoints",
            help=f"checkpoint directory (default: ${CHECKPOINT_ENV} or ./checkpoints)",
        )

    def add_sampling(sp):
        sp.add_argument("--prompt", default="", help="text prompt; empty = unconditional")
        sp.add_argument("--guidance", type=float, help="guidance scale w (>= 0)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--steps", type=int, help="sampling steps (default from config)")
        sp.add_argument("--out", required=True, help="output WAV path")
        add_checkpoints(sp)

    t = sub.add_parser("train", help="train one pipeline stage")
    t.add_argument("--stage", required=True, choices=STAGES)
    t.add_argument("--config", help="YAML run configuration (default: built-in)")
    t.add_argument("--data", required=True, help="JSON-lines manifest")
    t.add_argument("--out", help="checkpoint directory (defaults like --checkpoints)")
    t.add_argument("--steps", type=int, help="override the configured step budget")
    t.add_argument("--seed", type=int, help="override the configured seed")
    t.add_argument("--resume", action="store_true", help="continue from the existing checkpoint")

    g = sub.add_parser("generate", help="sample a new note from a prompt")
    add_sampling(g)

    tr = sub.add_parser("transform", help="re-noise input audio and denoise under a prompt")
    tr.add_argument("--input", required=True, help="input WAV")
    tr.add_argument("--t0", required=True, type=int, help="noising strength in steps (0..T)")
    add_sampling(tr)

    ip = sub.add_parser("inpaint", help="regenerate the masked-out region of input audio")
    ip.add_argument("--input", required=True, help="input WAV")
    ip.add_argument("--mask", required=True, help="mask PNG at spectrogram-grid dims; white = keep")
    ip.add_argument("--jump", type=int, default=10, help="resampling jump length")
    ip.add_argument("--resample", type=int, default=1, help="resampling passes per jump anchor")
    add_sampling(ip)

    ex = sub.add_parser("extend", help="change a note's length, repainting inserted sustain")
    ex.add_argument("--input", required=True, help="input WAV")
    ex.add_argument("--target-frames", required=True, type=int, help="target spectrogram width")
    ex.add_argument("--jump", type=int, default=10)
    ex.add_argument("--resample", type=int, default=1)
    add_sampling(ex)

    ev = sub.add_parser("evaluate", help="compare real and generated WAV directories")
    ev.add_argument("--real-dir", required=True)
    ev.add_argument("--gen-dir", required=True)
    ev.add_argument("--config", help="YAML run configuration (evaluate section)")
    ev.add_argument("--out", help="report JSON path (default: <gen-dir>/metrics_report.json)")

    dd = sub.add_parser("demo-data", help="write the synthetic demo dataset and its config")
    dd.add_argument("--out", required=True, help="output directory")
    dd.add_argument("--config", help="YAML run configuration (audio section)")
    dd.add_argument("--per-class", type=int, default=4)
    dd.add_argument("--seed", type=int, default=0)

    return p


def _checkpoint_root(args) -> Path:
    explicit = getattr(args, "checkpoints", None)
    return Path(explicit or os.environ.get(CHECKPOINT_ENV) or "checkpoints")


def _load_run_config(path: str | None, default: RunConfig | None = None) -> RunConfig:
    if path:
        return RunConfig.load(path)
    return default if default is not None else RunConfig()


def _write_loss_csv(path: Path, result: TrainResult, resume: bool) -> None:
    columns = _LOSS_COLUMNS[result.stage]
    fresh = not (resume and path.exists())
    with open(path, "w" if fresh else "a", newline="") as f:
        writer = csv.writer(f)
        if fresh:
            writer.writerow(columns)
        for row in result.rows:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in columns])


def _write_artifacts(
    result: PipelineResult, out: str | Path, config: RunConfig, checkpoint_dir: Path
) -> dict:
    out = Path(out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    write_wav(out, result.audio)
    png = out.with_suffix(".png")
    save_raster_png(spectral_to_image(result.grid), png)
    config_path = out.with_suffix(".config.yaml")
    config.save(config_path)
    sidecar = out.with_suffix(".json")
    doc = {
        "tool": f"timbregen {__version__}",
        "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "params": result.params,
        "checkpoint_dir": str(checkpoint_dir),
        "outputs": {
            "wav": str(out),
            "png": str(png),
            "config": str(config_path),
        },
        "config": config.to_dict(),
    }
    sidecar.write_text(json.dumps(doc, indent=2) + "\n")
    return doc


# --- commands ----------------------------------------------------------------


def _cmd_train(args) -> int:
    config = _load_run_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    out_dir = Path(args.out) if args.out else _checkpoint_root(args)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = run_training_stage(
        args.stage, config, args.data, out_dir, steps=args.steps, resume=args.resume
    )
    config.save(out_dir / "resolved_config.yaml")
    _write_loss_csv(out_dir / f"{args.stage}_loss.csv", result, args.resume)
    print(
        f"{args.stage}: ran steps {result.start_step}..{result.end_step} "
        f"-> {result.checkpoint}"
    )
    return EXIT_OK


def _cmd_generate(args) -> int:
    root = _checkpoint_root(args)
    pipe = Pipeline.load(root)
    result = pipe.generate(
        args.prompt, guidance_w=args.guidance, seed=args.seed, steps=args.steps
    )
    _write_artifacts(result, args.out, pipe.config, root)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_transform(args) -> int:
    root = _checkpoint_root(args)
    pipe = Pipeline.load(root)
    clip = read_wav(args.input)
    result = pipe.transform(
        clip,
        args.prompt,
        args.t0,
        guidance_w=args.guidance,
        seed=args.seed,
        steps=args.steps,
    )
    _write_artifacts(result, args.out, pipe.config, root)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_inpaint(args) -> int:
    root = _checkpoint_root(args)
    pipe = Pipeline.load(root)
    clip = read_wav(args.input)
    mask = load_mask_png(args.mask)
    result = pipe.inpaint(
        clip,
        mask,
        args.prompt,
        guidance_w=args.guidance,
        seed=args.seed,
        steps=args.steps,
        jump_length=args.jump,
        resample_count=args.resample,
    )
    _write_artifacts(result, args.out, pipe.config, root)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_extend(args) -> int:
    root = _checkpoint_root(args)
    pipe = Pipeline.load(root)
    clip = read_wav(args.input)
    result = pipe.extend(
        clip,
        args.target_frames,
        args.prompt,
        guidance_w=args.guidance,
        seed=args.seed,
        steps=args.steps,
        jump_length=args.jump,
        resample_count=args.resample,
    )
    if result.params["actual_frames"] != result.params["target_frames"]:
        print(
            f"note: target rounded up to {result.params['actual_frames']} frames "
            "(latent granularity)",
            file=sys.stderr,
        )
    _write_artifacts(result, args.out, pipe.config, root)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    config = _load_run_config(args.config)
    ev = config.evaluate
    if args.out:
        ev = dataclasses.replace(ev, report_path=str(args.out))
    report = evaluate(args.real_dir, args.gen_dir, ev)
    report_path = Path(ev.report_path or Path(args.gen_dir) / "metrics_report.json")
    config.save(report_path.with_suffix(".config.yaml"))
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def _cmd_demo_data(args) -> int:
    config = _load_run_config(args.config, default=demo_config())
    manifest = make_demo_dataset(
        args.out, config.audio, num_per_class=args.per_class, seed=args.seed
    )
    config.save(Path(args.out) / "resolved_config.yaml")
    print(f"wrote {manifest}")
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "generate": _cmd_generate,
    "transform": _cmd_transform,
    "inpaint": _cmd_inpaint,
    "extend": _cmd_extend,
    "evaluate": _cmd_evaluate,
    "demo-data": _cmd_demo_data,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except MissingCheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except DegeneratePhaseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, ManifestError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - map anything else to runtime failure
        traceback.print_exc()
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
