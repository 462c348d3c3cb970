"""HTTP inference service: generation and spectral editing for web clients.

Synchronous JSON-over-HTTP endpoints under ``/v1``.  Model weights are
loaded once and shared read-only; every request owns its random generator
and buffers, and a bounded semaphore caps the number of in-flight
sampling jobs.  Audio comes back inline as base64 WAV when small enough,
otherwise as a temporary artifact URL with a TTL.
"""

from __future__ import annotations

import base64
import datetime as _dt
import io
import tempfile
import threading
import time
import uuid
import wave
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Form, HTTPException, Request, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel, Field

from . import __version__
from .checkpoints import CheckpointError
from .config import ServiceConfig
from .pipeline import Pipeline, PipelineResult
from .spectral import (
    AudioClip,
    DegeneratePhaseError,
    InvalidAudioError,
    ShapeMismatchError,
    spectral_to_image,
)

_WAV_CONTENT_TYPES = {"audio/wav", "audio/x-wav", "audio/wave", "audio/vnd.wave"}


class GenerateRequest(BaseModel):
    prompt: str = Field("", max_length=256)
    guidance_w: float | None = Field(default=None, ge=0)
    seed: int = 0
    steps: int | None = Field(default=None, ge=1)
    return_latent: bool = False


# --- payload helpers ---------------------------------------------------------


def encode_wav_bytes(clip: AudioClip) -> bytes:
    """Same 16-bit PCM encoding the CLI writes, rendered in memory."""
    clip.validate()
    pcm = np.round(np.clip(clip.samples, -1.0, 1.0) * 32767.0).astype("<i2")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(clip.sample_rate)
        f.writeframes(pcm.tobytes())
    return buf.getvalue()


def decode_wav_bytes(data: bytes) -> AudioClip:
    try:
        with wave.open(io.BytesIO(data), "rb") as f:
            if f.getnchannels() != 1:
                raise InvalidAudioError(
                    f"expected mono, got {f.getnchannels()} channels"
                )
            if f.getsampwidth() != 2:
                raise InvalidAudioError("expected 16-bit PCM")
            rate = f.getframerate()
            raw = f.readframes(f.getnframes())
    except wave.Error as exc:
        raise InvalidAudioError(f"not a readable WAV stream: {exc}") from None
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioClip(samples=pcm.astype(np.float64) / 32767.0, sample_rate=rate)


def _png_bytes(raster: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(raster, mode="L").save(buf, format="PNG")
    return buf.getvalue()


class ArtifactStore:
    """Temp-file WAVs served by URL; files expire after the configured TTL."""

    def __init__(self, ttl_seconds: float):
        self.root = Path(tempfile.mkdtemp(prefix="timbregen-artifacts-"))
        self.ttl = ttl_seconds
        self._lock = threading.Lock()

    def sweep(self) -> None:
        now = time.time()
        with self._lock:
            for path in self.root.glob("*"):
                try:
                    if now - path.stat().st_mtime > self.ttl:
                        path.unlink()
                except OSError:
                    continue

    def put(self, name: str, data: bytes) -> None:
        self.sweep()
        with self._lock:
            (self.root / name).write_bytes(data)

    def get(self, name: str) -> Path | None:
        self.sweep()
        path = self.root / name
        return path if path.exists() and path.parent == self.root else None


# --- application factory -----------------------------------------------------


def create_app(
    checkpoint_dir: str | Path | None = None,
    pipeline: Pipeline | None = None,
    service_config: ServiceConfig | None = None,
) -> FastAPI:
    """Build the service; without usable checkpoints it serves 503s."""
    load_error: str | None = None
    if pipeline is None and checkpoint_dir is not None:
        try:
            pipeline = Pipeline.load(checkpoint_dir)
        except CheckpointError as exc:
            load_error = str(exc)
    if service_config is None:
        service_config = (
            pipeline.config.service if pipeline is not None else ServiceConfig()
        )

    app = FastAPI(
        title="timbregen service",
        version=__version__,
        openapi_url="/v1/spec",
        docs_url=None,
        redoc_url=None,
    )
    app.state.pipeline = pipeline
    app.state.load_error = load_error
    app.state.service = service_config
    app.state.gate = threading.BoundedSemaphore(service_config.max_in_flight)
    app.state.artifacts = ArtifactStore(service_config.artifact_ttl_seconds)

    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(service_config.cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(RequestValidationError)
    def _validation_to_400(request: Request, exc: RequestValidationError):
        detail = [
            {"loc": list(e.get("loc", ())), "msg": e.get("msg"), "type": e.get("type")}
            for e in exc.errors()
        ]
        return JSONResponse(status_code=400, content={"detail": detail})

    # -- shared request plumbing -----------------------------------------
    def require_pipeline() -> Pipeline:
        if app.state.pipeline is None:
            raise HTTPException(
                status_code=503,
                detail=app.state.load_error or "models not loaded",
            )
        return app.state.pipeline

    def resolve_steps(steps: int | None, pipe: Pipeline) -> int:
        cap = app.state.service.max_steps
        if steps is None:
            return min(pipe.config.diffusion.sample_steps, cap)
        if steps < 1:
            raise HTTPException(status_code=400, detail="steps must be positive")
        if steps > cap:
            raise HTTPException(
                status_code=400, detail=f"steps {steps} exceeds server cap {cap}"
            )
        return steps

    def check_prompt(prompt: str) -> str:
        if len(prompt) > 256:
            raise HTTPException(
                status_code=400, detail="prompt exceeds 256 characters"
            )
        return prompt

    def parse_wav_upload(upload: UploadFile, pipe: Pipeline) -> AudioClip:
        name = (upload.filename or "").lower()
        ctype = (upload.content_type or "").lower()
        if not (name.endswith(".wav") or ctype in _WAV_CONTENT_TYPES):
            raise HTTPException(
                status_code=415,
                detail=f"expected a WAV upload, got {ctype or name or 'unknown'}",
            )
        try:
            clip = decode_wav_bytes(upload.file.read())
        except InvalidAudioError as exc:
            raise HTTPException(status_code=415, detail=str(exc)) from None
        audio_cfg = pipe.config.audio
        if clip.sample_rate != audio_cfg.sample_rate:
            raise HTTPException(
                status_code=400,
                detail=(
                    f"sample rate {clip.sample_rate} does not match the model's "
                    f"{audio_cfg.sample_rate}"
                ),
            )
        if clip.samples.shape[0] > audio_cfg.num_samples:
            raise HTTPException(
                status_code=400,
                detail=(
                    f"audio has {clip.samples.shape[0]} samples; the model accepts "
                    f"at most {audio_cfg.num_samples}"
                ),
            )
        return clip

    def parse_mask_upload(upload: UploadFile) -> np.ndarray:
        try:
            img = Image.open(io.BytesIO(upload.file.read()))
        except UnidentifiedImageError:
            raise HTTPException(
                status_code=415, detail="mask must be a decodable image (PNG)"
            ) from None
        return (np.asarray(img.convert("L")) > 127).astype(np.uint8)

    def run_job(fn) -> tuple[PipelineResult, float]:
        started = time.perf_counter()
        with app.state.gate:
            try:
                result = fn()
            except HTTPException:
                raise
            except ShapeMismatchError as exc:
                raise HTTPException(status_code=400, detail=str(exc)) from None
            except DegeneratePhaseError as exc:
                raise HTTPException(status_code=500, detail=str(exc)) from None
            except (InvalidAudioError, ValueError) as exc:
                raise HTTPException(status_code=400, detail=str(exc)) from None
        return result, time.perf_counter() - started

    def job_result(
        result: PipelineResult, seconds: float, return_latent: bool
    ) -> dict:
        job_id = uuid.uuid4().hex
        wav_bytes = encode_wav_bytes(result.audio)
        if len(wav_bytes) <= app.state.service.inline_audio_limit:
            audio = {
                "kind": "inline",
                "base64": base64.b64encode(wav_bytes).decode("ascii"),
            }
        else:
            name = f"{job_id}.wav"
            app.state.artifacts.put(name, wav_bytes)
            audio = {
                "kind": "url",
                "url": f"/v1/artifacts/{name}",
                "expires_in_seconds": app.state.service.artifact_ttl_seconds,
            }
        raster = spectral_to_image(result.grid)
        doc = {
            "id": job_id,
            "audio": audio,
            "spectrogram": {
                "base64": base64.b64encode(_png_bytes(raster)).decode("ascii"),
                "width": int(raster.shape[1]),
                "height": int(raster.shape[0]),
            },
            "params": result.params,
            "timing": {
                "seconds": seconds,
                "finished_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            },
        }
        if return_latent:
            buf = io.BytesIO()
            np.save(buf, result.latent.data)
            doc["latent"] = {
                "base64": base64.b64encode(buf.getvalue()).decode("ascii"),
                "shape": list(result.latent.data.shape),
            }
        return doc

    # -- endpoints --------------------------------------------------------
    @app.get("/v1/health")
    def health():
        if app.state.pipeline is None:
            return JSONResponse(
                status_code=503,
                content={
                    "status": "unavailable",
                    "loaded": False,
                    "detail": app.state.load_error or "models not loaded",
                },
            )
        return {
            "status": "ok",
            "loaded": True,
            "version": __version__,
            "checkpoints": app.state.pipeline.checkpoint_hashes,
        }

    @app.get("/v1/config")
    def config():
        pipe = require_pipeline()
        return {
            "config": pipe.config.to_dict(),
            "grid_shape": list(pipe.config.grid_shape),
            "latent_shape": list(pipe.config.latent_shape),
            "checkpoints": pipe.checkpoint_hashes,
            "limits": {
                "max_steps": app.state.service.max_steps,
                "max_prompt_chars": 256,
                "max_duration_seconds": pipe.config.audio.duration,
                "sample_rate": pipe.config.audio.sample_rate,
            },
        }

    @app.post("/v1/generate")
    def generate(req: GenerateRequest):
        pipe = require_pipeline()
        steps = resolve_steps(req.steps, pipe)
        result, seconds = run_job(
            lambda: pipe.generate(
                req.prompt, guidance_w=req.guidance_w, seed=req.seed, steps=steps
            )
        )
        return job_result(result, seconds, req.return_latent)

    @app.post("/v1/transform")
    def transform(
        audio: UploadFile,
        t0: int = Form(...),
        prompt: str = Form(""),
        guidance_w: float | None = Form(None),
        seed: int = Form(0),
        steps: int | None = Form(None),
        return_latent: bool = Form(False),
    ):
        pipe = require_pipeline()
        check_prompt(prompt)
        if guidance_w is not None and guidance_w < 0:
            raise HTTPException(
                status_code=400, detail="guidance_w must be non-negative"
            )
        resolved = resolve_steps(steps, pipe)
        clip = parse_wav_upload(audio, pipe)
        result, seconds = run_job(
            lambda: pipe.transform(
                clip, prompt, t0, guidance_w=guidance_w, seed=seed, steps=resolved
            )
        )
        return job_result(result, seconds, return_latent)

    @app.post("/v1/inpaint")
    def inpaint(
        audio: UploadFile,
        mask: UploadFile,
        prompt: str = Form(""),
        guidance_w: float | None = Form(None),
        seed: int = Form(0),
        steps: int | None = Form(None),
        jump_length: int = Form(10),
        resample_count: int = Form(1),
        return_latent: bool = Form(False),
    ):
        pipe = require_pipeline()
        check_prompt(prompt)
        if guidance_w is not None and guidance_w < 0:
            raise HTTPException(
                status_code=400, detail="guidance_w must be non-negative"
            )
        resolved = resolve_steps(steps, pipe)
        clip = parse_wav_upload(audio, pipe)
        mask_spec = parse_mask_upload(mask)
        result, seconds = run_job(
            lambda: pipe.inpaint(
                clip,
                mask_spec,
                prompt,
                guidance_w=guidance_w,
                seed=seed,
                steps=resolved,
                jump_length=jump_length,
                resample_count=resample_count,
            )
        )
        return job_result(result, seconds, return_latent)

    @app.post("/v1/extend")
    def extend(
        audio: UploadFile,
        target_frames: int = Form(...),
        prompt: str = Form(""),
        guidance_w: float | None = Form(None),
        seed: int = Form(0),
        steps: int | None = Form(None),
        jump_length: int = Form(10),
        resample_count: int = Form(1),
        return_latent: bool = Form(False),
    ):
        pipe = require_pipeline()
        check_prompt(prompt)
        if guidance_w is not None and guidance_w < 0:
            raise HTTPException(
                status_code=400, detail="guidance_w must be non-negative"
            )
        resolved = resolve_steps(steps, pipe)
        clip = parse_wav_upload(audio, pipe)
        result, seconds = run_job(
            lambda: pipe.extend(
                clip,
                target_frames,
                prompt,
                guidance_w=guidance_w,
                seed=seed,
                steps=resolved,
                jump_length=jump_length,
                resample_count=resample_count,
            )
        )
        return job_result(result, seconds, return_latent)

    @app.get("/v1/artifacts/{name}")
    def artifact(name: str):
        if "/" in name or "\\" in name or name.startswith("."):
            raise HTTPException(status_code=404, detail="no such artifact")
        path = app.state.artifacts.get(name)
        if path is None:
            raise HTTPException(status_code=404, detail="artifact expired or unknown")
        return FileResponse(path, media_type="audio/wav")

    return app
