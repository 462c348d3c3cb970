"""End-to-end plumbing shared by the CLI and the HTTP service.

Training functions turn a manifest plus a :class:`RunConfig` into stage
checkpoints with per-step loss rows; the :class:`Pipeline` bundle loads
those checkpoints back and exposes generation, global transformation,
inpainting, length extension, and codec round trips over audio files.

Every random draw is step- or call-addressed through derived seeds, so a
resumed training run continues exactly where an uninterrupted run would
be, and two runs with the same seed produce identical artifacts.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .checkpoints import (
    STAGES,
    CheckpointError,
    MissingCheckpointError,
    checkpoint_hash,
    load_checkpoint,
    require_stages,
    save_checkpoint,
    stage_path,
)
from .config import RunConfig
from .data import (
    AugmentConfig,
    NoteRecord,
    describe,
    load_manifest,
    normalize_clip,
)
from .diffusion import (
    DiffusionTrainer,
    NoisePredictor,
    make_cfg_predict_fn,
    sample,
)
from .embedding import ContrastiveTrainer, JointEmbedding, Vocabulary
from .manipulate import (
    InpaintMask,
    RepaintConfig,
    extend_length,
    mask_to_rle,
    repaint,
    spectral_mask_to_latent,
    transform,
)
from .spectral import (
    AudioClip,
    ShapeMismatchError,
    SpectralImage,
    fit_to_grid,
    istft_plus,
    read_wav,
    silence_values,
    stft_plus,
    unfit_from_grid,
)
from .vqgan import (
    LatentCode,
    PatchDiscriminator,
    VqGan,
    VqGanTrainer,
    batch_from_images,
)


def _derive_seed(tag: str, seed: int) -> int:
    return zlib.crc32(f"{tag}:{seed}".encode())


# --- seeded model construction ----------------------------------------------


def init_vqgan(config: RunConfig) -> tuple[VqGan, PatchDiscriminator]:
    torch.manual_seed(_derive_seed("init-vqgan", config.seed))
    return VqGan(config.vqgan), PatchDiscriminator(config.vqgan)


def init_embedding(config: RunConfig, vocabulary: Vocabulary) -> JointEmbedding:
    torch.manual_seed(_derive_seed("init-embedding", config.seed))
    return JointEmbedding(vocabulary, config.embedding)


def init_predictor(config: RunConfig) -> NoisePredictor:
    torch.manual_seed(_derive_seed("init-diffusion", config.seed))
    return NoisePredictor(config.diffusion)


def augment_config(config: RunConfig) -> AugmentConfig:
    return AugmentConfig(style_weights={s: 1.0 for s in config.train.text_styles})


def build_vocabulary(records: list[NoteRecord], config: RunConfig) -> Vocabulary:
    """Token set from a deterministic sweep of every configured style."""
    texts = []
    for style in config.train.text_styles:
        single = AugmentConfig(style_weights={style: 1.0})
        for i, rec in enumerate(records):
            for draw in range(8):
                texts.append(
                    describe(rec, single, _derive_seed(f"vocab-{style}-{draw}", i)).text
                )
    return Vocabulary.from_texts(texts)


# --- training data -----------------------------------------------------------


def load_training_set(
    manifest_path: str | Path, config: RunConfig
) -> tuple[list[NoteRecord], list[SpectralImage]]:
    """Manifest records plus their grid-fitted spectral images."""
    records = load_manifest(manifest_path)
    if not records:
        raise ValueError(f"manifest {manifest_path} contains no records")
    r = config.vqgan.downsample_factor
    images = []
    for rec in records:
        clip = normalize_clip(read_wav(rec.audio_path), config.audio)
        images.append(fit_to_grid(stft_plus(clip, config.audio), r))
    return records, images


def _batch_indices(
    n: int, batch_size: int, tag: str, seed: int, step: int
) -> torch.Tensor:
    g = torch.Generator().manual_seed(_derive_seed(f"{tag}:{step}", seed))
    return torch.randperm(n, generator=g)[: min(batch_size, n)]


def _step_texts(
    records: list[NoteRecord],
    idx: torch.Tensor,
    aug: AugmentConfig,
    seed: int,
    step: int,
) -> list[str]:
    return [
        describe(records[int(i)], aug, _derive_seed(f"text:{step}:{int(i)}", seed)).text
        for i in idx
    ]


@dataclass
class TrainResult:
    stage: str
    rows: list[dict]
    checkpoint: Path
    start_step: int
    end_step: int


def train_vqgan(
    config: RunConfig,
    images: list[SpectralImage],
    out_dir: str | Path,
    steps: int | None = None,
    resume: bool = False,
) -> TrainResult:
    total = config.train.vqgan_steps if steps is None else int(steps)
    model, disc = init_vqgan(config)
    trainer = VqGanTrainer(model, disc)
    path = stage_path(out_dir, "vqgan")
    start = 0
    if resume and path.exists():
        payload = load_checkpoint(path, "vqgan")
        state = payload["state"]
        model.load_state_dict(state["model"])
        disc.load_state_dict(state["disc"])
        trainer.opt_g.load_state_dict(state["opt_g"])
        trainer.opt_d.load_state_dict(state["opt_d"])
        start = trainer.step_count = payload["step"]

    data = batch_from_images(images)
    rows = []
    for step in range(start, total):
        idx = _batch_indices(
            len(images), config.train.batch_size, "batch-vqgan", config.seed, step
        )
        report = trainer.step(data[idx])
        rows.append(
            {
                "step": step,
                "recon": report.recon,
                "codebook": report.codebook_loss,
                "commit": report.commit_loss,
                "gen_adv": report.gen_adv,
                "disc": report.disc_loss,
            }
        )
    save_checkpoint(
        path,
        "vqgan",
        config,
        {
            "model": model.state_dict(),
            "disc": disc.state_dict(),
            "opt_g": trainer.opt_g.state_dict(),
            "opt_d": trainer.opt_d.state_dict(),
        },
        step=max(total, start),
    )
    return TrainResult("vqgan", rows, path, start, max(total, start))


def _load_frozen_vqgan(config: RunConfig, out_dir: str | Path) -> VqGan:
    payload = load_checkpoint(stage_path(out_dir, "vqgan"), "vqgan")
    model = VqGan(config.vqgan)
    model.load_state_dict(payload["state"]["model"])
    return model.eval()


def _encode_all(model: VqGan, images: list[SpectralImage]) -> torch.Tensor:
    with torch.no_grad():
        return model.encode_tensor(batch_from_images(images))


def train_embedding(
    config: RunConfig,
    records: list[NoteRecord],
    images: list[SpectralImage],
    out_dir: str | Path,
    steps: int | None = None,
    resume: bool = False,
) -> TrainResult:
    require_stages(out_dir, ("vqgan",), "the embedding stage")
    total = config.train.embedding_steps if steps is None else int(steps)
    path = stage_path(out_dir, "embedding")
    latents = _encode_all(_load_frozen_vqgan(config, out_dir), images)
    aug = augment_config(config)

    start = 0
    if resume and path.exists():
        payload = load_checkpoint(path, "embedding")
        vocab = Vocabulary(payload["state"]["vocabulary"])
        model = init_embedding(config, vocab)
        model.load_state_dict(payload["state"]["model"])
        trainer = ContrastiveTrainer(model)
        trainer.optimizer.load_state_dict(payload["state"]["optimizer"])
        start = trainer.step_count = payload["step"]
    else:
        vocab = build_vocabulary(records, config)
        model = init_embedding(config, vocab)
        trainer = ContrastiveTrainer(model)

    rows = []
    for step in range(start, total):
        idx = _batch_indices(
            len(records), config.train.batch_size, "batch-embedding", config.seed, step
        )
        texts = _step_texts(records, idx, aug, config.seed, step)
        loss = trainer.step(latents[idx], texts)
        with torch.no_grad():
            temperature = float(model.temperature)
        rows.append({"step": step, "loss": loss, "temperature": temperature})
    save_checkpoint(
        path,
        "embedding",
        config,
        {
            "model": model.state_dict(),
            "optimizer": trainer.optimizer.state_dict(),
            "vocabulary": model.vocabulary.content_tokens,
        },
        step=max(total, start),
    )
    return TrainResult("embedding", rows, path, start, max(total, start))


def _load_frozen_embedding(config: RunConfig, out_dir: str | Path) -> JointEmbedding:
    payload = load_checkpoint(stage_path(out_dir, "embedding"), "embedding")
    model = JointEmbedding(Vocabulary(payload["state"]["vocabulary"]), config.embedding)
    model.load_state_dict(payload["state"]["model"])
    return model.eval()


def train_diffusion(
    config: RunConfig,
    records: list[NoteRecord],
    images: list[SpectralImage],
    out_dir: str | Path,
    steps: int | None = None,
    resume: bool = False,
) -> TrainResult:
    require_stages(out_dir, ("vqgan", "embedding"), "the diffusion stage")
    total = config.train.diffusion_steps if steps is None else int(steps)
    path = stage_path(out_dir, "diffusion")

    vqgan = _load_frozen_vqgan(config, out_dir)
    joint = _load_frozen_embedding(config, out_dir)
    latents = _encode_all(vqgan, images)
    e_null = torch.from_numpy(joint.empty_text().vector).to(torch.float32)
    aug = augment_config(config)

    predictor = init_predictor(config)
    predictor.set_latent_stats(
        float(latents.mean()), max(float(latents.std()), 1e-6)
    )
    trainer = DiffusionTrainer(predictor, seed=config.seed)
    start = 0
    if resume and path.exists():
        payload = load_checkpoint(path, "diffusion")
        predictor.load_state_dict(payload["state"]["model"])
        trainer.optimizer.load_state_dict(payload["state"]["optimizer"])
        start = trainer.step_count = payload["step"]

    rows = []
    for step in range(start, total):
        idx = _batch_indices(
            len(records), config.train.batch_size, "batch-diffusion", config.seed, step
        )
        texts = _step_texts(records, idx, aug, config.seed, step)
        with torch.no_grad():
            e = joint.encode_text_batch(texts)
        trainer.rng.manual_seed(_derive_seed(f"noise:{step}", config.seed))
        loss = trainer.step(latents[idx], e, e_null)
        rows.append({"step": step, "loss": loss})
    save_checkpoint(
        path,
        "diffusion",
        config,
        {
            "model": predictor.state_dict(),
            "optimizer": trainer.optimizer.state_dict(),
        },
        step=max(total, start),
    )
    return TrainResult("diffusion", rows, path, start, max(total, start))


def run_training_stage(
    stage: str,
    config: RunConfig,
    manifest_path: str | Path,
    out_dir: str | Path,
    steps: int | None = None,
    resume: bool = False,
) -> TrainResult:
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; choose from {list(STAGES)}")
    records, images = load_training_set(manifest_path, config)
    if stage == "vqgan":
        return train_vqgan(config, images, out_dir, steps, resume)
    if stage == "embedding":
        return train_embedding(config, records, images, out_dir, steps, resume)
    return train_diffusion(config, records, images, out_dir, steps, resume)


# --- inference bundle --------------------------------------------------------


@dataclass
class PipelineResult:
    """One finished operation: audio plus every intermediate surface."""

    audio: AudioClip
    image: SpectralImage
    grid: SpectralImage
    latent: LatentCode
    params: dict


class Pipeline:
    """Loaded checkpoint bundle exposing the end-user operations.

    Model weights are immutable after load; every operation owns its
    generator, so concurrent calls never share random state.
    """

    def __init__(
        self,
        config: RunConfig,
        vqgan: VqGan,
        joint: JointEmbedding,
        predictor: NoisePredictor,
        checkpoint_hashes: dict[str, str] | None = None,
    ):
        self.config = config
        self.vqgan = vqgan.eval()
        self.joint = joint.eval()
        self.predictor = predictor.eval()
        self.schedule = predictor.cfg.make_schedule()
        self.checkpoint_hashes = dict(checkpoint_hashes or {})
        self.grid_h, self.grid_w = config.grid_shape
        channels, self.latent_h, self.latent_w = config.latent_shape
        self.latent_channels = channels
        self._e_null = torch.from_numpy(self.joint.empty_text().vector).to(
            torch.float32
        )

    @classmethod
    def load(cls, checkpoint_dir: str | Path) -> "Pipeline":
        root = Path(checkpoint_dir)
        payloads = {}
        for stage in STAGES:
            payloads[stage] = load_checkpoint(stage_path(root, stage), stage)
        docs = [payloads[s]["config"] for s in STAGES]
        if any(doc != docs[0] for doc in docs[1:]):
            raise CheckpointError(
                "checkpoints in "
                f"{root} were produced with different configurations; retrain"
            )
        config = RunConfig.from_dict(docs[0])
        vqgan = VqGan(config.vqgan)
        vqgan.load_state_dict(payloads["vqgan"]["state"]["model"])
        joint = JointEmbedding(
            Vocabulary(payloads["embedding"]["state"]["vocabulary"]), config.embedding
        )
        joint.load_state_dict(payloads["embedding"]["state"]["model"])
        predictor = NoisePredictor(config.diffusion)
        predictor.load_state_dict(payloads["diffusion"]["state"]["model"])
        hashes = {s: checkpoint_hash(stage_path(root, s)) for s in STAGES}
        return cls(config, vqgan, joint, predictor, hashes)

    # -- shared pieces ----------------------------------------------------
    def _embeddings(self, prompt: str) -> tuple[torch.Tensor, torch.Tensor]:
        if len(prompt) > 256:
            raise ValueError("prompt exceeds 256 characters")
        e_cond = torch.from_numpy(self.joint.encode_text(prompt).vector).to(
            torch.float32
        )
        return e_cond, self._e_null

    def _resolve(self, guidance_w: float | None, steps: int | None) -> tuple[float, int]:
        w = (
            self.config.diffusion.guidance_scale
            if guidance_w is None
            else float(guidance_w)
        )
        if w < 0:
            raise ValueError("guidance_w must be non-negative")
        steps = self.config.diffusion.sample_steps if steps is None else int(steps)
        if steps < 1:
            raise ValueError("steps must be positive")
        return w, steps

    def prepare_grid(self, clip: AudioClip) -> SpectralImage:
        """Normalize the audio and fit its spectral image to the model grid."""
        clip = normalize_clip(clip, self.config.audio)
        return fit_to_grid(
            stft_plus(clip, self.config.audio), self.config.vqgan.downsample_factor
        )

    def prepare(self, clip: AudioClip) -> tuple[SpectralImage, LatentCode]:
        grid = self.prepare_grid(clip)
        return grid, self.vqgan.encode(grid)

    def _postprocess(self, latent: LatentCode, params: dict) -> PipelineResult:
        """Decode, repair the generated surface, invert, and loudness-guard."""
        grid_img = self.vqgan.decode(latent)
        data = grid_img.data
        floor, sin0, cos0 = silence_values(self.config.audio)
        logmag = np.maximum(data[0], floor)
        modulus = np.hypot(data[1], data[2])
        ok = modulus > 1e-6
        safe = np.where(ok, modulus, 1.0)
        sin = np.where(ok, data[1] / safe, sin0)
        cos = np.where(ok, data[2] / safe, cos0)
        grid_img = SpectralImage(
            data=np.stack([logmag, sin, cos]), stft_config=self.config.audio
        )

        pad_cols = self.grid_w - self.config.audio.num_frames
        frames = grid_img.frames - pad_cols
        cfg = self.config.audio
        if frames != cfg.num_frames:
            cfg = replace(cfg, duration=(frames - 1) * cfg.hop_size / cfg.sample_rate)
        full = unfit_from_grid(grid_img, cfg.freq_bins, frames)
        full = SpectralImage(data=full.data, stft_config=cfg)
        clip = istft_plus(full, cfg)
        peak = float(np.max(np.abs(clip.samples)))
        if peak > 1.0:
            clip = AudioClip(samples=clip.samples / peak, sample_rate=clip.sample_rate)
        return PipelineResult(
            audio=clip, image=full, grid=grid_img, latent=latent, params=params
        )

    def _params(self, command: str, **kw) -> dict:
        return {
            "command": command,
            **kw,
            "sample_rate": self.config.audio.sample_rate,
            "checkpoints": self.checkpoint_hashes,
        }

    # -- operations -------------------------------------------------------
    def generate(
        self,
        prompt: str,
        guidance_w: float | None = None,
        seed: int = 0,
        steps: int | None = None,
    ) -> PipelineResult:
        w, steps = self._resolve(guidance_w, steps)
        e_cond, e_null = self._embeddings(prompt)
        rng = torch.Generator().manual_seed(int(seed))
        shape = (1, self.latent_channels, self.latent_h, self.latent_w)
        with torch.no_grad():
            z = sample(
                make_cfg_predict_fn(self.predictor, e_cond, e_null, w),
                self.schedule,
                shape,
                rng,
                steps_override=steps,
            )
            z = self.predictor.denormalize_latent(z)
        latent = LatentCode(data=z[0].numpy(), quantized=False)
        if self.config.diffusion.quantize_samples:
            with torch.no_grad():
                z_q, _, _, _ = self.vqgan.quantize_t(z)
            latent = LatentCode(data=z_q[0].numpy(), quantized=True)
        params = self._params(
            "generate", prompt=prompt, guidance_w=w, seed=int(seed), steps=steps
        )
        return self._postprocess(latent, params)

    def roundtrip(self, clip: AudioClip) -> PipelineResult:
        _, latent = self.prepare(clip)
        return self._postprocess(latent, self._params("roundtrip"))

    def transform(
        self,
        clip: AudioClip,
        prompt: str,
        t0: int,
        guidance_w: float | None = None,
        seed: int = 0,
        steps: int | None = None,
    ) -> PipelineResult:
        w, steps = self._resolve(guidance_w, steps)
        e_cond, e_null = self._embeddings(prompt)
        _, latent = self.prepare(clip)
        rng = torch.Generator().manual_seed(int(seed))
        out = transform(
            self.predictor,
            self.schedule,
            latent,
            int(t0),
            e_cond,
            e_null,
            w,
            rng,
            steps_override=steps,
        )
        params = self._params(
            "transform",
            prompt=prompt,
            t0=int(t0),
            guidance_w=w,
            seed=int(seed),
            steps=steps,
        )
        return self._postprocess(out, params)

    def inpaint(
        self,
        clip: AudioClip,
        mask_spec: np.ndarray,
        prompt: str,
        guidance_w: float | None = None,
        seed: int = 0,
        steps: int | None = None,
        jump_length: int = 10,
        resample_count: int = 1,
    ) -> PipelineResult:
        w, steps = self._resolve(guidance_w, steps)
        mask_spec = np.asarray(mask_spec)
        if mask_spec.shape != (self.grid_h, self.grid_w):
            raise ShapeMismatchError(
                f"mask dims {mask_spec.shape} do not match the spectrogram grid "
                f"{(self.grid_h, self.grid_w)}"
            )
        latent_mask = spectral_mask_to_latent(
            mask_spec, self.config.vqgan.downsample_factor
        )
        e_cond, e_null = self._embeddings(prompt)
        _, latent = self.prepare(clip)
        out = repaint(
            self.predictor,
            self.schedule,
            latent,
            latent_mask,
            e_cond,
            e_null,
            RepaintConfig(
                jump_length=jump_length,
                resample_count=resample_count,
                w=w,
                seed=int(seed),
            ),
            steps_override=steps,
        )
        params = self._params(
            "inpaint",
            prompt=prompt,
            guidance_w=w,
            seed=int(seed),
            steps=steps,
            jump_length=jump_length,
            resample_count=resample_count,
            mask_rle=mask_to_rle(InpaintMask(grid=mask_spec)),
        )
        return self._postprocess(out, params)

    def extend(
        self,
        clip: AudioClip,
        target_frames: int,
        prompt: str,
        guidance_w: float | None = None,
        seed: int = 0,
        steps: int | None = None,
        jump_length: int = 10,
        resample_count: int = 1,
    ) -> PipelineResult:
        w, steps = self._resolve(guidance_w, steps)
        e_cond, e_null = self._embeddings(prompt)
        grid = self.prepare_grid(clip)
        result = extend_length(
            self.vqgan,
            self.predictor,
            self.schedule,
            grid,
            int(target_frames),
            e_cond,
            e_null,
            RepaintConfig(
                jump_length=jump_length,
                resample_count=resample_count,
                w=w,
                seed=int(seed),
            ),
            steps_override=steps,
        )
        params = self._params(
            "extend",
            prompt=prompt,
            target_frames=int(target_frames),
            actual_frames=result.actual_frames,
            guidance_w=w,
            seed=int(seed),
            steps=steps,
            jump_length=jump_length,
            resample_count=resample_count,
        )
        return self._postprocess(result.latent, params)
