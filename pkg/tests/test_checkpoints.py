"""Checkpoint container format, atomicity, and dependency-check tests."""

import torch
import pytest

from timbregen.checkpoints import (
    FORMAT_VERSION,
    STAGE_DEPENDENCIES,
    STAGES,
    CheckpointError,
    MissingCheckpointError,
    checkpoint_hash,
    load_checkpoint,
    require_stages,
    save_checkpoint,
    stage_path,
)
from timbregen.config import RunConfig


CFG = RunConfig()


def write_stage(root, stage, step=3):
    return save_checkpoint(
        stage_path(root, stage),
        stage,
        CFG,
        {"weights": torch.zeros(2)},
        step=step,
        extra={"note": stage},
    )


class TestSaveLoad:
    def test_round_trip_payload(self, tmp_path):
        path = write_stage(tmp_path, "vqgan", step=7)
        payload = load_checkpoint(path, "vqgan")
        assert payload["format_version"] == FORMAT_VERSION
        assert payload["kind"] == "vqgan"
        assert payload["step"] == 7
        assert payload["extra"] == {"note": "vqgan"}
        assert torch.equal(payload["state"]["weights"], torch.zeros(2))
        assert RunConfig.from_dict(payload["config"]) == CFG

    def test_save_creates_parent_dirs(self, tmp_path):
        path = save_checkpoint(
            tmp_path / "a" / "b" / "vqgan.pt", "vqgan", CFG, {}, step=0
        )
        assert path.exists()

    def test_no_tmp_file_left_behind(self, tmp_path):
        write_stage(tmp_path, "vqgan")
        assert list(tmp_path.glob("*.tmp")) == []

    def test_overwrite_replaces_atomically(self, tmp_path):
        write_stage(tmp_path, "vqgan", step=1)
        write_stage(tmp_path, "vqgan", step=2)
        assert load_checkpoint(stage_path(tmp_path, "vqgan"))["step"] == 2

    def test_hash_is_stable_and_content_sensitive(self, tmp_path):
        path = write_stage(tmp_path, "vqgan", step=1)
        h1 = checkpoint_hash(path)
        assert h1 == checkpoint_hash(path)
        write_stage(tmp_path, "vqgan", step=2)
        assert checkpoint_hash(path) != h1


class TestValidation:
    def test_missing_file_names_stage_and_command(self, tmp_path):
        with pytest.raises(MissingCheckpointError, match="diffusion"):
            load_checkpoint(tmp_path / "diffusion.pt", "diffusion")
        with pytest.raises(
            MissingCheckpointError, match="train --stage diffusion"
        ):
            load_checkpoint(tmp_path / "diffusion.pt", "diffusion")

    def test_missing_is_subclass_of_checkpoint_error(self):
        assert issubclass(MissingCheckpointError, CheckpointError)

    def test_unreadable_file(self, tmp_path):
        path = tmp_path / "vqgan.pt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(CheckpointError, match="cannot read"):
            load_checkpoint(path)

    def test_unrecognized_container(self, tmp_path):
        path = tmp_path / "vqgan.pt"
        torch.save({"weights": torch.zeros(1)}, path)
        with pytest.raises(CheckpointError, match="not a recognized"):
            load_checkpoint(path)

    def test_future_format_version(self, tmp_path):
        path = write_stage(tmp_path, "vqgan")
        payload = torch.load(path, weights_only=False)
        payload["format_version"] = FORMAT_VERSION + 1
        torch.save(payload, path)
        with pytest.raises(CheckpointError, match="format"):
            load_checkpoint(path)

    def test_kind_mismatch(self, tmp_path):
        path = write_stage(tmp_path, "vqgan")
        with pytest.raises(CheckpointError, match="expected 'embedding'"):
            load_checkpoint(path, "embedding")

    def test_kind_check_optional(self, tmp_path):
        path = write_stage(tmp_path, "vqgan")
        assert load_checkpoint(path)["kind"] == "vqgan"


class TestStageDependencies:
    def test_stage_order(self):
        assert STAGES == ("vqgan", "embedding", "diffusion")
        assert STAGE_DEPENDENCIES["diffusion"] == ("vqgan", "embedding")

    def test_require_stages_passes_when_present(self, tmp_path):
        for stage in ("vqgan", "embedding"):
            write_stage(tmp_path, stage)
        require_stages(tmp_path, ("vqgan", "embedding"), "the diffusion stage")

    def test_require_stages_names_first_missing(self, tmp_path):
        write_stage(tmp_path, "vqgan")
        with pytest.raises(MissingCheckpointError) as err:
            require_stages(tmp_path, ("vqgan", "embedding"), "the diffusion stage")
        assert "embedding" in str(err.value)
        assert "the diffusion stage" in str(err.value)
        assert "train --stage embedding" in str(err.value)
