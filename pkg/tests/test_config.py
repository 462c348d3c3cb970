"""Run-configuration document validation and round-trip tests."""

import pytest
import yaml

from timbregen.config import (
    ConfigError,
    RunConfig,
    ServiceConfig,
    TrainConfig,
    demo_config,
)


class TestDefaultsAndGeometry:
    def test_default_document_is_valid(self):
        cfg = RunConfig()
        assert cfg.seed == 0
        assert cfg.audio.sample_rate == 16000

    def test_demo_profile_geometry(self):
        cfg = demo_config()
        assert cfg.audio.freq_bins == 129
        assert cfg.audio.num_frames == 126
        assert cfg.grid_shape == (128, 128)
        assert cfg.latent_shape == (4, 16, 16)

    def test_grid_shape_crops_freq_and_pads_time(self):
        cfg = demo_config()
        h, w = cfg.grid_shape
        r = cfg.vqgan.downsample_factor
        assert h == (cfg.audio.freq_bins // r) * r
        assert w >= cfg.audio.num_frames and w % r == 0


class TestDocumentRoundTrip:
    def test_to_dict_from_dict_is_identity(self):
        cfg = demo_config()
        assert RunConfig.from_dict(cfg.to_dict()) == cfg

    def test_save_load_round_trip(self, tmp_path):
        cfg = demo_config()
        path = tmp_path / "run.yaml"
        cfg.save(path)
        assert RunConfig.load(path) == cfg

    def test_saved_document_is_plain_yaml(self, tmp_path):
        path = tmp_path / "run.yaml"
        demo_config().save(path)
        doc = yaml.safe_load(path.read_text())
        assert doc["audio"]["sample_rate"] == 4000
        assert doc["train"]["text_styles"] == ["keywords"]

    def test_empty_document_gives_defaults(self):
        assert RunConfig.from_dict({}) == RunConfig()
        assert RunConfig.from_dict(None) == RunConfig()

    def test_partial_section_keeps_other_defaults(self):
        cfg = RunConfig.from_dict({"audio": {"sample_rate": 8000}})
        assert cfg.audio.sample_rate == 8000
        assert cfg.audio.window_size == 1024


class TestRejection:
    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="bogus"):
            RunConfig.from_dict({"bogus": 1})

    def test_unknown_section_key_reports_dotted_path(self):
        with pytest.raises(ConfigError, match=r"audio\.window_sz"):
            RunConfig.from_dict({"audio": {"window_sz": 256}})

    def test_root_must_be_mapping(self):
        with pytest.raises(ConfigError, match="mapping"):
            RunConfig.from_dict([1, 2, 3])

    def test_section_must_be_mapping(self):
        with pytest.raises(ConfigError, match="audio"):
            RunConfig.from_dict({"audio": [1]})

    def test_wrong_type_reports_dotted_path(self):
        with pytest.raises(ConfigError, match=r"audio\.window_size"):
            RunConfig.from_dict({"audio": {"window_size": "big"}})

    def test_bool_rejected_where_int_expected(self):
        with pytest.raises(ConfigError, match=r"audio\.window_size"):
            RunConfig.from_dict({"audio": {"window_size": True}})

    def test_seed_must_be_int(self):
        with pytest.raises(ConfigError, match="seed"):
            RunConfig.from_dict({"seed": True})
        with pytest.raises(ConfigError, match="seed"):
            RunConfig.from_dict({"seed": "7"})

    def test_int_accepted_for_float_field(self):
        cfg = RunConfig.from_dict({"audio": {"duration": 2}})
        assert cfg.audio.duration == 2.0
        assert isinstance(cfg.audio.duration, float)

    def test_section_validation_error_wrapped(self):
        with pytest.raises(ConfigError, match="audio"):
            RunConfig.from_dict({"audio": {"window_size": -4}})


class TestDerivedWiring:
    def test_derived_field_filled_from_source(self):
        cfg = RunConfig.from_dict({"vqgan": {"latent_channels": 8}})
        assert cfg.embedding.latent_channels == 8
        assert cfg.diffusion.latent_channels == 8

    def test_matching_derived_value_accepted(self):
        cfg = RunConfig.from_dict(
            {"vqgan": {"latent_channels": 8}, "diffusion": {"latent_channels": 8}}
        )
        assert cfg.diffusion.latent_channels == 8

    def test_conflicting_derived_value_rejected(self):
        with pytest.raises(ConfigError, match="wired from"):
            RunConfig.from_dict(
                {"vqgan": {"latent_channels": 8}, "diffusion": {"latent_channels": 4}}
            )

    def test_cond_dim_follows_embedding_dim(self):
        cfg = RunConfig.from_dict({"embedding": {"dim": 64}})
        assert cfg.diffusion.cond_dim == 64

    def test_eps_floor_follows_audio(self):
        cfg = RunConfig.from_dict({"audio": {"eps_floor": 1e-4}})
        assert cfg.vqgan.eps_floor == 1e-4

    def test_direct_constructor_rejects_inconsistency(self):
        from timbregen.diffusion import DiffusionConfig

        with pytest.raises(ConfigError, match="cond_dim"):
            RunConfig(diffusion=DiffusionConfig(cond_dim=7))

    def test_freq_bins_must_cover_downsample_factor(self):
        with pytest.raises(ConfigError, match="downsampled"):
            RunConfig.from_dict(
                {
                    "audio": {"window_size": 8, "hop_size": 4},
                    "vqgan": {"downsample_factor": 8},
                }
            )


class TestFileErrors:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            RunConfig.load(tmp_path / "nope.yaml")

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("audio: [unclosed\n")
        with pytest.raises(ConfigError, match="invalid YAML"):
            RunConfig.load(path)


class TestSectionConfigs:
    def test_train_styles_must_be_known(self):
        with pytest.raises(ConfigError, match="text_styles"):
            TrainConfig(text_styles=("keywords", "sonnet"))
        with pytest.raises(ConfigError, match="text_styles"):
            TrainConfig(text_styles=())

    def test_train_step_counts_non_negative(self):
        with pytest.raises(ConfigError):
            TrainConfig(vqgan_steps=-1)
        TrainConfig(vqgan_steps=0)  # zero steps is a valid no-op budget

    def test_service_limits_positive(self):
        with pytest.raises(ConfigError):
            ServiceConfig(max_steps=0)
        with pytest.raises(ConfigError):
            ServiceConfig(max_in_flight=0)
        with pytest.raises(ConfigError):
            ServiceConfig(artifact_ttl_seconds=0.0)
