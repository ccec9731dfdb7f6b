import pytest

from xtalflow.config import ConfigError, RunConfig, load_config, parse_config_text


class TestParse:
    def test_values_and_comments(self):
        out = parse_config_text("lr = 1e-3  # learning rate\n\nguidance = on\nsteps=200\n")
        assert out == {"lr": 1e-3, "guidance": "on", "steps": 200}

    def test_malformed_line(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config_text("lr = 1\nnonsense\n")


class TestLoad:
    def test_sampling_defaults(self):
        cfg = load_config()
        assert cfg.guidance_scale == 2.0
        assert cfg.noise_level == 0.1
        assert cfg.steps == 500

    def test_match_tolerance_defaults(self):
        cfg = RunConfig()
        assert (cfg.stol, cfg.ltol, cfg.angle_tol) == (0.5, 0.3, 10.0)

    def test_precedence(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("lr = 5e-4\nbatch_size = 64\n")
        cfg = load_config(path, batch_size=8)
        assert cfg.lr == 5e-4 and cfg.batch_size == 8

    def test_file_values_load_exactly(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("guidance_scale = 2.0\nnoise_level = 0.1\n")
        cfg = load_config(path)
        assert cfg.guidance_scale == 2.0 and cfg.noise_level == 0.1

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown"):
            load_config(learning_rate=1.0)

    def test_type_coercion(self):
        cfg = load_config(augment_translation="false", steps=100.0)
        assert cfg.augment_translation is False and cfg.steps == 100
        with pytest.raises(ConfigError):
            load_config(steps=1.5)

    @pytest.mark.parametrize("kwargs", [{"time_clip": 0.0}, {"guidance": "maybe"}, {"lr": -1.0},
                                        {"atg_guidance_mix": "prob"}, {"noise_level": 2.0}])
    def test_invalid_values(self, kwargs):
        with pytest.raises(ConfigError):
            load_config(**kwargs)

    def test_roundtrip_through_dict(self):
        cfg = load_config(lr=3e-4)
        assert RunConfig(**cfg.to_dict()) == cfg
