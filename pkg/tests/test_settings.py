"""
Configuration Tests
===================

Run configuration precedence (flags over file over defaults), validation of
values and keys, and process-level settings.
"""

import pytest

from geodet.config.settings import RunConfig, Settings, load_run_config
from geodet.core.exceptions import ConfigurationError


class TestRunConfig:
    """Test run configuration loading."""

    def test_defaults(self):
        config = load_run_config()
        assert config.alpha == 2.0
        assert config.beta == 0.5
        assert config.optimizer == "adamw"
        assert config.lr == 0.0002
        assert config.weight_decay == 0.05
        assert config.use_gal and config.use_dcg

    def test_file_overrides_defaults(self, tmp_path):
        path = tmp_path / "run.env"
        path.write_text("alpha=3.5\nEPOCHS=12\nuse_dcg=false\n")
        config = load_run_config(path)
        assert config.alpha == 3.5
        assert config.epochs == 12
        assert config.use_dcg is False

    def test_flags_override_file(self, tmp_path):
        path = tmp_path / "run.env"
        path.write_text("alpha=3.5\nbeta=0.2\n")
        config = load_run_config(path, alpha=1.0, beta=None)
        assert config.alpha == 1.0
        # an unset flag falls through to the file
        assert config.beta == 0.2

    def test_environment_is_not_a_source(self, monkeypatch):
        monkeypatch.setenv("ALPHA", "9.0")
        assert load_run_config().alpha == 2.0

    def test_unknown_key_in_file(self, tmp_path):
        path = tmp_path / "run.env"
        path.write_text("alpah=3.0\n")
        with pytest.raises(ConfigurationError):
            load_run_config(path)

    def test_unknown_override(self):
        with pytest.raises(ConfigurationError):
            load_run_config(gamma=1.0)

    @pytest.mark.parametrize("field,value", [
        ("alpha", 0.0), ("alpha", -1.0), ("beta", -0.5), ("lr", 0.0), ("epochs", 0),
        ("distance_metric", "chebyshev"), ("optimizer", "rmsprop"), ("channels", 0),
    ])
    def test_invalid_values(self, field, value):
        with pytest.raises(ConfigurationError) as info:
            load_run_config(**{field: value})
        assert info.value.details["errors"][0]["field"] == field

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_run_config(tmp_path / "absent.env")

    def test_with_overrides_revalidates(self):
        config = load_run_config(seed=3)
        assert config.with_overrides(alpha=4.0).alpha == 4.0
        assert config.with_overrides(alpha=4.0).seed == 3
        with pytest.raises(ConfigurationError):
            config.with_overrides(alpha=-4.0)

    def test_model_config_dict_keys(self):
        keys = set(RunConfig().model_config_dict())
        assert keys == {"alpha", "distance_metric", "use_gal", "use_dcg", "channels", "hidden", "layers",
                        "log_size_clip", "voxel_size"}


class TestSettings:
    """Test process-level settings."""

    def test_env_prefix(self, monkeypatch):
        monkeypatch.setenv("GEODET_WORKERS", "4")
        monkeypatch.setenv("GEODET_LOG_LEVEL", "debug")
        settings = Settings()
        assert settings.workers == 4
        assert settings.log_level == "DEBUG"

    def test_bad_log_level(self, monkeypatch):
        monkeypatch.setenv("GEODET_LOG_LEVEL", "chatty")
        with pytest.raises(ValueError):
            Settings()
