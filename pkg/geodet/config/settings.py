import logging
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple, Type, Union

from pydantic import Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from geodet.core.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

DistanceMetric = Literal["euclidean", "manhattan", "mahalanobis"]
OptimizerName = Literal["adamw", "sgd"]

_LOG_LEVELS = ("CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG")


class Settings(BaseSettings):
    """Process-level configuration read from GEODET_* environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="GEODET_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Application Settings
    app_name: str = Field(default="geodet")
    app_version: str = Field(default="0.3.0")

    # Logging Configuration
    log_level: str = Field(default="INFO")
    log_format: str = Field(default="%(asctime)s - %(name)s - %(levelname)s - %(message)s")

    # Execution
    workers: int = Field(default=1, ge=1, description="Threads for read-only per-scene fan-out")
    output_indent: int = Field(default=2, ge=0)

    @field_validator("log_level", mode="before")
    @classmethod
    def validate_log_level(cls, v):
        """Normalize and validate the logging level name."""
        level = str(v).strip().upper()
        if level not in _LOG_LEVELS:
            raise ValueError(f"log_level must be one of {', '.join(_LOG_LEVELS)}")
        return level


class RunConfig(BaseSettings):
    """
    Experiment-level configuration.

    Precedence, highest first: explicit keyword arguments (CLI flags), the
    flat key=value config file passed as ``_env_file``, built-in defaults.
    The process environment is deliberately not a source.
    """

    model_config = SettingsConfigDict(
        case_sensitive=False,
        extra="forbid",
        env_file_encoding="utf-8",
    )

    # Geometry-aware weighting
    alpha: float = Field(default=2.0, gt=0)
    distance_metric: DistanceMetric = Field(default="euclidean")
    use_gal: bool = Field(default=True)

    # Channel gating
    use_dcg: bool = Field(default=True)

    # Loss
    beta: float = Field(default=0.5, ge=0)

    # Architecture
    channels: int = Field(default=32, ge=1)
    hidden: int = Field(default=64, ge=1)
    layers: int = Field(default=2, ge=1)
    log_size_clip: float = Field(default=10.0, gt=0)

    # Superpoints
    voxel_size: float = Field(default=0.25, gt=0)

    # Optimization
    optimizer: OptimizerName = Field(default="adamw")
    lr: float = Field(default=0.0002, gt=0)
    weight_decay: float = Field(default=0.05, ge=0)
    poly_power: float = Field(default=0.9, ge=0)
    adam_beta1: float = Field(default=0.9, ge=0, lt=1)
    adam_beta2: float = Field(default=0.999, ge=0, lt=1)
    adam_eps: float = Field(default=1e-8, gt=0)
    epochs: int = Field(default=500, ge=1)
    log_every: int = Field(default=50, ge=1)

    # Randomness
    seed: int = Field(default=7, ge=0)

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        return init_settings, dotenv_settings

    @model_validator(mode="after")
    def check_ablation(self):
        """Flag a distance metric that the disabled weighting branch would ignore."""
        if self.distance_metric != "euclidean" and not self.use_gal:
            logger.warning(f"distance_metric={self.distance_metric} has no effect with use_gal disabled")
        return self

    def model_config_dict(self) -> Dict[str, Any]:
        """Architecture and geometry fields persisted with a checkpoint."""
        return {
            "alpha": self.alpha,
            "distance_metric": self.distance_metric,
            "use_gal": self.use_gal,
            "use_dcg": self.use_dcg,
            "channels": self.channels,
            "hidden": self.hidden,
            "layers": self.layers,
            "log_size_clip": self.log_size_clip,
            "voxel_size": self.voxel_size,
        }

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Copy with some fields replaced, re-validated."""
        data = self.model_dump()
        data.update(overrides)
        return load_run_config(**data)


def load_run_config(config_file: Optional[Union[str, Path]] = None, **overrides: Any) -> RunConfig:
    """
    Build a RunConfig from an optional config file plus explicit overrides.

    ``None`` overrides are treated as "not given" so unset CLI flags fall
    through to the file and then to defaults.

    Raises:
        ConfigurationError: on unknown keys or bad values
        FileNotFoundError: config file does not exist
    """
    given = {key: value for key, value in overrides.items() if value is not None}
    if config_file is not None and not Path(config_file).is_file():
        raise FileNotFoundError(f"Config file not found: {config_file}")
    try:
        return RunConfig(_env_file=str(config_file) if config_file else None, **given)
    except ValidationError as e:
        problems = [
            {"field": ".".join(str(part) for part in err["loc"]), "message": err["msg"]}
            for err in e.errors()
        ]
        raise ConfigurationError(f"Invalid run configuration: {problems[0]['field']}: {problems[0]['message']}",
                                 details={"errors": problems})


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


# Global settings instance
settings = get_settings()
