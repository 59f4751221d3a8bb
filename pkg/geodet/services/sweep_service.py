"""
geodet Hyperparameter Sweeps
============================

Train-and-evaluate once per value (and per trial) of one hyperparameter and
tabulate mAP25/mAP50 per value.

Sweepable parameters:
- ``alpha``: geometry weight decay, e.g. 1.0 1.5 2.0 2.5 3.0
- ``beta``: classification loss weight, e.g. 0.3 0.4 0.5 0.6 0.7
- ``distance``: euclidean, manhattan, mahalanobis
- ``modules``: gal, dcg, gal+dcg (or none)

A value that fails validation or training produces a row carrying the error
and the sweep moves on.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from geodet.config.settings import RunConfig
from geodet.core.exceptions import ConfigurationError, GeoDetException
from geodet.integrations.pointcloud_io import write_bytes
from geodet.models.detection_models import EvalReport
from geodet.services.evaluation_service import compute_map
from geodet.services.training_service import TrainingResult, TrainingScene, train_toy

logger = logging.getLogger(__name__)

SWEEP_PARAMS = ("alpha", "beta", "distance", "modules")
MODULE_SETTINGS = {
    "none": {"use_gal": False, "use_dcg": False},
    "gal": {"use_gal": True, "use_dcg": False},
    "dcg": {"use_gal": False, "use_dcg": True},
    "gal+dcg": {"use_gal": True, "use_dcg": True},
}
TABLE_COLUMNS = ["value", "trials", "mAP25", "mAP50", "mean_mAP25", "mean_mAP50", "final_loss", "error"]


class SweepRow(BaseModel):
    value: str
    trials: int = Field(default=1, ge=1)
    best_map25: Optional[float] = None
    best_map50: Optional[float] = None
    mean_map25: Optional[float] = None
    mean_map50: Optional[float] = None
    final_loss: Optional[float] = None
    error: Optional[Dict[str, Any]] = None

    @property
    def ok(self) -> bool:
        return self.error is None


class SweepReport(BaseModel):
    param: str
    base_config: Dict[str, Any]
    rows: List[SweepRow] = Field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        """Table with one row per value, best-of-trials mAP first."""
        records = [{
            "value": row.value,
            "trials": row.trials,
            "mAP25": row.best_map25,
            "mAP50": row.best_map50,
            "mean_mAP25": row.mean_map25,
            "mean_mAP50": row.mean_map50,
            "final_loss": row.final_loss,
            "error": row.error["message"] if row.error else "",
        } for row in self.rows]
        return pd.DataFrame.from_records(records, columns=TABLE_COLUMNS)


def config_for(base: RunConfig, param: str, value: Union[str, float]) -> RunConfig:
    """
    The run configuration for one sweep value.

    Raises:
        ConfigurationError: unknown parameter or invalid value
    """
    if param not in SWEEP_PARAMS:
        raise ConfigurationError(f"cannot sweep '{param}'; choose one of {', '.join(SWEEP_PARAMS)}",
                                 details={"param": param})
    if param in ("alpha", "beta"):
        try:
            number = float(value)
        except (TypeError, ValueError):
            raise ConfigurationError(f"{param} value '{value}' is not a number", details={param: value})
        return base.with_overrides(**{param: number})
    if param == "distance":
        return base.with_overrides(distance_metric=str(value))
    key = str(value).strip().lower()
    if key not in MODULE_SETTINGS:
        raise ConfigurationError(f"unknown module set '{value}'; choose one of {', '.join(MODULE_SETTINGS)}",
                                 details={"modules": value})
    return base.with_overrides(**MODULE_SETTINGS[key])


def evaluate_trained(result: TrainingResult) -> EvalReport:
    """mAP of a trained detector on the scenes it was trained on."""
    detections = [result.detector.detect(result.params, scene) for scene in result.scenes]
    ground_truth = {scene.scene_id: list(scene.annotation.boxes) for scene in result.scenes}
    return compute_map(detections, ground_truth, result.class_names)


def _best(values: List[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return max(present) if present else None


def _mean(values: List[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def run_value(base: RunConfig, param: str, value: Union[str, float], scenes: Sequence[TrainingScene],
              trials: int = 1) -> SweepRow:
    """Train ``trials`` times (seeds seed, seed+1, ...) and summarize."""
    label = str(value)
    try:
        config = config_for(base, param, value)
        scores: List[Tuple[Optional[float], Optional[float]]] = []
        losses = []
        for trial in range(trials):
            trial_config = config.with_overrides(seed=base.seed + trial)
            result = train_toy(scenes, trial_config)
            report = evaluate_trained(result)
            scores.append((report.map25, report.map50))
            losses.append(result.trace.final)
            logger.info(f"{param}={label} trial {trial + 1}/{trials}: mAP25={report.map25} mAP50={report.map50}")
    except GeoDetException as e:
        logger.warning(f"Sweep row {param}={label} failed: {e.message}")
        return SweepRow(value=label, trials=trials, error=e.to_dict())

    return SweepRow(
        value=label,
        trials=trials,
        best_map25=_best([s[0] for s in scores]),
        best_map50=_best([s[1] for s in scores]),
        mean_map25=_mean([s[0] for s in scores]),
        mean_map50=_mean([s[1] for s in scores]),
        final_loss=float(np.mean(losses)),
    )


def cmd_sweep(config: RunConfig, param: str, values: Sequence[Union[str, float]],
              scenes: Sequence[TrainingScene], trials: int = 1) -> SweepReport:
    """
    One row per value; failures are recorded in the row, not raised.

    Raises:
        ConfigurationError: unknown parameter, no values or trials < 1
    """
    if param not in SWEEP_PARAMS:
        raise ConfigurationError(f"cannot sweep '{param}'; choose one of {', '.join(SWEEP_PARAMS)}",
                                 details={"param": param})
    if not values:
        raise ConfigurationError("a sweep needs at least one value")
    if trials < 1:
        raise ConfigurationError(f"trials must be >= 1, got {trials}", details={"trials": trials})

    logger.info(f"Sweeping {param} over {len(values)} values x {trials} trial(s) on {len(scenes)} scenes")
    report = SweepReport(param=param, base_config=config.model_dump())
    for value in values:
        report.rows.append(run_value(config, param, value, scenes, trials))
    failed = sum(1 for row in report.rows if not row.ok)
    if failed:
        logger.warning(f"{failed} of {len(report.rows)} sweep rows failed")
    return report


def write_sweep(report: SweepReport, json_path: Union[str, Path], csv_path: Optional[Union[str, Path]] = None,
                indent: int = 2) -> List[Path]:
    """JSON report plus the CSV table (default: same stem, ``.csv``)."""
    json_path = Path(json_path)
    csv_path = Path(csv_path) if csv_path else json_path.with_suffix(".csv")
    written = [write_bytes(json_path, json.dumps(report.model_dump(), indent=indent).encode("utf-8"))]
    written.append(write_bytes(csv_path, report.to_frame().to_csv(index=False).encode("utf-8")))
    return written
