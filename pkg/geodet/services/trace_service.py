"""
Pipeline trace: shape and summary statistics of every intermediate tensor
for one scene, in dataflow order.
"""

import logging
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field

from geodet.config.settings import RunConfig
from geodet.core.detection_head import TRACE_STAGES, DetectorConfig, GeoDetector
from geodet.core.exceptions import GeoDetException
from geodet.services.checkpoint_service import Checkpoint
from geodet.services.scene_generator import SuiteScene

logger = logging.getLogger(__name__)


class StageSummary(BaseModel):
    name: str
    shape: List[int]
    min: float
    max: float
    mean: float
    std: float

    @classmethod
    def of(cls, name: str, array: np.ndarray) -> "StageSummary":
        array = np.asarray(array, dtype=np.float64)
        return cls(name=name, shape=list(array.shape), min=float(array.min()), max=float(array.max()),
                   mean=float(array.mean()), std=float(array.std()))


class PipelineTrace(BaseModel):
    scene_id: str
    num_points: int
    num_superpoints: int
    channels: int
    config: Dict[str, object] = Field(default_factory=dict)
    stages: List[StageSummary] = Field(default_factory=list)

    @property
    def stage_names(self) -> List[str]:
        return [stage.name for stage in self.stages]


def cmd_pipeline_trace(scene: SuiteScene, config: RunConfig,
                       checkpoint: Optional[Checkpoint] = None) -> PipelineTrace:
    """
    Trace the forward pass of one scene.

    Without a checkpoint the parameters come from ``config.seed``.

    Raises:
        ShapeError / NonFiniteError: with ``details["stage"]`` naming the failing stage
    """
    if checkpoint is not None:
        detector_config = checkpoint.config
        params = checkpoint.params
    else:
        detector_config = DetectorConfig.from_run_config(config, len(scene.annotation.class_names))
        params = None
    detector = GeoDetector(detector_config)
    if params is None:
        params = detector.init_params(config.seed)

    inputs = detector.prepare_scene(scene.cloud, scene.annotation, scene.labels, scene.scene_id)
    try:
        forward = detector.forward(params, inputs)
    except GeoDetException as e:
        logger.error(f"Trace of {scene.scene_id} failed at stage {e.details.get('stage', '?')}: {e.message}")
        raise

    stages = [StageSummary.of(name, forward.stages[name]) for name in TRACE_STAGES]
    trace = PipelineTrace(
        scene_id=scene.scene_id,
        num_points=len(scene.cloud),
        num_superpoints=inputs.labels.count,
        channels=detector_config.channels,
        config=detector_config.to_dict(),
        stages=stages,
    )
    logger.info(f"Traced {len(stages)} stages of {scene.scene_id} "
                f"(N={trace.num_points}, M={trace.num_superpoints}, C={trace.channels})")
    return trace
