"""Run a trained detector over a suite and collect detections per scene."""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence

from geodet.config.settings import settings
from geodet.core.detection_head import GeoDetector
from geodet.core.exceptions import ValidationError
from geodet.models.detection_models import DetectionDocument, DetectionResult
from geodet.services.checkpoint_service import Checkpoint
from geodet.services.scene_generator import SuiteScene

logger = logging.getLogger(__name__)


class DetectionService:
    """Read-only inference with one checkpoint; scenes may fan out across threads."""

    def __init__(self, checkpoint: Checkpoint, workers: Optional[int] = None):
        self.checkpoint = checkpoint
        self.detector = GeoDetector(checkpoint.config)
        self.workers = workers or settings.workers

    def detect_scene(self, scene: SuiteScene) -> DetectionResult:
        if list(scene.annotation.class_names) != list(self.checkpoint.class_names):
            raise ValidationError(f"scene {scene.scene_id} class list differs from the checkpoint's",
                                  details={"scene": scene.scene_id})
        inputs = self.detector.prepare_scene(scene.cloud, scene.annotation, scene.labels, scene.scene_id)
        result = self.detector.detect(self.checkpoint.params, inputs)
        logger.debug(f"Scene {scene.scene_id}: {len(result.detections)} detections")
        return result

    def detect_all(self, scenes: Sequence[SuiteScene]) -> DetectionDocument:
        """Detections in the order the scenes were given, whatever the thread count."""
        if self.workers > 1 and len(scenes) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                results: List[DetectionResult] = list(pool.map(self.detect_scene, scenes))
        else:
            results = [self.detect_scene(scene) for scene in scenes]
        logger.info(f"Detected {sum(len(r.detections) for r in results)} boxes over {len(results)} scenes")
        return DetectionDocument(class_names=list(self.checkpoint.class_names), scenes=results)
