"""
geodet Evaluation Service
=========================

Average precision of scored 3D boxes against ground truth at IoU 0.25 and
0.5, and the per-class / mean report built from it.

Protocol:
- detections of one class are ranked by descending score; ties keep input
  order, with scenes taken in scene-id order so the result does not depend
  on how scenes were iterated
- each detection looks at the highest-IoU still unmatched ground-truth box
  of its class in its scene; if that IoU >= threshold the detection is a
  true positive and claims the box, otherwise it is a false positive and
  the box stays available for lower-ranked detections
- AP is the area under the precision envelope (all-point interpolation)
- classes without ground truth have no AP and are left out of the means
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from geodet.config.settings import settings
from geodet.core.box_ops import boxes_to_arrays, iou_arrays
from geodet.core.exceptions import ConfigurationError
from geodet.models.detection_models import Box3D, ClassAP, ClassCounts, DetectionResult, EvalReport

logger = logging.getLogger(__name__)

IOU_THRESHOLDS = (0.25, 0.5)

GroundTruth = Mapping[str, Sequence[Box3D]]


def interpolated_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    """Area under the monotone precision envelope of a PR curve."""
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    changed = np.nonzero(mrec[1:] != mrec[:-1])[0] + 1
    return float(np.sum((mrec[changed] - mrec[changed - 1]) * mpre[changed]))


def _ranked_detections(detections: Sequence[DetectionResult], class_id: int) -> List[Tuple[str, float, Box3D]]:
    ranked = []
    for result in sorted(detections, key=lambda r: r.scene_id):
        for det in result.detections:
            if det.class_id == class_id:
                ranked.append((result.scene_id, det.score, det))
    # sorted() is stable, so equal scores keep the order built above
    return sorted(ranked, key=lambda item: -item[1])


def match_detections(detections: Sequence[DetectionResult], ground_truth: GroundTruth,
                     class_id: int, iou_threshold: float) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    Greedy one-to-one matching for one class.

    Returns:
        (scores in rank order, true-positive flags, number of ground-truth boxes)
    """
    gt_by_scene: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}
    num_gt = 0
    for scene_id, boxes in ground_truth.items():
        centers, sizes, classes = boxes_to_arrays(boxes)
        keep = classes == class_id
        gt_by_scene[scene_id] = (centers[keep], sizes[keep])
        num_gt += int(keep.sum())

    used = {scene_id: np.zeros(len(arrays[0]), dtype=bool) for scene_id, arrays in gt_by_scene.items()}
    ranked = _ranked_detections(detections, class_id)
    scores = np.array([score for _, score, _ in ranked], dtype=np.float64)
    hits = np.zeros(len(ranked), dtype=bool)
    for rank, (scene_id, _, det) in enumerate(ranked):
        centers, sizes = gt_by_scene.get(scene_id, (np.zeros((0, 3)), np.zeros((0, 3))))
        if len(centers) == 0:
            continue
        ious = iou_arrays(np.array(det.center), np.array(det.size), centers, sizes)
        ious = np.where(used[scene_id], -1.0, ious)
        best = int(np.argmax(ious))
        if ious[best] >= iou_threshold:
            used[scene_id][best] = True
            hits[rank] = True
    return scores, hits, num_gt


def compute_ap(detections: Sequence[DetectionResult], ground_truth: GroundTruth, class_id: int,
               iou_threshold: float) -> Optional[float]:
    """
    AP of one class at one IoU threshold, ``None`` when the class has no ground truth.

    Raises:
        ConfigurationError: threshold outside (0, 1)
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ConfigurationError(f"IoU threshold must lie in (0, 1), got {iou_threshold}",
                                 details={"iou_threshold": iou_threshold})
    _, hits, num_gt = match_detections(detections, ground_truth, class_id, iou_threshold)
    if num_gt == 0:
        return None
    if len(hits) == 0:
        return 0.0
    tp = np.cumsum(hits)
    fp = np.cumsum(~hits)
    recall = tp / num_gt
    precision = tp / (tp + fp)
    return interpolated_ap(recall, precision)


def _mean(values: List[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def compute_map(detections: Sequence[DetectionResult], ground_truth: GroundTruth,
                class_names: Sequence[str], workers: Optional[int] = None) -> EvalReport:
    """
    Per-class AP at IoU 0.25 and 0.5 plus their means over classes with ground truth.

    Classes are evaluated on ``workers`` threads; results are merged by class id.
    """
    workers = workers or settings.workers
    unknown = sorted({r.scene_id for r in detections} - set(ground_truth))
    if unknown:
        logger.warning(f"{len(unknown)} detection scene(s) have no ground truth; their boxes count as false positives")

    def evaluate_class(class_id: int) -> Tuple[int, ClassAP, ClassCounts]:
        ap25, ap50 = (compute_ap(detections, ground_truth, class_id, t) for t in IOU_THRESHOLDS)
        num_gt = sum(1 for boxes in ground_truth.values() for b in boxes if b.class_id == class_id)
        num_pred = sum(1 for r in detections for d in r.detections if d.class_id == class_id)
        return class_id, ClassAP(name=class_names[class_id], ap25=ap25, ap50=ap50), \
            ClassCounts(num_gt=num_gt, num_pred=num_pred)

    class_ids = list(range(len(class_names)))
    if workers > 1 and len(class_ids) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(evaluate_class, class_ids))
    else:
        rows = [evaluate_class(class_id) for class_id in class_ids]

    per_class = {class_id: entry for class_id, entry, _ in rows}
    counts = {class_id: count for class_id, _, count in rows}
    report = EvalReport(
        class_names=list(class_names),
        per_class_ap=per_class,
        counts=counts,
        map25=_mean([entry.ap25 for entry in per_class.values()]),
        map50=_mean([entry.ap50 for entry in per_class.values()]),
        num_scenes=len(ground_truth),
    )
    if report.defined:
        logger.info(f"Evaluated {report.num_scenes} scenes: mAP25={report.map25:.4f} mAP50={report.map50:.4f}")
    else:
        logger.warning("No ground-truth boxes in any class; mAP is undefined")
    return report
