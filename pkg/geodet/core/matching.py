"""
One-to-one assignment of predictions to ground-truth boxes.

Cost of pairing prediction m with ground truth g:

    cost_class * (-log p_m(class_g)) + cost_box * DIoU(box_m, box_g)

solved optimally with the Hungarian algorithm. Predictions left unmatched
are trained towards the no-object class.
"""

import logging
from typing import List, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from geodet.core.box_ops import boxes_to_arrays, pairwise_diou
from geodet.core.layers import log_softmax
from geodet.models.detection_models import Box3D, SceneAnnotation

logger = logging.getLogger(__name__)

Assignment = List[Tuple[int, int]]


class HungarianMatcher:
    """Optimal bipartite matching on classification + DIoU cost."""

    def __init__(self, cost_class: float = 1.0, cost_box: float = 1.0):
        self.cost_class = cost_class
        self.cost_box = cost_box
        assert cost_class != 0 or cost_box != 0, "all costs cant be 0"

    def cost_matrix(self, pred_centers: np.ndarray, pred_sizes: np.ndarray, logits: np.ndarray,
                    gt_centers: np.ndarray, gt_sizes: np.ndarray, gt_classes: np.ndarray) -> np.ndarray:
        """M x G pairing costs."""
        log_probs = log_softmax(np.asarray(logits, dtype=np.float64), axis=1)
        cost = -self.cost_class * log_probs[:, gt_classes]
        cost = cost + self.cost_box * pairwise_diou(pred_centers, pred_sizes, gt_centers, gt_sizes)
        return cost

    def match_arrays(self, pred_centers: np.ndarray, pred_sizes: np.ndarray, logits: np.ndarray,
                     gt_centers: np.ndarray, gt_sizes: np.ndarray, gt_classes: np.ndarray) -> Assignment:
        if len(gt_classes) == 0 or len(pred_centers) == 0:
            return []
        cost = self.cost_matrix(pred_centers, pred_sizes, logits, gt_centers, gt_sizes, gt_classes)
        rows, cols = linear_sum_assignment(cost)
        return sorted((int(r), int(c)) for r, c in zip(rows, cols))

    def __call__(self, pred_boxes: Sequence[Box3D], logits: np.ndarray, gt: SceneAnnotation) -> Assignment:
        pred_centers, pred_sizes, _ = boxes_to_arrays(pred_boxes)
        gt_centers, gt_sizes, gt_classes = boxes_to_arrays(gt.boxes)
        return self.match_arrays(pred_centers, pred_sizes, logits, gt_centers, gt_sizes, gt_classes)


def assignment_cost(cost: np.ndarray, assignment: Assignment) -> float:
    """Total cost of an assignment under a cost matrix."""
    return float(sum(cost[r, c] for r, c in assignment))


def match(pred_boxes: Sequence[Box3D], logits: np.ndarray, gt: SceneAnnotation) -> Assignment:
    """(pred_index, gt_index) pairs with unit class and box cost weights."""
    return HungarianMatcher()(pred_boxes, logits, gt)
