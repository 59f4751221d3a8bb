"""
Axis-aligned 3D box geometry: IoU, DIoU loss and its gradient.

DIoU(p, g) = 1 - IoU(p, g) + |c_p - c_g|^2 / diag^2

where diag is the diagonal of the smallest axis-aligned box enclosing both.
All functions broadcast over leading dimensions of (..., 3) center/size arrays.
"""

from typing import Iterable, Tuple

import numpy as np

from geodet.models.detection_models import Box3D


def boxes_to_arrays(boxes: Iterable[Box3D]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(centers K x 3, sizes K x 3, class ids K)."""
    boxes = list(boxes)
    if not boxes:
        return np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    centers = np.array([b.center for b in boxes], dtype=np.float64)
    sizes = np.array([b.size for b in boxes], dtype=np.float64)
    classes = np.array([b.class_id for b in boxes], dtype=np.int64)
    return centers, sizes, classes


def _overlap(pc, ps, gc, gs):
    pl, pu = pc - ps / 2.0, pc + ps / 2.0
    gl, gu = gc - gs / 2.0, gc + gs / 2.0
    extent = np.minimum(pu, gu) - np.maximum(pl, gl)
    return pl, pu, gl, gu, extent


def iou_arrays(pc: np.ndarray, ps: np.ndarray, gc: np.ndarray, gs: np.ndarray) -> np.ndarray:
    """IoU of broadcast box arrays."""
    _, _, _, _, extent = _overlap(pc, ps, gc, gs)
    inter = np.prod(np.maximum(extent, 0.0), axis=-1)
    union = np.prod(ps, axis=-1) + np.prod(gs, axis=-1) - inter
    return inter / union


def diou_arrays(pc: np.ndarray, ps: np.ndarray, gc: np.ndarray, gs: np.ndarray) -> np.ndarray:
    """DIoU loss of broadcast box arrays."""
    pl, pu, gl, gu, _ = _overlap(pc, ps, gc, gs)
    iou = iou_arrays(pc, ps, gc, gs)
    rho2 = np.sum((pc - gc) ** 2, axis=-1)
    enclosing = np.maximum(pu, gu) - np.minimum(pl, gl)
    c2 = np.sum(enclosing ** 2, axis=-1)
    penalty = np.divide(rho2, c2, out=np.zeros_like(rho2), where=c2 > 0)
    return 1.0 - iou + penalty


def pairwise_diou(pred_centers: np.ndarray, pred_sizes: np.ndarray,
                  gt_centers: np.ndarray, gt_sizes: np.ndarray) -> np.ndarray:
    """M x G DIoU loss matrix."""
    return diou_arrays(pred_centers[:, None, :], pred_sizes[:, None, :],
                       gt_centers[None, :, :], gt_sizes[None, :, :])


def pairwise_iou(pred_centers: np.ndarray, pred_sizes: np.ndarray,
                 gt_centers: np.ndarray, gt_sizes: np.ndarray) -> np.ndarray:
    """M x G IoU matrix."""
    return iou_arrays(pred_centers[:, None, :], pred_sizes[:, None, :],
                      gt_centers[None, :, :], gt_sizes[None, :, :])


def _others_product(values: np.ndarray) -> np.ndarray:
    """For each axis, the product of the other two axes."""
    x, y, z = values[..., 0], values[..., 1], values[..., 2]
    return np.stack([y * z, x * z, x * y], axis=-1)


def diou_with_grad(pc: np.ndarray, ps: np.ndarray, gc: np.ndarray,
                   gs: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    DIoU loss of K matched pairs with gradients w.r.t. predicted center and size.

    Returns:
        (loss K, grad_center K x 3, grad_size K x 3). At exact ties between
        a predicted and a ground-truth face the subgradient goes to the
        prediction.
    """
    pl, pu, gl, gu, extent = _overlap(pc, ps, gc, gs)
    overlap = np.maximum(extent, 0.0)
    inter = np.prod(overlap, axis=-1)
    vol_p = np.prod(ps, axis=-1)
    union = vol_p + np.prod(gs, axis=-1) - inter
    iou = inter / union

    offset = pc - gc
    rho2 = np.sum(offset ** 2, axis=-1)
    enclosing = np.maximum(pu, gu) - np.minimum(pl, gl)
    c2 = np.sum(enclosing ** 2, axis=-1)
    has_c = c2 > 0
    safe_c2 = np.where(has_c, c2, 1.0)
    penalty = np.where(has_c, rho2 / safe_c2, 0.0)
    loss = 1.0 - iou + penalty

    # IoU term
    d_inter = -(union + inter) / union ** 2
    d_volp = inter / union ** 2
    d_overlap = d_inter[:, None] * _others_product(overlap) * (extent > 0)
    d_upper = d_overlap * (pu <= gu)
    d_lower = -d_overlap * (pl >= gl)
    d_size = d_volp[:, None] * _others_product(ps)

    # distance penalty
    d_center = np.where(has_c[:, None], 2.0 * offset / safe_c2[:, None], 0.0)
    d_enclosing = np.where(has_c[:, None], -2.0 * rho2[:, None] * enclosing / safe_c2[:, None] ** 2, 0.0)
    d_upper = d_upper + d_enclosing * (pu >= gu)
    d_lower = d_lower - d_enclosing * (pl <= gl)

    grad_center = d_center + d_upper + d_lower
    grad_size = d_size + 0.5 * (d_upper - d_lower)
    return loss, grad_center, grad_size


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Intersection over union of two axis-aligned boxes, in [0, 1]."""
    return float(iou_arrays(np.array(a.center), np.array(a.size), np.array(b.center), np.array(b.size)))


def diou_loss(pred: Box3D, gt: Box3D) -> float:
    """1 - IoU + squared center distance over squared enclosing diagonal."""
    return float(diou_arrays(np.array(pred.center), np.array(pred.size), np.array(gt.center), np.array(gt.size)))
