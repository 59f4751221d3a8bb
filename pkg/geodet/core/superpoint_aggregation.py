"""
Superpoint generation and feature aggregation.

    G   = w[:, None] * D_f                 recalibration
    F_d = scatter_mean(G,   superpoints)   global geometric feature
    F_l = scatter_max(D_f,  superpoints)   most discriminative local feature
    M   = [F_d | F_l]                      hybrid representation, M x 2C

Superpoints come from a deterministic voxel grid or from precomputed
label files; ids are always dense in [0, M) with no empty cluster.
"""

import logging
from typing import Tuple

import numpy as np

from geodet.core.exceptions import ConfigurationError, ShapeError, SuperpointLabelError
from geodet.models.network_models import GeometryWeights, HybridRepresentation
from geodet.models.pointcloud_models import PointCloud, SuperpointLabels, check_feature_matrix

logger = logging.getLogger(__name__)

DEFAULT_VOXEL_SIZE = 0.25


def cluster_voxel_grid(cloud: PointCloud, voxel_size: float = DEFAULT_VOXEL_SIZE) -> SuperpointLabels:
    """Points sharing a floor(p / voxel_size) cell share a superpoint; ids by first occurrence."""
    if not voxel_size > 0 or not np.isfinite(voxel_size):
        raise ConfigurationError(f"voxel_size must be positive, got {voxel_size}",
                                 details={"voxel_size": voxel_size})
    cells = np.floor(cloud.positions / voxel_size).astype(np.int64)
    _, first_index, inverse = np.unique(cells, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(first_index, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    labels = SuperpointLabels(ids=rank[inverse], count=int(order.size))
    logger.debug(f"Voxel clustering at {voxel_size} m: {len(cloud)} points -> {labels.count} superpoints")
    return labels


def _check_labels(labels: SuperpointLabels, num_rows: int) -> None:
    if len(labels) != num_rows:
        raise ShapeError(f"{len(labels)} labels for {num_rows} feature rows",
                         expected=num_rows, actual=len(labels))
    if labels.ids.min() < 0 or labels.ids.max() >= labels.count:
        raise SuperpointLabelError("superpoint label out of range", details={"count": labels.count})


def superpoint_centroids(cloud: PointCloud, labels: SuperpointLabels) -> np.ndarray:
    """Mean member position per superpoint (decoding anchors)."""
    return scatter_mean(labels, cloud.positions)


def recalibrate(weights: GeometryWeights, gated: np.ndarray) -> np.ndarray:
    """g_i = w_i * D_f[i], one scalar per point broadcast across channels."""
    gated = check_feature_matrix("gated", gated)
    w = np.asarray(weights.weights if isinstance(weights, GeometryWeights) else weights, dtype=np.float64)
    if w.shape != (gated.shape[0],):
        raise ShapeError(f"{w.shape[0] if w.ndim else 0} weights for {gated.shape[0]} points",
                         expected=gated.shape[0], actual=list(w.shape))
    return w[:, None] * gated


def scatter_mean(labels: SuperpointLabels, features: np.ndarray) -> np.ndarray:
    """Per-superpoint mean of member rows, accumulated in ascending point order."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeError("scatter_mean expects a 2-D feature matrix", actual=list(features.shape))
    _check_labels(labels, features.shape[0])
    sums = np.zeros((labels.count, features.shape[1]))
    np.add.at(sums, labels.ids, features)
    return sums / labels.sizes[:, None]


def scatter_max(labels: SuperpointLabels, features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-superpoint, per-channel maximum of member rows.

    Returns:
        (maxima M x C, argmax point indices M x C); ties resolve to the
        lowest point index.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeError("scatter_max expects a 2-D feature matrix", actual=list(features.shape))
    _check_labels(labels, features.shape[0])
    num_points, channels = features.shape
    # sort by (cluster, point index); reduceat over contiguous segments
    order = np.argsort(labels.ids, kind="stable")
    sorted_features = features[order]
    starts = np.concatenate([[0], np.cumsum(labels.sizes)[:-1]])
    maxima = np.maximum.reduceat(sorted_features, starts, axis=0)
    segment = np.repeat(np.arange(labels.count), labels.sizes)
    hits = sorted_features == maxima[segment]
    # first hit per (segment, channel) in sorted order is the lowest point index
    positions = np.where(hits, np.arange(num_points)[:, None], num_points)
    first = np.minimum.reduceat(positions, starts, axis=0)
    argmax_index = order[first]
    return maxima, argmax_index


def fuse(global_feat: np.ndarray, local_feat: np.ndarray,
         centroids: np.ndarray = None) -> HybridRepresentation:
    """Channelwise concatenation [F_d | F_l] -> M x 2C."""
    global_feat = check_feature_matrix("F_d", global_feat)
    local_feat = check_feature_matrix("F_l", local_feat, rows=global_feat.shape[0], cols=global_feat.shape[1])
    if centroids is None:
        centroids = np.zeros((global_feat.shape[0], 3))
    centroids = np.asarray(centroids, dtype=np.float64)
    if centroids.shape != (global_feat.shape[0], 3):
        raise ShapeError("superpoint centroids must be M x 3", expected=[global_feat.shape[0], 3],
                         actual=list(centroids.shape))
    return HybridRepresentation(features=np.concatenate([global_feat, local_feat], axis=1),
                                superpoint_centroids=centroids)


def aggregate_backward(labels: SuperpointLabels, argmax_index: np.ndarray,
                       upstream_grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Route dL/dM back to the points.

    The first C columns belong to the mean path (F_d <- G), the last C to the
    max path (F_l <- D_f).

    Returns:
        (grad_G, grad_Df_from_max), both N x C
    """
    upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
    argmax_index = np.asarray(argmax_index)
    if upstream_grad.ndim != 2 or upstream_grad.shape[1] % 2 or upstream_grad.shape[0] != labels.count:
        raise ShapeError("upstream gradient must be M x 2C", expected=[labels.count, "2C"],
                         actual=list(upstream_grad.shape))
    channels = upstream_grad.shape[1] // 2
    if argmax_index.shape != (labels.count, channels):
        raise ShapeError("argmax index does not match the upstream gradient (stale forward pass?)",
                         expected=[labels.count, channels], actual=list(argmax_index.shape))
    grad_mean, grad_max = upstream_grad[:, :channels], upstream_grad[:, channels:]

    grad_g = (grad_mean / labels.sizes[:, None])[labels.ids]

    grad_df = np.zeros((len(labels), channels))
    columns = np.broadcast_to(np.arange(channels), argmax_index.shape)
    np.add.at(grad_df, (argmax_index, columns), grad_max)
    return grad_g, grad_df
