"""
Geometry-aware point weighting.

Every point gets a scalar weight that decays exponentially with its
min-max normalized distance to the scene centroid:

    g_c = mean(p_i)
    d_i = ||p_i - g_c||
    d~_i = (d_i - min d) / (max d - min d)      (0 when all d_i are equal)
    w_i = exp(-alpha * d~_i)

Points nearest the centroid get weight 1, the farthest get exp(-alpha).
Weights depend on the input cloud only; nothing here is trainable.
"""

import logging
from typing import Union

import numpy as np

from geodet.core.exceptions import ConfigurationError, PointCloudValidationError
from geodet.models.network_models import GeometryWeights
from geodet.models.pointcloud_models import PointCloud

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 2.0
DISTANCE_METRICS = ("euclidean", "manhattan", "mahalanobis")

PointsLike = Union[PointCloud, np.ndarray]


def _positions(cloud: PointsLike) -> np.ndarray:
    positions = cloud.positions if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[1] != 3 or positions.shape[0] < 1:
        raise PointCloudValidationError("centroid requires a non-empty N x 3 position array",
                                        details={"shape": list(positions.shape)})
    return positions.astype(np.float64, copy=False)


def compute_centroid(cloud: PointsLike) -> np.ndarray:
    """Componentwise arithmetic mean of the positions."""
    positions = _positions(cloud)
    if not np.isfinite(positions).all():
        raise PointCloudValidationError("centroid requires finite coordinates")
    return positions.mean(axis=0)


def compute_distances(cloud: PointsLike, centroid: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    """
    Distance of every point to the centroid, in double precision.

    ``euclidean`` is the default; ``manhattan`` sums absolute offsets and
    ``mahalanobis`` whitens offsets by the pseudo-inverse of the position
    covariance.
    """
    offsets = _positions(cloud) - np.asarray(centroid, dtype=np.float64)
    if metric == "euclidean":
        return np.sqrt(np.einsum("ij,ij->i", offsets, offsets))
    if metric == "manhattan":
        return np.abs(offsets).sum(axis=1)
    if metric == "mahalanobis":
        covariance = offsets.T @ offsets / offsets.shape[0]
        precision = np.linalg.pinv(covariance, hermitian=True)
        squared = np.einsum("ij,jk,ik->i", offsets, precision, offsets)
        return np.sqrt(np.maximum(squared, 0.0))
    raise ConfigurationError(f"Unknown distance metric: {metric}",
                             details={"metric": metric, "allowed": list(DISTANCE_METRICS)})


def minmax_normalize(values: np.ndarray) -> np.ndarray:
    """Affine map onto [0, 1]; constant inputs map to all zeros."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 1:
        raise PointCloudValidationError("cannot normalize an empty sequence")
    low, high = values.min(), values.max()
    span = high - low
    if span <= 0.0:
        return np.zeros_like(values)
    return np.clip((values - low) / span, 0.0, 1.0)


def geometry_weights(normalized: np.ndarray, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """w_i = exp(-alpha * d~_i)."""
    if not alpha > 0 or not np.isfinite(alpha):
        raise ConfigurationError(f"alpha must be a positive finite number, got {alpha}",
                                 details={"alpha": alpha})
    return np.exp(-alpha * np.asarray(normalized, dtype=np.float64))


def compute_geometry_weights(cloud: PointsLike, alpha: float = DEFAULT_ALPHA,
                             metric: str = "euclidean") -> GeometryWeights:
    """Run centroid, distances, normalization and decay in one pass."""
    centroid = compute_centroid(cloud)
    distances = compute_distances(cloud, centroid, metric)
    normalized = minmax_normalize(distances)
    if distances.size > 1 and distances.max() == distances.min():
        logger.warning("All point distances are equal; geometry weights fall back to 1")
    weights = geometry_weights(normalized, alpha)
    return GeometryWeights(centroid=centroid, distances=distances, normalized=normalized,
                           weights=weights, alpha=float(alpha), metric=metric)


def uniform_weights(num_points: int, alpha: float = DEFAULT_ALPHA) -> GeometryWeights:
    """All-ones weights, used when geometry weighting is switched off."""
    zeros = np.zeros(num_points)
    return GeometryWeights(centroid=np.zeros(3), distances=zeros, normalized=zeros.copy(),
                           weights=np.ones(num_points), alpha=float(alpha), metric="none")
