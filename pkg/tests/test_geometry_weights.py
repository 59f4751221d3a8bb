"""
Geometry Weighting Tests
========================

Centroid, distance metrics, min-max normalization and exponential decay,
plus invariance of the weights under rigid motion and uniform scaling.
"""

import numpy as np
import pytest

from geodet.core.exceptions import ConfigurationError, PointCloudValidationError
from geodet.core.geometry_weights import (
    compute_centroid, compute_distances, compute_geometry_weights, geometry_weights, minmax_normalize,
    uniform_weights
)
from geodet.models.pointcloud_models import PointCloud


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


class TestCentroidAndDistances:
    """Test centroid and distance computation."""

    def test_centroid_is_mean(self):
        cloud = PointCloud.from_positions([[0, 0, 0], [2, 0, 0], [1, 3, 0]])
        np.testing.assert_allclose(compute_centroid(cloud), [1.0, 1.0, 0.0])

    def test_euclidean_distances(self):
        cloud = PointCloud.from_positions([[0, 0, 0], [3, 4, 0]])
        distances = compute_distances(cloud, np.zeros(3))
        np.testing.assert_allclose(distances, [0.0, 5.0])

    def test_manhattan_distances(self):
        cloud = PointCloud.from_positions([[1, -2, 3]])
        assert compute_distances(cloud, np.zeros(3), "manhattan")[0] == pytest.approx(6.0)

    def test_mahalanobis_whitens_scale(self, rng):
        """Test mahalanobis distances ignore per-axis stretching."""
        positions = rng.normal(size=(50, 3))
        stretched = positions * np.array([10.0, 1.0, 0.1])
        base = compute_distances(positions, positions.mean(axis=0), "mahalanobis")
        other = compute_distances(stretched, stretched.mean(axis=0), "mahalanobis")
        np.testing.assert_allclose(base, other, atol=1e-9)

    def test_unknown_metric(self):
        with pytest.raises(ConfigurationError):
            compute_distances(np.zeros((2, 3)), np.zeros(3), "chebyshev")

    def test_empty_positions_rejected(self):
        with pytest.raises(PointCloudValidationError):
            compute_centroid(np.zeros((0, 3)))


class TestWeights:
    """Test normalization and decay."""

    def test_constant_distances_normalize_to_zero(self):
        np.testing.assert_array_equal(minmax_normalize(np.full(4, 2.5)), np.zeros(4))

    def test_single_point_gets_weight_one(self):
        result = compute_geometry_weights(PointCloud.from_positions([[1.0, 2.0, 3.0]]))
        np.testing.assert_array_equal(result.weights, [1.0])

    def test_symmetric_pair_weights(self):
        """Test two points equidistant from the centroid both get weight 1."""
        result = compute_geometry_weights(PointCloud.from_positions([[-1, 0, 0], [1, 0, 0]]))
        np.testing.assert_array_equal(result.weights, [1.0, 1.0])

    def test_weight_range(self, small_cloud):
        alpha = 2.0
        result = compute_geometry_weights(small_cloud, alpha)
        assert result.weights.max() == pytest.approx(1.0)
        assert result.weights.min() == pytest.approx(np.exp(-alpha))
        assert (result.weights >= np.exp(-alpha) - 1e-15).all()

    def test_known_values(self):
        """Test distances 0, 1, 2 from the centroid give weights 1, e^-1, e^-2 for alpha 2."""
        cloud = PointCloud.from_positions([[0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 2, 0], [0, -2, 0]])
        result = compute_geometry_weights(cloud, alpha=2.0)
        np.testing.assert_allclose(result.weights, np.exp([0.0, -1.0, -1.0, -2.0, -2.0]), atol=1e-15)

    @pytest.mark.parametrize("alpha", [0.0, -1.0, float("inf")])
    def test_invalid_alpha(self, alpha):
        with pytest.raises(ConfigurationError):
            geometry_weights(np.zeros(3), alpha)

    def test_uniform_weights(self):
        result = uniform_weights(5)
        np.testing.assert_array_equal(result.weights, np.ones(5))
        assert len(result) == 5


class TestInvariance:
    """Test weights under rigid motion and uniform scaling."""

    @pytest.mark.parametrize("metric", ["euclidean", "mahalanobis"])
    def test_rigid_motion_and_scale(self, rng, metric):
        for _ in range(200):
            n = int(rng.integers(8, 60))
            positions = rng.normal(0, 2, (n, 3))
            rotation = random_rotation(rng)
            scale = rng.uniform(0.1, 10.0)
            moved = scale * positions @ rotation.T + rng.normal(0, 5, 3)
            base = compute_geometry_weights(positions, 2.0, metric).weights
            other = compute_geometry_weights(moved, 2.0, metric).weights
            np.testing.assert_allclose(base, other, atol=1e-9)

    def test_manhattan_translation_and_scale(self, rng):
        for _ in range(200):
            positions = rng.normal(0, 2, (int(rng.integers(8, 40)), 3))
            moved = rng.uniform(0.1, 10.0) * positions + rng.normal(0, 5, 3)
            np.testing.assert_allclose(compute_geometry_weights(positions, 1.5, "manhattan").weights,
                                       compute_geometry_weights(moved, 1.5, "manhattan").weights, atol=1e-9)
