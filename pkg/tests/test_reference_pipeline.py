"""
Straight-loop reference for the weighting / gating / aggregation chain.

Each stage is recomputed with plain Python loops in double precision and
compared against the vectorized modules on random instances.
"""

import math

import numpy as np

from geodet.core.channel_gating import gate_features
from geodet.core.detection_head import backbone_forward
from geodet.core.geometry_weights import compute_geometry_weights
from geodet.core.superpoint_aggregation import fuse, recalibrate, scatter_max, scatter_mean
from geodet.models.network_models import GatingParams
from tests.conftest import random_cloud, random_labels


def reference_chain(positions, features, raw_gate, ids, num_superpoints, alpha):
    n, c = len(features), len(features[0])
    centroid = [sum(positions[i][k] for i in range(n)) / n for k in range(3)]
    distances = [math.sqrt(sum((positions[i][k] - centroid[k]) ** 2 for k in range(3))) for i in range(n)]
    low, high = min(distances), max(distances)
    normalized = [0.0 if high == low else (d - low) / (high - low) for d in distances]
    weights = [math.exp(-alpha * d) for d in normalized]

    gate = [1.0 / (1.0 + math.exp(-r)) for r in raw_gate]
    gated = [[gate[j] * features[i][j] for j in range(c)] for i in range(n)]
    recalibrated = [[weights[i] * gated[i][j] for j in range(c)] for i in range(n)]

    fused = []
    for m in range(num_superpoints):
        members = [i for i in range(n) if ids[i] == m]
        mean = [sum(recalibrated[i][j] for i in members) / len(members) for j in range(c)]
        peak = [max(gated[i][j] for i in members) for j in range(c)]
        fused.append(mean + peak)
    return np.array(weights), np.array(gated), np.array(fused)


class TestReferencePipeline:
    """Test the vectorized chain against explicit loops."""

    def test_random_instances(self, rng):
        for _ in range(100):
            n = int(rng.integers(2, 101))
            c = int(rng.integers(1, 17))
            m = int(rng.integers(1, min(n, 10) + 1))
            alpha = float(rng.uniform(0.5, 4.0))
            cloud = random_cloud(rng, n)
            labels = random_labels(rng, n, m)
            features = rng.normal(size=(n, c))
            params = GatingParams(raw_weights=rng.normal(size=c))

            geometry = compute_geometry_weights(cloud, alpha)
            gated = gate_features(params, features)
            recalibrated = recalibrate(geometry, gated)
            hybrid = fuse(scatter_mean(labels, recalibrated), scatter_max(labels, gated)[0])

            weights, ref_gated, ref_fused = reference_chain(
                cloud.positions.tolist(), features.tolist(), params.raw_weights.tolist(),
                labels.ids.tolist(), m, alpha)
            np.testing.assert_allclose(geometry.weights, weights, rtol=0, atol=1e-12)
            np.testing.assert_allclose(gated, ref_gated, rtol=0, atol=1e-12)
            np.testing.assert_allclose(hybrid.features, ref_fused, rtol=0, atol=1e-12)

    def test_detector_stages_agree(self, tiny_detector, tiny_scene):
        """Test the recorded forward stages follow the same chain from the backbone output."""
        params = tiny_detector.init_params(4)
        stages = tiny_detector.forward(params, tiny_scene).stages
        features = backbone_forward(tiny_scene.cloud, params)
        np.testing.assert_array_equal(stages["backbone"], features)
        _, ref_gated, ref_fused = reference_chain(
            tiny_scene.cloud.positions.tolist(), features.tolist(), params["gating.raw"].tolist(),
            tiny_scene.labels.ids.tolist(), tiny_scene.labels.count, tiny_detector.config.alpha)
        np.testing.assert_allclose(stages["gated"], ref_gated, rtol=0, atol=1e-12)
        np.testing.assert_allclose(stages["fused"], ref_fused, rtol=0, atol=1e-12)
