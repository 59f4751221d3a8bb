"""Shared fixtures: small clouds, scenes, detector configs and a generated suite."""

import numpy as np
import pytest

from geodet.config.settings import load_run_config
from geodet.core.detection_head import DetectorConfig, GeoDetector
from geodet.models.detection_models import Box3D, SceneAnnotation
from geodet.models.pointcloud_models import PointCloud, SuperpointLabels
from geodet.models.scene_models import SceneSpec
from geodet.services.scene_generator import generate_suite


def random_cloud(rng: np.random.Generator, num_points: int, scale: float = 2.0) -> PointCloud:
    return PointCloud(positions=rng.uniform(-scale, scale, (num_points, 3)),
                      colors=rng.uniform(0.0, 1.0, (num_points, 3)))


def random_labels(rng: np.random.Generator, num_points: int, num_superpoints: int) -> SuperpointLabels:
    """Surjective labels: the first M points seed one superpoint each."""
    ids = np.concatenate([np.arange(num_superpoints), rng.integers(0, num_superpoints, num_points - num_superpoints)])
    return SuperpointLabels(ids=rng.permutation(ids), count=num_superpoints)


def random_annotation(rng: np.random.Generator, num_boxes: int, num_classes: int = 2) -> SceneAnnotation:
    boxes = [
        Box3D(center=tuple(rng.uniform(-1.5, 1.5, 3)), size=tuple(rng.uniform(0.3, 1.2, 3)),
              class_id=int(rng.integers(0, num_classes)))
        for _ in range(num_boxes)
    ]
    return SceneAnnotation(class_names=[f"class_{k}" for k in range(num_classes)], boxes=boxes)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cloud(rng):
    return random_cloud(rng, 40)


@pytest.fixture
def tiny_config():
    return DetectorConfig(channels=4, hidden=6, layers=1, num_classes=2, voxel_size=1.0)


@pytest.fixture
def tiny_detector(tiny_config):
    return GeoDetector(tiny_config)


@pytest.fixture
def tiny_scene(rng, tiny_detector):
    """20 points, 5 superpoints, 2 boxes."""
    cloud = random_cloud(rng, 20)
    labels = random_labels(rng, 20, 5)
    annotation = random_annotation(rng, 2)
    return tiny_detector.prepare_scene(cloud, annotation, labels, scene_id="tiny")


@pytest.fixture
def small_spec():
    return SceneSpec(room_extent=(4.0, 4.0, 2.5), object_count=(2, 3), points_per_object=48,
                     clutter_density=0.5, num_classes=2, seed=11)


@pytest.fixture
def suite_dir(tmp_path, small_spec):
    out = tmp_path / "suite"
    generate_suite(3, small_spec, seed=11, out_dir=out)
    return out


@pytest.fixture
def quick_run_config():
    return load_run_config(channels=8, hidden=16, layers=1, epochs=3, lr=0.003, voxel_size=0.5, seed=5)
