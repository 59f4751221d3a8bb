"""
geodet Synthetic Scenes
=======================

Deterministic labeled indoor scenes for end-to-end runs without a dataset.

A scene is a room with K axis-aligned objects standing on the floor
(z_min = 0) with non-overlapping footprints. Each object contributes
``points_per_object`` surface samples, its 8 corners first, so its
annotation box is exactly the min/max of its own points. Floor and wall
clutter is added at ``clutter_density`` points per square meter.

Each scene also carries a surface segmentation: one segment per object and
coarse grid cells over the clutter. Suites store it as
``NAME.superpoints.txt`` so training and detection use it in place of
voxel clustering, the way real indoor datasets ship mesh oversegments.

Positions are rounded to float32 and colors to k/255 at generation time,
so writing a scene to PLY and reading it back reproduces it exactly.
All randomness comes from SplitMix64 seeded by ``spec.seed``.
"""

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError as PydanticValidationError

from geodet.core.exceptions import SceneSpecError, ValidationError
from geodet.core.superpoint_aggregation import cluster_voxel_grid
from geodet.integrations.pointcloud_io import (
    dump_annotations, read_annotation, read_point_cloud, read_superpoints, write_bytes, write_ply, write_superpoints
)
from geodet.models.detection_models import Box3D, SceneAnnotation
from geodet.models.pointcloud_models import PointCloud, SuperpointLabels
from geodet.models.scene_models import SceneSpec, SuiteEntry, SuiteManifest
from geodet.utils.rng import SplitMix64, derive_seed

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MAX_PLACEMENT_TRIES = 200
CLASS_PALETTE = (
    (0.80, 0.25, 0.20),
    (0.20, 0.55, 0.85),
    (0.30, 0.75, 0.30),
    (0.90, 0.70, 0.15),
    (0.60, 0.35, 0.75),
    (0.15, 0.70, 0.70),
)
CLUTTER_COLOR = (0.55, 0.52, 0.50)
COLOR_JITTER = 0.05
CLUTTER_SEGMENT_SIZE = 0.5


@dataclass
class SuiteScene:
    """One scene loaded from a suite directory."""

    entry: SuiteEntry
    cloud: PointCloud
    annotation: SceneAnnotation
    labels: Optional[SuperpointLabels] = None

    @property
    def scene_id(self) -> str:
        return self.entry.scene_id


def _quantize_positions(points: np.ndarray) -> np.ndarray:
    return points.astype(np.float32).astype(np.float64)


def _quantize_colors(colors: np.ndarray) -> np.ndarray:
    return np.round(np.clip(colors, 0.0, 1.0) * 255.0) / 255.0


def check_feasible(spec: SceneSpec) -> None:
    """
    Raises:
        SceneSpecError: objects cannot fit inside the room
    """
    room = np.array(spec.room_extent)
    largest = spec.object_size[1]
    if (largest > room).any():
        raise SceneSpecError(f"object size up to {largest} m does not fit room {tuple(room)}",
                             details={"object_size": list(spec.object_size), "room_extent": list(room)})
    if spec.object_count[1] * largest ** 2 > room[0] * room[1]:
        raise SceneSpecError(f"{spec.object_count[1]} objects of up to {largest} m cannot share a "
                             f"{room[0]} x {room[1]} m floor",
                             details={"object_count": list(spec.object_count)})


def _surface_points(rng: SplitMix64, lower: np.ndarray, upper: np.ndarray, count: int) -> np.ndarray:
    """8 corners followed by area-weighted uniform samples on the box faces."""
    corners = np.array([[upper[i] if (c >> i) & 1 else lower[i] for i in range(3)] for c in range(8)])
    size = upper - lower
    # faces: (fixed axis, side); area is the product of the other two extents
    faces = [(axis, side) for axis in range(3) for side in (0, 1)]
    areas = [np.prod(np.delete(size, axis)) for axis, _ in faces]
    remaining = count - len(corners)
    picks = rng.choice(areas, remaining)
    samples = lower + rng.random((remaining, 3)) * size
    for row, face in enumerate(picks):
        axis, side = faces[int(face)]
        samples[row, axis] = upper[axis] if side else lower[axis]
    return np.concatenate([corners, samples], axis=0)


def _place_footprint(rng: SplitMix64, room: np.ndarray, size: np.ndarray,
                     placed: List[Tuple[np.ndarray, np.ndarray]], index: int) -> np.ndarray:
    """Lower corner of a floor footprint not overlapping any placed object."""
    for _ in range(MAX_PLACEMENT_TRIES):
        lower = np.zeros(3)
        lower[:2] = rng.random(2) * (room[:2] - size[:2])
        upper = lower + size
        clear = all(
            (upper[:2] <= other_lower[:2]).any() or (lower[:2] >= other_upper[:2]).any()
            for other_lower, other_upper in placed
        )
        if clear:
            return lower
    raise SceneSpecError(f"could not place object {index} without overlap after {MAX_PLACEMENT_TRIES} tries",
                         details={"object": index, "seed": None})


def generate_scene(spec: SceneSpec) -> Tuple[PointCloud, SceneAnnotation]:
    """
    Sample one labeled scene; the output is a pure function of ``spec``.

    Raises:
        SceneSpecError: infeasible spec
    """
    cloud, annotation, _ = generate_segmented_scene(spec)
    return cloud, annotation


def generate_segmented_scene(spec: SceneSpec) -> Tuple[PointCloud, SceneAnnotation, SuperpointLabels]:
    """
    Sample one scene together with its surface segmentation.

    Every object is one segment; clutter is split into
    ``CLUTTER_SEGMENT_SIZE`` grid cells. Segment ids follow point order,
    so object k gets id k.

    Raises:
        SceneSpecError: infeasible spec
    """
    check_feasible(spec)
    rng = SplitMix64(derive_seed(spec.seed, "scene"))
    room = np.array(spec.room_extent, dtype=np.float64)
    count = rng.integer(spec.object_count[0], spec.object_count[1])

    positions: List[np.ndarray] = []
    colors: List[np.ndarray] = []
    boxes: List[Box3D] = []
    placed: List[Tuple[np.ndarray, np.ndarray]] = []
    for index in range(count):
        class_id = rng.integer(0, spec.num_classes - 1)
        size = rng.uniform(spec.object_size[0], spec.object_size[1], 3)
        try:
            lower = _place_footprint(rng, room, size, placed, index)
        except SceneSpecError as e:
            e.details["seed"] = spec.seed
            raise
        upper = lower + size
        placed.append((lower, upper))

        points = _quantize_positions(_surface_points(rng, lower, upper, spec.points_per_object))
        base = np.array(CLASS_PALETTE[class_id % len(CLASS_PALETTE)])
        tint = _quantize_colors(base + rng.uniform(-COLOR_JITTER, COLOR_JITTER, (len(points), 3)))
        positions.append(points)
        colors.append(tint)
        boxes.append(Box3D.from_bounds(tuple(points.min(axis=0)), tuple(points.max(axis=0)), class_id=class_id))

    clutter = _clutter_points(rng, room, spec.clutter_density)
    if len(clutter):
        positions.append(clutter)
        colors.append(_quantize_colors(np.array(CLUTTER_COLOR)
                                       + rng.uniform(-COLOR_JITTER, COLOR_JITTER, (len(clutter), 3))))
    if not positions:
        # empty room without clutter still needs one point
        positions.append(np.zeros((1, 3)))
        colors.append(_quantize_colors(np.array([CLUTTER_COLOR])))

    cloud = PointCloud(positions=np.concatenate(positions), colors=np.concatenate(colors))
    annotation = SceneAnnotation(class_names=spec.class_names, boxes=boxes)
    segments = _segment(cloud, count, spec.points_per_object)
    logger.debug(f"Generated scene seed={spec.seed}: {count} objects, {len(cloud)} points, "
                 f"{segments.count} segments")
    return cloud, annotation, segments


def _segment(cloud: PointCloud, count: int, points_per_object: int) -> SuperpointLabels:
    num_object_points = count * points_per_object
    ids = np.zeros(len(cloud), dtype=np.int64)
    ids[:num_object_points] = np.repeat(np.arange(count), points_per_object)
    if num_object_points == len(cloud):
        return SuperpointLabels(ids=ids, count=count)
    rest = PointCloud.from_positions(cloud.positions[num_object_points:])
    cells = cluster_voxel_grid(rest, CLUTTER_SEGMENT_SIZE)
    ids[num_object_points:] = cells.ids + count
    return SuperpointLabels(ids=ids, count=count + cells.count)


def _clutter_points(rng: SplitMix64, room: np.ndarray, density: float) -> np.ndarray:
    """Uniform points on the floor and the four walls."""
    x, y, z = room
    floor_count = int(round(density * x * y))
    floor = np.zeros((floor_count, 3))
    floor[:, :2] = rng.random((floor_count, 2)) * room[:2]

    walls = []
    for axis, side in ((0, 0.0), (0, x), (1, 0.0), (1, y)):
        along = 1 - axis
        wall_count = int(round(density * room[along] * z))
        points = rng.random((wall_count, 3)) * room
        points[:, axis] = side
        walls.append(points)
    return _quantize_positions(np.concatenate([floor] + walls, axis=0))


# ===== SUITES =====

def scene_name(index: int) -> str:
    return f"scene_{index:03d}"


def generate_suite(n_scenes: int, spec: SceneSpec, seed: int, out_dir: Union[str, Path],
                   segments: bool = True) -> SuiteManifest:
    """
    Write ``n_scenes`` PLY/JSON pairs plus ``manifest.json``; scene i uses seed + i.

    With ``segments`` each scene also gets its ``NAME.superpoints.txt``.

    Raises:
        SceneSpecError: infeasible spec
        OSError: output directory not writable
    """
    if n_scenes < 1:
        raise SceneSpecError("a suite needs at least one scene", details={"n_scenes": n_scenes})
    check_feasible(spec)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base_spec = spec.with_seed(seed)

    entries = []
    for index in range(n_scenes):
        name = scene_name(index)
        cloud, annotation, labels = generate_segmented_scene(spec.with_seed(seed + index))
        ply_bytes = write_ply(cloud)
        json_bytes = dump_annotations(annotation)
        write_bytes(out_dir / f"{name}.ply", ply_bytes)
        write_bytes(out_dir / f"{name}.json", json_bytes)
        label_file = ""
        if segments:
            label_file = f"{name}.superpoints.txt"
            write_bytes(out_dir / label_file, write_superpoints(labels))
        entries.append(SuiteEntry(
            scene_id=name,
            seed=seed + index,
            ply=f"{name}.ply",
            annotation=f"{name}.json",
            sha256=hashlib.sha256(ply_bytes + json_bytes).hexdigest(),
            superpoints=label_file,
        ))

    manifest = SuiteManifest(seed=seed, spec=base_spec, class_names=spec.class_names, scenes=entries)
    write_bytes(out_dir / MANIFEST_NAME, manifest.model_dump_json(indent=2).encode("utf-8"))
    logger.info(f"Generated {n_scenes} scenes in {out_dir}")
    return manifest


def read_manifest(suite_dir: Union[str, Path]) -> SuiteManifest:
    path = Path(suite_dir) / MANIFEST_NAME
    data = path.read_bytes()
    try:
        return SuiteManifest.model_validate_json(data)
    except PydanticValidationError as e:
        raise ValidationError(f"invalid suite manifest {path}: {e.errors()[0]['msg']}", details={"path": str(path)})


def load_suite(suite_dir: Union[str, Path]) -> Tuple[SuiteManifest, List[SuiteScene]]:
    """
    Read every scene listed in a suite manifest.

    A scene ``NAME`` with a ``NAME.superpoints.txt`` file beside it gets
    those labels instead of voxel clustering.
    """
    suite_dir = Path(suite_dir)
    manifest = read_manifest(suite_dir)
    scenes = []
    for entry in manifest.scenes:
        cloud = read_point_cloud(suite_dir / entry.ply)
        annotation = read_annotation(suite_dir / entry.annotation)
        label_file = suite_dir / (entry.superpoints or f"{entry.scene_id}.superpoints.txt")
        labels = read_superpoints(label_file, len(cloud)) if label_file.is_file() else None
        scenes.append(SuiteScene(entry=entry, cloud=cloud, annotation=annotation, labels=labels))
    logger.info(f"Loaded {len(scenes)} scenes from {suite_dir}")
    return manifest, scenes
