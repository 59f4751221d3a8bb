import math
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Vec3 = Tuple[float, float, float]


class Box3D(BaseModel):
    """Axis-aligned 3D box; center and size in meters."""

    model_config = ConfigDict(frozen=True)

    center: Vec3 = Field(..., description="Box center (x, y, z)")
    size: Vec3 = Field(..., description="Extent along x, y, z; strictly positive")
    class_id: int = Field(default=0, ge=0, description="Index into the scene class list")

    @field_validator("center")
    @classmethod
    def validate_center(cls, v):
        if not all(math.isfinite(c) for c in v):
            raise ValueError("box center must be finite")
        return v

    @field_validator("size")
    @classmethod
    def validate_size(cls, v):
        if not all(math.isfinite(s) and s > 0 for s in v):
            raise ValueError("box sizes must be finite and strictly positive")
        return v

    @property
    def minimum(self) -> Vec3:
        return tuple(c - s / 2.0 for c, s in zip(self.center, self.size))

    @property
    def maximum(self) -> Vec3:
        return tuple(c + s / 2.0 for c, s in zip(self.center, self.size))

    @property
    def volume(self) -> float:
        return self.size[0] * self.size[1] * self.size[2]

    @classmethod
    def from_bounds(cls, lower: Vec3, upper: Vec3, class_id: int = 0) -> "Box3D":
        """Box spanning [lower, upper] per axis."""
        center = tuple((lo + hi) / 2.0 for lo, hi in zip(lower, upper))
        size = tuple(hi - lo for lo, hi in zip(lower, upper))
        return cls(center=center, size=size, class_id=class_id)


class SceneAnnotation(BaseModel):
    """Ground-truth boxes of one scene plus the class-id space."""

    class_names: List[str] = Field(..., min_length=1, description="Ordered class names; index is the class id")
    boxes: List[Box3D] = Field(default_factory=list, description="Ground-truth boxes, possibly empty")

    @model_validator(mode="after")
    def validate_class_ids(self):
        for index, box in enumerate(self.boxes):
            if box.class_id >= len(self.class_names):
                raise ValueError(f"box {index} has class_id {box.class_id} outside "
                                 f"[0, {len(self.class_names)})")
        return self


class ScoredBox(Box3D):
    """Detected box with a confidence score."""

    score: float = Field(..., ge=0.0, le=1.0, description="Confidence in [0, 1]")


class DetectionResult(BaseModel):
    """Scored, classed boxes for one scene, sorted by descending score."""

    scene_id: str = Field(default="scene")
    detections: List[ScoredBox] = Field(default_factory=list)

    @model_validator(mode="after")
    def validate_order(self):
        scores = [d.score for d in self.detections]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("detections must be sorted by descending score")
        return self

    @classmethod
    def from_unsorted(cls, scene_id: str, detections: List[ScoredBox]) -> "DetectionResult":
        """Sort by descending score; ties keep input order."""
        ordered = sorted(detections, key=lambda d: -d.score)
        return cls(scene_id=scene_id, detections=ordered)

    @property
    def boxes(self) -> List[Box3D]:
        return [Box3D(center=d.center, size=d.size, class_id=d.class_id) for d in self.detections]

    @property
    def scores(self) -> List[float]:
        return [d.score for d in self.detections]


class DetectionDocument(BaseModel):
    """Detections interchange file across scenes."""

    class_names: List[str] = Field(default_factory=list)
    scenes: List[DetectionResult] = Field(default_factory=list)


class SceneBoxes(BaseModel):
    scene_id: str
    boxes: List[Box3D] = Field(default_factory=list)


class GroundTruthDocument(BaseModel):
    """Ground truth for several scenes sharing one class list."""

    class_names: List[str] = Field(..., description="Ordered class names")
    scenes: List[SceneBoxes] = Field(default_factory=list)

    @model_validator(mode="after")
    def validate_class_ids(self):
        for scene in self.scenes:
            for box in scene.boxes:
                if box.class_id >= len(self.class_names):
                    raise ValueError(f"scene {scene.scene_id}: class_id {box.class_id} outside "
                                     f"[0, {len(self.class_names)})")
        return self

    def as_mapping(self) -> Dict[str, List[Box3D]]:
        return {scene.scene_id: list(scene.boxes) for scene in self.scenes}


class ClassAP(BaseModel):
    name: str
    ap25: Optional[float] = Field(None, ge=0.0, le=1.0)
    ap50: Optional[float] = Field(None, ge=0.0, le=1.0)


class ClassCounts(BaseModel):
    num_gt: int = Field(default=0, ge=0)
    num_pred: int = Field(default=0, ge=0)


class EvalReport(BaseModel):
    """
    Per-class AP at IoU 0.25/0.5 and their means.

    Classes without ground truth are reported with ``None`` AP and left out
    of the means; ``map25``/``map50`` are ``None`` when no class has ground truth.
    """

    class_names: List[str] = Field(default_factory=list)
    per_class_ap: Dict[int, ClassAP] = Field(default_factory=dict)
    counts: Dict[int, ClassCounts] = Field(default_factory=dict)
    map25: Optional[float] = Field(None, ge=0.0, le=1.0)
    map50: Optional[float] = Field(None, ge=0.0, le=1.0)
    num_scenes: int = Field(default=0, ge=0)

    @property
    def defined(self) -> bool:
        return self.map25 is not None

    def table_rows(self) -> List[Dict[str, object]]:
        """Rows shaped like a mAP25/mAP50 results table."""
        rows = []
        for class_id, entry in sorted(self.per_class_ap.items()):
            counts = self.counts.get(class_id, ClassCounts())
            rows.append({
                "class_id": class_id,
                "class": entry.name,
                "AP25": entry.ap25,
                "AP50": entry.ap50,
                "num_gt": counts.num_gt,
                "num_pred": counts.num_pred,
            })
        return rows
