from typing import List, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from geodet.models.detection_models import Vec3


class SceneSpec(BaseModel):
    """Parameters of one synthetic indoor scene; the seed fully determines the output."""

    room_extent: Vec3 = Field(default=(6.0, 6.0, 3.0), description="Room size along x, y, z in meters")
    object_count: Tuple[int, int] = Field(default=(2, 4), description="Inclusive range of objects per scene")
    object_size: Tuple[float, float] = Field(default=(0.5, 1.4), description="Per-axis object size range in meters")
    points_per_object: int = Field(default=96, ge=8)
    clutter_density: float = Field(default=2.0, ge=0.0, description="Clutter points per square meter of floor/wall")
    num_classes: int = Field(default=3, ge=1)
    seed: int = Field(default=7, ge=0)

    @field_validator("room_extent")
    @classmethod
    def validate_room(cls, v):
        if not all(extent > 0 for extent in v):
            raise ValueError("room extents must be positive")
        return v

    @field_validator("object_count")
    @classmethod
    def validate_count(cls, v):
        low, high = v
        if low < 0 or high < low:
            raise ValueError("object_count must satisfy 0 <= min <= max")
        return v

    @field_validator("object_size")
    @classmethod
    def validate_size(cls, v):
        low, high = v
        if low <= 0 or high < low:
            raise ValueError("object_size must satisfy 0 < min <= max")
        return v

    @property
    def class_names(self) -> List[str]:
        return [f"class_{k}" for k in range(self.num_classes)]

    def with_seed(self, seed: int) -> "SceneSpec":
        return self.model_copy(update={"seed": seed})


class SuiteEntry(BaseModel):
    scene_id: str
    seed: int
    ply: str
    annotation: str
    sha256: str
    superpoints: str = Field(default="", description="Optional precomputed superpoint label file")


class SuiteManifest(BaseModel):
    """Index of a generated scene directory."""

    seed: int
    spec: SceneSpec
    class_names: List[str]
    scenes: List[SuiteEntry] = Field(default_factory=list)

    @model_validator(mode="after")
    def validate_unique(self):
        ids = [entry.scene_id for entry in self.scenes]
        if len(ids) != len(set(ids)):
            raise ValueError("scene ids must be unique")
        return self
