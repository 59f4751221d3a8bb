from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from geodet.core.exceptions import (
    PointCloudValidationError, ShapeError, SuperpointLabelError, ValidationError
)

ArrayLike = Union[np.ndarray, Sequence]

DEFAULT_COLOR = 0.5


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class PointCloud:
    """N points with xyz positions in meters and rgb colors in [0, 1]."""

    positions: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        positions = np.array(self.positions, dtype=np.float64, copy=True)
        if self.colors is None:
            colors = np.full_like(positions, DEFAULT_COLOR)
        else:
            colors = np.array(self.colors, dtype=np.float64, copy=True)

        if positions.ndim != 2 or positions.shape[1] != 3:
            raise PointCloudValidationError("positions must be an N x 3 array",
                                            details={"shape": list(positions.shape)})
        if colors.shape != positions.shape:
            raise PointCloudValidationError("positions and colors must have identical length",
                                            details={"positions": list(positions.shape), "colors": list(colors.shape)})
        if positions.shape[0] < 1:
            raise PointCloudValidationError("point cloud must contain at least one point")

        bad = ~np.isfinite(positions).all(axis=1)
        if bad.any():
            index = int(np.argmax(bad))
            raise PointCloudValidationError(f"non-finite coordinate at point {index}",
                                            details={"index": index})
        bad = ~(np.isfinite(colors) & (colors >= 0.0) & (colors <= 1.0)).all(axis=1)
        if bad.any():
            index = int(np.argmax(bad))
            raise PointCloudValidationError(f"color outside [0, 1] at point {index}",
                                            details={"index": index})

        object.__setattr__(self, "positions", _frozen(positions))
        object.__setattr__(self, "colors", _frozen(colors))

    @classmethod
    def from_positions(cls, positions: ArrayLike) -> "PointCloud":
        """Geometry-only cloud; colors default to mid-gray."""
        return cls(positions=np.asarray(positions, dtype=np.float64), colors=None)

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    @property
    def num_points(self) -> int:
        return len(self)

    def as_matrix(self) -> np.ndarray:
        """The N x 6 (x, y, z, r, g, b) input matrix."""
        return np.concatenate([self.positions, self.colors], axis=1)

    def equals(self, other: "PointCloud", color_tolerance: float = 0.0) -> bool:
        """Exact positions, colors within ``color_tolerance``."""
        if len(self) != len(other):
            return False
        return bool(np.array_equal(self.positions, other.positions)
                    and np.all(np.abs(self.colors - other.colors) <= color_tolerance))


@dataclass(frozen=True, eq=False)
class SuperpointLabels:
    """Dense cluster ids in [0, count), every id owning at least one point."""

    ids: np.ndarray
    count: int = field(default=-1)

    def __post_init__(self):
        ids = np.array(self.ids, copy=True)
        if ids.ndim != 1 or ids.size < 1:
            raise SuperpointLabelError("superpoint ids must be a non-empty 1-D sequence",
                                       details={"shape": list(ids.shape)})
        if not np.issubdtype(ids.dtype, np.integer):
            raise SuperpointLabelError("superpoint ids must be integers", details={"dtype": str(ids.dtype)})
        ids = ids.astype(np.int64)
        count = int(ids.max()) + 1 if self.count < 0 else int(self.count)
        if ids.min() < 0 or ids.max() >= count:
            raise SuperpointLabelError("superpoint id outside [0, count)",
                                       details={"count": count, "min": int(ids.min()), "max": int(ids.max())})
        sizes = np.bincount(ids, minlength=count)
        if (sizes == 0).any():
            missing = int(np.argmax(sizes == 0))
            raise SuperpointLabelError(f"superpoint {missing} owns no points", details={"id": missing})
        object.__setattr__(self, "ids", _frozen(ids))
        object.__setattr__(self, "count", count)
        object.__setattr__(self, "_sizes", _frozen(sizes))

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    @property
    def sizes(self) -> np.ndarray:
        """Member count per superpoint."""
        return self._sizes

    @classmethod
    def densify(cls, raw_ids: ArrayLike) -> "SuperpointLabels":
        """Remap arbitrary non-negative ids to [0, M) by first occurrence."""
        raw = np.asarray(raw_ids)
        if raw.ndim != 1 or raw.size < 1:
            raise SuperpointLabelError("superpoint ids must be a non-empty 1-D sequence")
        _, first_index, inverse = np.unique(raw, return_index=True, return_inverse=True)
        # rank unique values by where they first appear
        order = np.argsort(first_index, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(order.size)
        return cls(ids=rank[inverse].astype(np.int64), count=int(order.size))


def check_feature_matrix(name: str, features: np.ndarray, rows: Optional[int] = None,
                         cols: Optional[int] = None) -> np.ndarray:
    """
    Validate a dense feature table (p', D_f, G, S, F_d, F_l, M).

    Raises:
        ShapeError: wrong rank or dimension
        ValidationError: non-finite entries
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeError(f"{name} must be a 2-D feature matrix", expected="rows x cols",
                         actual=list(features.shape))
    if rows is not None and features.shape[0] != rows:
        raise ShapeError(f"{name} has {features.shape[0]} rows, expected {rows}",
                         expected=rows, actual=features.shape[0])
    if cols is not None and features.shape[1] != cols:
        raise ShapeError(f"{name} has {features.shape[1]} columns, expected {cols}",
                         expected=cols, actual=features.shape[1])
    if features.shape[0] < 1 or features.shape[1] < 1:
        raise ShapeError(f"{name} must have positive row and column counts", actual=list(features.shape))
    if not np.isfinite(features).all():
        raise ValidationError(f"{name} contains non-finite entries", details={"name": name})
    return features
