from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Tuple

import numpy as np

from geodet.core.exceptions import ShapeError

GATING_INIT = 0.1
PARAM_GROUPS = ("backbone", "gating", "projection", "encoder", "box_head", "class_head")


@dataclass(frozen=True, eq=False)
class GeometryWeights:
    """Per-point spatial weights w_i with the intermediates that produced them."""

    centroid: np.ndarray      # (3,)
    distances: np.ndarray     # (N,) meters
    normalized: np.ndarray    # (N,) in [0, 1]
    weights: np.ndarray       # (N,) in [exp(-alpha), 1]
    alpha: float
    metric: str = "euclidean"

    def __len__(self) -> int:
        return int(self.weights.shape[0])

    def to_dict(self) -> Dict[str, object]:
        return {
            "alpha": self.alpha,
            "metric": self.metric,
            "centroid": self.centroid.tolist(),
            "distances": self.distances.tolist(),
            "normalized": self.normalized.tolist(),
            "weights": self.weights.tolist(),
        }


@dataclass(eq=False)
class GatingParams:
    """Trainable per-channel gate vector; the sigmoid is applied at use time."""

    raw_weights: np.ndarray

    @property
    def channels(self) -> int:
        return int(self.raw_weights.shape[0])


@dataclass(frozen=True, eq=False)
class HybridRepresentation:
    """Per-superpoint [F_d | F_l] features (M x 2C) with member-mean positions."""

    features: np.ndarray
    superpoint_centroids: np.ndarray

    @property
    def num_queries(self) -> int:
        return int(self.features.shape[0])

    @property
    def channels(self) -> int:
        return int(self.features.shape[1] // 2)


def expected_shapes(channels: int, hidden: int, layers: int, num_classes: int) -> Dict[str, Tuple[int, ...]]:
    """Parameter name -> shape for one architecture, in canonical order."""
    c, h = channels, hidden
    shapes: Dict[str, Tuple[int, ...]] = {
        "backbone.w1": (6, h), "backbone.b1": (h,),
        "backbone.w2": (h, c), "backbone.b2": (c,),
        "gating.raw": (c,),
        "projection.w": (2 * c, c), "projection.b": (c,),
    }
    for layer in range(layers):
        prefix = f"encoder.{layer}"
        for name in ("q", "k", "v", "o"):
            shapes[f"{prefix}.w{name}"] = (c, c)
            shapes[f"{prefix}.b{name}"] = (c,)
        shapes[f"{prefix}.w_ff1"] = (c, 4 * c)
        shapes[f"{prefix}.b_ff1"] = (4 * c,)
        shapes[f"{prefix}.w_ff2"] = (4 * c, c)
        shapes[f"{prefix}.b_ff2"] = (c,)
    shapes.update({
        "box_head.w1": (c, h), "box_head.b1": (h,),
        "box_head.w2": (h, 6), "box_head.b2": (6,),
        "class_head.w1": (c, h), "class_head.b1": (h,),
        "class_head.w2": (h, num_classes + 1), "class_head.b2": (num_classes + 1,),
    })
    return shapes


@dataclass(eq=False)
class ModelParams:
    """
    All trainable arrays of the detector, keyed by dotted name.

    The last class index (``num_classes``) is the no-object class.
    """

    channels: int
    hidden: int
    layers: int
    num_classes: int
    arrays: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        expected = expected_shapes(self.channels, self.hidden, self.layers, self.num_classes)
        if not self.arrays:
            self.arrays = {name: np.zeros(shape) for name, shape in expected.items()}
        if set(self.arrays) != set(expected):
            missing = sorted(set(expected) - set(self.arrays))
            extra = sorted(set(self.arrays) - set(expected))
            raise ShapeError("parameter names do not match the architecture",
                             details={"missing": missing, "unexpected": extra})
        for name, shape in expected.items():
            array = np.asarray(self.arrays[name], dtype=np.float64)
            if array.shape != shape:
                raise ShapeError(f"parameter {name} has shape {array.shape}, expected {shape}",
                                 expected=list(shape), actual=list(array.shape), details={"name": name})
            self.arrays[name] = array
        # canonical order
        self.arrays = {name: self.arrays[name] for name in expected}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.arrays[name] = value

    def __iter__(self) -> Iterator[str]:
        return iter(self.arrays)

    def items(self):
        return self.arrays.items()

    @property
    def gating(self) -> GatingParams:
        return GatingParams(raw_weights=self.arrays["gating.raw"])

    @staticmethod
    def group_of(name: str) -> str:
        return name.split(".", 1)[0]

    def names_in_group(self, group: str) -> List[str]:
        return [name for name in self.arrays if self.group_of(name) == group]

    def copy(self) -> "ModelParams":
        return ModelParams(self.channels, self.hidden, self.layers, self.num_classes,
                           {name: array.copy() for name, array in self.arrays.items()})

    def zeros_like(self) -> "ModelParams":
        return ModelParams(self.channels, self.hidden, self.layers, self.num_classes,
                           {name: np.zeros_like(array) for name, array in self.arrays.items()})

    def num_parameters(self) -> int:
        return int(sum(array.size for array in self.arrays.values()))

    def equals(self, other: "ModelParams") -> bool:
        """Bit-exact equality of architecture and every array."""
        if (self.channels, self.hidden, self.layers, self.num_classes) != \
                (other.channels, other.hidden, other.layers, other.num_classes):
            return False
        return all(np.array_equal(array, other.arrays[name]) for name, array in self.arrays.items())
