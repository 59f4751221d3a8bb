"""
geodet Checkpoints
==================

Versioned JSON documents holding the detector configuration, the class
list and every parameter array::

    {"format": "geodet-checkpoint", "version": 1,
     "config": {"channels": 32, "hidden": 64, ...},
     "class_names": ["class_0", ...],
     "params": {"backbone.w1": {"shape": [6, 64], "values": [...]}, ...}}

Floats are written with their shortest round-trip repr, so loading a saved
checkpoint reproduces every array bit for bit and saving the same
parameters twice yields identical bytes.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel, Field
from pydantic import ValidationError as PydanticValidationError

from geodet.core.detection_head import DetectorConfig
from geodet.core.exceptions import CheckpointError, ShapeError, ValidationError
from geodet.integrations.pointcloud_io import write_bytes
from geodet.models.network_models import ModelParams

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "geodet-checkpoint"
CHECKPOINT_VERSION = 1


class TensorRecord(BaseModel):
    shape: List[int] = Field(..., description="Array shape")
    values: List[float] = Field(..., description="Row-major flattened values")


class CheckpointDocument(BaseModel):
    format: str
    version: int
    config: Dict[str, Union[bool, int, float, str]]
    class_names: List[str]
    params: Dict[str, TensorRecord]


@dataclass
class Checkpoint:
    config: DetectorConfig
    class_names: List[str]
    params: ModelParams


def save_checkpoint(params: ModelParams, config: DetectorConfig, class_names: List[str]) -> bytes:
    """Serialize parameters with their architecture and class list."""
    if config.num_classes != params.num_classes or config.channels != params.channels:
        raise CheckpointError("detector config does not describe these parameters",
                              details={"config": config.to_dict(), "channels": params.channels,
                                       "num_classes": params.num_classes})
    document = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "class_names": list(class_names),
        "params": {
            name: {"shape": list(array.shape), "values": [float(v) for v in array.ravel()]}
            for name, array in params.items()
        },
    }
    return json.dumps(document, indent=None, separators=(",", ":")).encode("utf-8")


def load_checkpoint(data: bytes, expected: Optional[DetectorConfig] = None) -> Checkpoint:
    """
    Rebuild a checkpoint, optionally checking it against an expected architecture.

    Raises:
        CheckpointError: truncated or malformed JSON, unknown version, shape
            metadata inconsistent with the stored config or with ``expected``
    """
    try:
        # json.loads reads repr floats back exactly
        document = CheckpointDocument.model_validate(json.loads(data))
    except PydanticValidationError as e:
        first = e.errors()[0]
        raise CheckpointError(f"malformed checkpoint: {'.'.join(str(p) for p in first['loc'])} {first['msg']}".strip(),
                              details={"errors": len(e.errors())})
    except (ValueError, TypeError, RecursionError) as e:
        raise CheckpointError(f"unreadable checkpoint: {e}")

    if document.format != CHECKPOINT_FORMAT or document.version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint {document.format} v{document.version}",
                              details={"format": document.format, "version": document.version})
    try:
        config = DetectorConfig(**document.config)
    except (TypeError, ValidationError) as e:
        raise CheckpointError(f"checkpoint config is invalid: {e}")

    if expected is not None:
        keys = ("channels", "hidden", "layers", "num_classes")
        mismatched = {k: (getattr(config, k), getattr(expected, k)) for k in keys
                      if getattr(config, k) != getattr(expected, k)}
        if mismatched:
            raise CheckpointError("checkpoint architecture does not match the requested configuration",
                                  details={"mismatch": {k: {"checkpoint": a, "expected": b}
                                                        for k, (a, b) in mismatched.items()}})

    arrays = {}
    for name, record in document.params.items():
        if any(dim < 0 for dim in record.shape) or math.prod(record.shape) != len(record.values):
            raise CheckpointError(f"parameter {name}: {len(record.values)} values for shape {record.shape}",
                                  details={"name": name, "shape": record.shape})
        arrays[name] = np.array(record.values, dtype=np.float64).reshape(record.shape)
    try:
        params = ModelParams(config.channels, config.hidden, config.layers, config.num_classes, arrays)
    except ShapeError as e:
        raise CheckpointError(f"checkpoint parameters do not fit its config: {e.message}", details=e.details)
    if len(document.class_names) != config.num_classes:
        raise CheckpointError("class list length differs from num_classes",
                              details={"class_names": len(document.class_names), "num_classes": config.num_classes})
    return Checkpoint(config=config, class_names=document.class_names, params=params)


def write_checkpoint(path: Union[str, Path], params: ModelParams, config: DetectorConfig,
                     class_names: List[str]) -> Path:
    path = write_bytes(path, save_checkpoint(params, config, class_names))
    logger.info(f"Saved checkpoint with {params.num_parameters()} parameters to {path}")
    return path


def read_checkpoint(path: Union[str, Path], expected: Optional[DetectorConfig] = None) -> Checkpoint:
    return load_checkpoint(Path(path).read_bytes(), expected)
