"""
geodet Toy Training
===================

Single-threaded training of the detector on a handful of labeled scenes.

Each epoch visits the scenes in their given order and takes one optimizer
step per scene (batch size 1). The learning rate follows the polynomial
schedule ``lr * (1 - t / T) ** poly_power`` over T = epochs * scenes steps.
Weight decay is decoupled from the gradient for both optimizers:

    adamw: p <- p - lr_t * (m_hat / (sqrt(v_hat) + eps) + wd * p)
    sgd:   p <- p - lr_t * (g + wd * p)

With channel gating ablated (use_dcg off) the gate parameters get neither
updates nor decay.

Every loss, gradient and updated parameter is checked for NaN/Inf; the
first non-finite tensor aborts training with a NonFiniteError.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from geodet.config.settings import RunConfig
from geodet.core.detection_head import DetectorConfig, GeoDetector, SceneInputs
from geodet.core.exceptions import NonFiniteError, TrainingError, ValidationError
from geodet.integrations.pointcloud_io import write_bytes
from geodet.models.detection_models import SceneAnnotation
from geodet.models.network_models import ModelParams
from geodet.models.pointcloud_models import PointCloud, SuperpointLabels
from geodet.services.scene_generator import SuiteScene

logger = logging.getLogger(__name__)

TrainingScene = Union[SuiteScene, Tuple[PointCloud, SceneAnnotation],
                      Tuple[PointCloud, SceneAnnotation, SuperpointLabels]]


class EpochLoss(BaseModel):
    epoch: int = Field(..., ge=1)
    total: float
    cls: float
    reg: float
    lr: float = Field(..., ge=0.0, description="Learning rate at the epoch's first step")


class LossTrace(BaseModel):
    """Per-epoch mean losses over the training scenes."""

    optimizer: str
    seed: int
    epochs: List[EpochLoss] = Field(default_factory=list)

    @property
    def initial(self) -> float:
        return self.epochs[0].total if self.epochs else float("nan")

    @property
    def final(self) -> float:
        return self.epochs[-1].total if self.epochs else float("nan")


@dataclass
class TrainingResult:
    params: ModelParams
    trace: LossTrace
    detector: GeoDetector
    class_names: List[str]
    scenes: List[SceneInputs] = field(default_factory=list)


def poly_lr(base_lr: float, step: int, total_steps: int, power: float) -> float:
    """Polynomial decay from ``base_lr`` towards 0 at ``total_steps``."""
    if total_steps <= 0:
        return base_lr
    return base_lr * (1.0 - step / total_steps) ** power


class SGD:
    """Gradient descent with decoupled weight decay."""

    def __init__(self, weight_decay: float = 0.05, frozen: Sequence[str] = ()):
        self.weight_decay = weight_decay
        self.frozen = frozenset(frozen)

    def step(self, params: ModelParams, grads: ModelParams, lr: float) -> None:
        if lr == 0.0:
            return
        for name, value in params.items():
            if name in self.frozen:
                continue
            params[name] = value - lr * (grads[name] + self.weight_decay * value)


class AdamW:
    """Adam with bias-corrected moments and decoupled weight decay."""

    def __init__(self, weight_decay: float = 0.05, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 frozen: Sequence[str] = ()):
        self.weight_decay = weight_decay
        self.frozen = frozenset(frozen)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: ModelParams, grads: ModelParams, lr: float) -> None:
        if lr == 0.0:
            return
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name, value in params.items():
            if name in self.frozen:
                continue
            g = grads[name]
            m = self.beta1 * self.m.get(name, np.zeros_like(g)) + (1.0 - self.beta1) * g
            v = self.beta2 * self.v.get(name, np.zeros_like(g)) + (1.0 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            update = (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            params[name] = value - lr * (update + self.weight_decay * value)


def create_optimizer(config: RunConfig):
    """Optimizer for ``config``; the gate stays frozen when channel gating is ablated."""
    frozen = () if config.use_dcg else ("gating.raw",)
    if config.optimizer == "sgd":
        return SGD(weight_decay=config.weight_decay, frozen=frozen)
    return AdamW(weight_decay=config.weight_decay, beta1=config.adam_beta1,
                 beta2=config.adam_beta2, eps=config.adam_eps, frozen=frozen)


def _unpack(scene: TrainingScene, index: int) -> Tuple[str, PointCloud, SceneAnnotation, Optional[SuperpointLabels]]:
    if isinstance(scene, SuiteScene):
        return scene.scene_id, scene.cloud, scene.annotation, scene.labels
    cloud, annotation, *labels = scene
    return f"scene_{index:03d}", cloud, annotation, labels[0] if labels else None


def _first_non_finite(arrays: ModelParams) -> Optional[str]:
    for name, array in arrays.items():
        if not np.isfinite(array).all():
            return name
    return None


def prepare_scenes(detector: GeoDetector, scenes: Sequence[TrainingScene]) -> Tuple[List[SceneInputs], List[str]]:
    """
    Precompute geometry and superpoints and check every scene shares one class list.

    Raises:
        ValidationError: no scenes or inconsistent class lists
    """
    if not scenes:
        raise ValidationError("training needs at least one scene")
    prepared = []
    class_names: Optional[List[str]] = None
    for index, scene in enumerate(scenes):
        scene_id, cloud, annotation, labels = _unpack(scene, index)
        if class_names is None:
            class_names = list(annotation.class_names)
        elif list(annotation.class_names) != class_names:
            raise ValidationError(f"scene {scene_id} has a different class list",
                                  details={"scene": scene_id, "expected": class_names,
                                           "actual": list(annotation.class_names)})
        prepared.append(detector.prepare_scene(cloud, annotation, labels, scene_id))
    return prepared, class_names


def train_toy(scenes: Sequence[TrainingScene], config: RunConfig, lr: Optional[float] = None,
              params: Optional[ModelParams] = None,
              on_epoch: Optional[Callable[[EpochLoss], None]] = None) -> TrainingResult:
    """
    Train from the seed-derived initialization (or ``params``) and return the loss trace.

    ``lr`` overrides ``config.lr`` and may be 0, which leaves the parameters
    bit-identical.

    Raises:
        ValidationError: no scenes or inconsistent class lists
        NonFiniteError: a loss, gradient or parameter became NaN/Inf
    """
    base_lr = config.lr if lr is None else lr
    if base_lr < 0:
        raise TrainingError(f"learning rate must be non-negative, got {base_lr}")

    first_annotation = _unpack(scenes[0], 0)[2] if scenes else None
    num_classes = len(first_annotation.class_names) if first_annotation else 1
    detector = GeoDetector(DetectorConfig.from_run_config(config, num_classes))
    prepared, class_names = prepare_scenes(detector, scenes)
    params = params.copy() if params is not None else detector.init_params(config.seed)
    optimizer = create_optimizer(config)

    total_steps = config.epochs * len(prepared)
    trace = LossTrace(optimizer=config.optimizer, seed=config.seed)
    logger.info(f"Training on {len(prepared)} scenes for {config.epochs} epochs "
                f"({config.optimizer}, lr={base_lr}, {params.num_parameters()} parameters)")

    step = 0
    for epoch in range(1, config.epochs + 1):
        totals = np.zeros(3)
        epoch_lr = poly_lr(base_lr, step, total_steps, config.poly_power)
        for scene in prepared:
            try:
                loss, grads, _ = detector.loss_and_grad(params, scene, config.beta)
            except NonFiniteError as e:
                e.details.update({"epoch": epoch, "step": step})
                logger.error(f"Training aborted at epoch {epoch}: {e.message}")
                raise
            if not np.isfinite(loss.total):
                raise NonFiniteError(f"non-finite loss at epoch {epoch} on scene {scene.scene_id}",
                                     details={"tensor": "loss", "epoch": epoch, "step": step,
                                              "scene": scene.scene_id})
            bad = _first_non_finite(grads)
            if bad is not None:
                logger.error(f"Non-finite gradient for {bad} at epoch {epoch}")
                raise NonFiniteError(f"non-finite gradient for {bad} at epoch {epoch}",
                                     details={"tensor": f"grad.{bad}", "epoch": epoch, "step": step,
                                              "scene": scene.scene_id})

            optimizer.step(params, grads, poly_lr(base_lr, step, total_steps, config.poly_power))
            bad = _first_non_finite(params)
            if bad is not None:
                logger.error(f"Parameter {bad} became non-finite at epoch {epoch}")
                raise NonFiniteError(f"parameter {bad} became non-finite at epoch {epoch}",
                                     details={"tensor": bad, "epoch": epoch, "step": step})
            totals += (loss.total, loss.cls, loss.reg)
            step += 1

        mean = totals / len(prepared)
        record = EpochLoss(epoch=epoch, total=mean[0], cls=mean[1], reg=mean[2], lr=epoch_lr)
        trace.epochs.append(record)
        if on_epoch is not None:
            on_epoch(record)
        if epoch == 1 or epoch % config.log_every == 0 or epoch == config.epochs:
            logger.info(f"Epoch {epoch}/{config.epochs}: loss={record.total:.5f} "
                        f"(cls={record.cls:.5f}, reg={record.reg:.5f}) lr={epoch_lr:.3g}")
        else:
            logger.debug(f"Epoch {epoch}: loss={record.total:.6f}")

    logger.info(f"Training finished: loss {trace.initial:.5f} -> {trace.final:.5f}")
    return TrainingResult(params=params, trace=trace, detector=detector, class_names=class_names, scenes=prepared)


def write_trace(path: Union[str, Path], trace: LossTrace, indent: int = 2) -> Path:
    payload = json.dumps(trace.model_dump(), indent=indent).encode("utf-8")
    return write_bytes(path, payload)


def trace_path_for(checkpoint: Union[str, Path]) -> Path:
    """``run.json`` -> ``run.trace.json`` beside the checkpoint."""
    checkpoint = Path(checkpoint)
    return checkpoint.with_name(f"{checkpoint.stem}.trace.json")
