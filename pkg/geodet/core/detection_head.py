"""
Detector forward and backward passes.

Dataflow for one scene::

    cloud --geometry--> w (N)                          no gradient
    cloud --backbone--> p' (N x C)
    p'    --gate------> D_f (N x C)
    w, D_f -----------> G = w * D_f
    G     --mean------> F_d (M x C) \
    D_f   --max-------> F_l (M x C)  -> M = [F_d | F_l] (M x 2C)
    M     --encoder---> E (M x C)
    E     --heads-----> box offsets / log-sizes (M x 6), logits (M x K+1)

The backbone is a pointwise 6 -> H -> C tanh MLP standing in for a sparse
U-Net. The encoder is L blocks of single-head self-attention and a GELU
feed-forward, each with a residual connection and no positional encoding,
so it is equivariant to query order.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from geodet.core.box_ops import boxes_to_arrays, diou_with_grad
from geodet.core.channel_gating import gate_backward, gate_features
from geodet.core.exceptions import NonFiniteError, ShapeError, ValidationError
from geodet.core.geometry_weights import compute_geometry_weights, uniform_weights
from geodet.core.layers import (
    gelu, gelu_grad, glorot_bound, linear, linear_backward, log_softmax, softmax, softmax_backward
)
from geodet.core.matching import Assignment, HungarianMatcher
from geodet.core.superpoint_aggregation import (
    aggregate_backward, cluster_voxel_grid, fuse, recalibrate, scatter_max, scatter_mean,
    superpoint_centroids
)
from geodet.models.detection_models import Box3D, DetectionResult, SceneAnnotation, ScoredBox
from geodet.models.network_models import GATING_INIT, GeometryWeights, HybridRepresentation, ModelParams
from geodet.models.pointcloud_models import PointCloud, SuperpointLabels
from geodet.utils.rng import SplitMix64, derive_seed

logger = logging.getLogger(__name__)

TRACE_STAGES = ("centroid", "distances", "normalized", "weights", "backbone", "gated", "recalibrated",
                "scatter_mean", "scatter_max", "fused", "encoded", "boxes")


@dataclass(frozen=True)
class DetectorConfig:
    """Architecture and geometry settings shared by training, detection and checkpoints."""

    channels: int = 32
    hidden: int = 64
    layers: int = 2
    num_classes: int = 1
    alpha: float = 2.0
    distance_metric: str = "euclidean"
    use_gal: bool = True
    use_dcg: bool = True
    voxel_size: float = 0.25
    log_size_clip: float = 10.0

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValidationError("detector needs at least one object class",
                                  details={"num_classes": self.num_classes})

    @classmethod
    def from_run_config(cls, run_config, num_classes: int) -> "DetectorConfig":
        return cls(num_classes=num_classes, **run_config.model_config_dict())

    def to_dict(self) -> Dict[str, object]:
        return dict(self.__dict__)


@dataclass
class SceneInputs:
    """Everything about a scene that does not depend on the parameters."""

    scene_id: str
    cloud: PointCloud
    labels: SuperpointLabels
    geometry: GeometryWeights
    centroids: np.ndarray
    annotation: Optional[SceneAnnotation] = None

    @property
    def gt_arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return boxes_to_arrays(self.annotation.boxes if self.annotation else [])


@dataclass
class Prediction:
    """Raw head outputs for M queries."""

    centers: np.ndarray      # M x 3
    sizes: np.ndarray        # M x 3
    logits: np.ndarray       # M x (K + 1)

    @property
    def num_queries(self) -> int:
        return int(self.centers.shape[0])

    def probabilities(self) -> np.ndarray:
        return softmax(self.logits, axis=1)

    def boxes(self) -> List[Box3D]:
        """One box per query, classed by the most likely real class."""
        classes = np.argmax(self.logits[:, :-1], axis=1)
        return [Box3D(center=tuple(c), size=tuple(s), class_id=int(k))
                for c, s, k in zip(self.centers, self.sizes, classes)]


@dataclass
class ForwardResult:
    prediction: Prediction
    stages: "OrderedDict[str, np.ndarray]"
    cache: Dict[str, object] = field(default_factory=dict)


@dataclass
class LossResult:
    total: float
    cls: float
    reg: float
    assignment: Assignment
    grad_logits: np.ndarray
    grad_centers: np.ndarray
    grad_sizes: np.ndarray


# ===== PARAMETERS =====

def init_params(channels: int, hidden: int, layers: int, num_classes: int, seed: int = 7) -> ModelParams:
    """Glorot-uniform weights from the portable generator, zero biases, gate at 0.1."""
    params = ModelParams(channels, hidden, layers, num_classes)
    rng = SplitMix64(derive_seed(seed, "init"))
    for name, array in params.items():
        if name == "gating.raw":
            params[name] = np.full(array.shape, GATING_INIT)
        elif array.ndim == 2:
            bound = glorot_bound(*array.shape)
            params[name] = rng.uniform(-bound, bound, array.shape)
    return params


# ===== BACKBONE =====

def _backbone(x6: np.ndarray, params: ModelParams) -> Tuple[np.ndarray, Tuple[np.ndarray, np.ndarray]]:
    hidden = np.tanh(linear(x6, params["backbone.w1"], params["backbone.b1"]))
    return linear(hidden, params["backbone.w2"], params["backbone.b2"]), (x6, hidden)


def _backbone_backward(cache, grad_out: np.ndarray, params: ModelParams, grads: ModelParams) -> np.ndarray:
    x6, hidden = cache
    d_hidden, grads["backbone.w2"], grads["backbone.b2"] = linear_backward(hidden, params["backbone.w2"], grad_out)
    d_pre = d_hidden * (1.0 - hidden ** 2)
    d_x6, grads["backbone.w1"], grads["backbone.b1"] = linear_backward(x6, params["backbone.w1"], d_pre)
    return d_x6


def backbone_forward(cloud: PointCloud, params: ModelParams) -> np.ndarray:
    """Per-point features p' (N x C) from (x, y, z, r, g, b)."""
    features, _ = _backbone(cloud.as_matrix(), params)
    return features


# ===== ENCODER =====

def _encoder(queries: np.ndarray, params: ModelParams):
    channels = params.channels
    if queries.ndim != 2 or queries.shape[1] != 2 * channels or queries.shape[0] < 1:
        raise ShapeError("encoder queries must be M x 2C", expected=["M>=1", 2 * channels],
                         actual=list(queries.shape))
    scale = 1.0 / np.sqrt(channels)
    x = linear(queries, params["projection.w"], params["projection.b"])
    caches = []
    for layer in range(params.layers):
        p = f"encoder.{layer}"
        q = linear(x, params[f"{p}.wq"], params[f"{p}.bq"])
        k = linear(x, params[f"{p}.wk"], params[f"{p}.bk"])
        v = linear(x, params[f"{p}.wv"], params[f"{p}.bv"])
        attn = softmax(q @ k.T * scale, axis=1)
        z = attn @ v
        h = x + linear(z, params[f"{p}.wo"], params[f"{p}.bo"])
        f_pre = linear(h, params[f"{p}.w_ff1"], params[f"{p}.b_ff1"])
        f_act = gelu(f_pre)
        y = h + linear(f_act, params[f"{p}.w_ff2"], params[f"{p}.b_ff2"])
        caches.append((x, q, k, v, attn, z, h, f_pre, f_act))
        x = y
    return x, (queries, caches)


def _encoder_backward(cache, grad_out: np.ndarray, params: ModelParams, grads: ModelParams) -> np.ndarray:
    queries, caches = cache
    scale = 1.0 / np.sqrt(params.channels)
    grad = grad_out
    for layer in reversed(range(params.layers)):
        p = f"encoder.{layer}"
        x, q, k, v, attn, z, h, f_pre, f_act = caches[layer]

        d_act, grads[f"{p}.w_ff2"], grads[f"{p}.b_ff2"] = linear_backward(f_act, params[f"{p}.w_ff2"], grad)
        d_pre = d_act * gelu_grad(f_pre)
        d_h_ff, grads[f"{p}.w_ff1"], grads[f"{p}.b_ff1"] = linear_backward(h, params[f"{p}.w_ff1"], d_pre)
        d_h = grad + d_h_ff

        d_z, grads[f"{p}.wo"], grads[f"{p}.bo"] = linear_backward(z, params[f"{p}.wo"], d_h)
        d_attn = d_z @ v.T
        d_v = attn.T @ d_z
        d_scores = softmax_backward(attn, d_attn) * scale
        d_q = d_scores @ k
        d_k = d_scores.T @ q

        d_x = d_h.copy()
        for name, d_proj in (("q", d_q), ("k", d_k), ("v", d_v)):
            d_in, grads[f"{p}.w{name}"], grads[f"{p}.b{name}"] = linear_backward(x, params[f"{p}.w{name}"], d_proj)
            d_x += d_in
        grad = d_x

    d_queries, grads["projection.w"], grads["projection.b"] = linear_backward(queries, params["projection.w"], grad)
    return d_queries


def encoder_forward(queries, params: ModelParams, return_attention: bool = False):
    """
    Project 2C -> C and run the self-attention blocks; row count is preserved.

    With ``return_attention`` also returns the per-layer M x M attention maps.
    """
    features = queries.features if isinstance(queries, HybridRepresentation) else np.asarray(queries, dtype=np.float64)
    encoded, (_, caches) = _encoder(features, params)
    if return_attention:
        return encoded, [cache[4] for cache in caches]
    return encoded


# ===== HEADS =====

def _heads(encoded: np.ndarray, centroids: np.ndarray, params: ModelParams, log_size_clip: float):
    box_hidden_pre = linear(encoded, params["box_head.w1"], params["box_head.b1"])
    box_hidden = gelu(box_hidden_pre)
    box_raw = linear(box_hidden, params["box_head.w2"], params["box_head.b2"])
    cls_hidden_pre = linear(encoded, params["class_head.w1"], params["class_head.b1"])
    cls_hidden = gelu(cls_hidden_pre)
    logits = linear(cls_hidden, params["class_head.w2"], params["class_head.b2"])

    log_size = box_raw[:, 3:]
    in_band = np.abs(log_size) < log_size_clip
    sizes = np.exp(np.clip(log_size, -log_size_clip, log_size_clip))
    centers = centroids + box_raw[:, :3]
    prediction = Prediction(centers=centers, sizes=sizes, logits=logits)
    return prediction, (encoded, box_hidden_pre, box_hidden, cls_hidden_pre, cls_hidden, sizes, in_band)


def _heads_backward(cache, grad_centers: np.ndarray, grad_sizes: np.ndarray, grad_logits: np.ndarray,
                    params: ModelParams, grads: ModelParams) -> np.ndarray:
    encoded, box_hidden_pre, box_hidden, cls_hidden_pre, cls_hidden, sizes, in_band = cache
    d_box_raw = np.concatenate([grad_centers, grad_sizes * sizes * in_band], axis=1)

    d_box_hidden, grads["box_head.w2"], grads["box_head.b2"] = linear_backward(
        box_hidden, params["box_head.w2"], d_box_raw)
    d_box_pre = d_box_hidden * gelu_grad(box_hidden_pre)
    d_enc_box, grads["box_head.w1"], grads["box_head.b1"] = linear_backward(
        encoded, params["box_head.w1"], d_box_pre)

    d_cls_hidden, grads["class_head.w2"], grads["class_head.b2"] = linear_backward(
        cls_hidden, params["class_head.w2"], grad_logits)
    d_cls_pre = d_cls_hidden * gelu_grad(cls_hidden_pre)
    d_enc_cls, grads["class_head.w1"], grads["class_head.b1"] = linear_backward(
        encoded, params["class_head.w1"], d_cls_pre)
    return d_enc_box + d_enc_cls


def predict(encoded: np.ndarray, centroids: np.ndarray, params: ModelParams,
            log_size_clip: float = 10.0) -> Tuple[List[Box3D], np.ndarray]:
    """
    Decode boxes (centroid + offset, exp(log-size)) and class logits.

    Returns:
        (M boxes, M x (K+1) unnormalized logits)
    """
    encoded = np.asarray(encoded, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    if centroids.shape != (encoded.shape[0], 3):
        raise ShapeError("centroids must be M x 3", expected=[encoded.shape[0], 3], actual=list(centroids.shape))
    prediction, _ = _heads(encoded, centroids, params, log_size_clip)
    return prediction.boxes(), prediction.logits


# ===== LOSS =====

def total_loss(assignment: Assignment, prediction: Prediction, gt: SceneAnnotation,
               beta: float = 0.5, num_classes: Optional[int] = None) -> LossResult:
    """
    beta * L_cls + L_reg with gradients w.r.t. the prediction.

    L_cls is the mean cross-entropy over all M queries (unmatched queries
    target the no-object class K); L_reg is the mean DIoU loss over matched
    pairs, 0 when nothing is matched.
    """

    num_queries = prediction.num_queries
    no_object = prediction.logits.shape[1] - 1 if num_classes is None else num_classes
    gt_centers, gt_sizes, gt_classes = boxes_to_arrays(gt.boxes)

    targets = np.full(num_queries, no_object, dtype=np.int64)
    pred_idx = np.array([m for m, _ in assignment], dtype=np.int64)
    gt_idx = np.array([g for _, g in assignment], dtype=np.int64)
    if assignment:
        targets[pred_idx] = gt_classes[gt_idx]

    log_probs = log_softmax(prediction.logits, axis=1)
    loss_cls = float(-np.mean(log_probs[np.arange(num_queries), targets]))
    grad_logits = np.exp(log_probs)
    grad_logits[np.arange(num_queries), targets] -= 1.0
    grad_logits *= beta / num_queries

    grad_centers = np.zeros_like(prediction.centers)
    grad_sizes = np.zeros_like(prediction.sizes)
    loss_reg = 0.0
    if assignment:
        losses, d_center, d_size = diou_with_grad(prediction.centers[pred_idx], prediction.sizes[pred_idx],
                                                  gt_centers[gt_idx], gt_sizes[gt_idx])
        count = len(assignment)
        loss_reg = float(np.mean(losses))
        grad_centers[pred_idx] = d_center / count
        grad_sizes[pred_idx] = d_size / count

    return LossResult(total=beta * loss_cls + loss_reg, cls=loss_cls, reg=loss_reg, assignment=list(assignment),
                      grad_logits=grad_logits, grad_centers=grad_centers, grad_sizes=grad_sizes)


# ===== FULL PIPELINE =====

class GeoDetector:
    """Wires geometry weighting, gating, aggregation, encoder and heads for one configuration."""

    def __init__(self, config: DetectorConfig, matcher: Optional[HungarianMatcher] = None):
        self.config = config
        self.matcher = matcher or HungarianMatcher()

    def init_params(self, seed: int) -> ModelParams:
        c = self.config
        return init_params(c.channels, c.hidden, c.layers, c.num_classes, seed)

    def prepare_scene(self, cloud: PointCloud, annotation: Optional[SceneAnnotation] = None,
                      labels: Optional[SuperpointLabels] = None, scene_id: str = "scene") -> SceneInputs:
        """Compute the parameter-independent parts: weights, superpoints, centroids."""
        if labels is None:
            labels = cluster_voxel_grid(cloud, self.config.voxel_size)
        elif len(labels) != len(cloud):
            raise ShapeError(f"scene {scene_id}: {len(labels)} superpoint labels for {len(cloud)} points",
                             expected=len(cloud), actual=len(labels))
        if self.config.use_gal:
            geometry = compute_geometry_weights(cloud, self.config.alpha, self.config.distance_metric)
        else:
            geometry = uniform_weights(len(cloud), self.config.alpha)
        return SceneInputs(scene_id=scene_id, cloud=cloud, labels=labels, geometry=geometry,
                           centroids=superpoint_centroids(cloud, labels), annotation=annotation)

    def forward(self, params: ModelParams, scene: SceneInputs) -> ForwardResult:
        """
        Run every stage in order, recording its output under the trace stage name.

        Raises:
            NonFiniteError: first stage whose output contains NaN/Inf
            ShapeError: with ``details["stage"]`` naming the failing stage
        """
        stages: "OrderedDict[str, np.ndarray]" = OrderedDict()

        def record(name: str, array: np.ndarray) -> np.ndarray:
            if not np.isfinite(array).all():
                raise NonFiniteError(f"non-finite values in stage '{name}' of scene {scene.scene_id}",
                                     details={"stage": name, "scene": scene.scene_id})
            stages[name] = array
            return array

        stage = "centroid"
        try:
            geometry = scene.geometry
            record("centroid", geometry.centroid)
            record("distances", geometry.distances)
            record("normalized", geometry.normalized)
            record("weights", geometry.weights)

            stage = "backbone"
            features, backbone_cache = _backbone(scene.cloud.as_matrix(), params)
            record(stage, features)
            stage = "gated"
            gated = record(stage, gate_features(params.gating, features) if self.config.use_dcg else features)
            stage = "recalibrated"
            recalibrated = record(stage, recalibrate(geometry, gated))
            stage = "scatter_mean"
            global_feat = record(stage, scatter_mean(scene.labels, recalibrated))
            stage = "scatter_max"
            local_feat, argmax_index = scatter_max(scene.labels, gated)
            record(stage, local_feat)
            stage = "fused"
            hybrid = fuse(global_feat, local_feat, scene.centroids)
            record(stage, hybrid.features)
            stage = "encoded"
            encoded, encoder_cache = _encoder(hybrid.features, params)
            record(stage, encoded)
            stage = "boxes"
            prediction, heads_cache = _heads(encoded, scene.centroids, params, self.config.log_size_clip)
            record(stage, np.concatenate([prediction.centers, prediction.sizes], axis=1))
            if not np.isfinite(prediction.logits).all():
                raise NonFiniteError(f"non-finite class logits in scene {scene.scene_id}",
                                     details={"stage": "logits", "scene": scene.scene_id})
        except ShapeError as e:
            e.details.setdefault("stage", stage)
            logger.error(f"Shape error in stage '{stage}' of scene {scene.scene_id}: {e.message}")
            raise

        cache = {"backbone": backbone_cache, "features": features, "gated": gated, "argmax": argmax_index,
                 "encoder": encoder_cache, "heads": heads_cache}
        return ForwardResult(prediction=prediction, stages=stages, cache=cache)

    def backward(self, params: ModelParams, scene: SceneInputs, forward: ForwardResult,
                 loss: LossResult) -> ModelParams:
        """Gradients of the scalar loss w.r.t. every parameter array."""
        grads = params.zeros_like()
        cache = forward.cache
        d_encoded = _heads_backward(cache["heads"], loss.grad_centers, loss.grad_sizes, loss.grad_logits,
                                    params, grads)
        d_hybrid = _encoder_backward(cache["encoder"], d_encoded, params, grads)
        d_recalibrated, d_gated = aggregate_backward(scene.labels, cache["argmax"], d_hybrid)
        d_gated = d_gated + scene.geometry.weights[:, None] * d_recalibrated
        if self.config.use_dcg:
            grads["gating.raw"], d_features = gate_backward(params.gating, cache["features"], d_gated)
        else:
            d_features = d_gated
        _backbone_backward(cache["backbone"], d_features, params, grads)
        return grads

    def loss(self, params: ModelParams, scene: SceneInputs, beta: float) -> Tuple[ForwardResult, LossResult]:
        if scene.annotation is None:
            raise ValidationError(f"scene {scene.scene_id} has no annotation to compute a loss against")
        forward = self.forward(params, scene)
        prediction = forward.prediction
        gt_centers, gt_sizes, gt_classes = scene.gt_arrays
        assignment = self.matcher.match_arrays(prediction.centers, prediction.sizes, prediction.logits,
                                               gt_centers, gt_sizes, gt_classes)
        return forward, total_loss(assignment, prediction, scene.annotation, beta, self.config.num_classes)

    def loss_and_grad(self, params: ModelParams, scene: SceneInputs,
                      beta: float) -> Tuple[LossResult, ModelParams, ForwardResult]:
        forward, loss = self.loss(params, scene, beta)
        return loss, self.backward(params, scene, forward, loss), forward

    def detect(self, params: ModelParams, scene: SceneInputs) -> DetectionResult:
        """Score = highest real-class probability; one detection per query."""
        prediction = self.forward(params, scene).prediction
        probs = prediction.probabilities()[:, :-1]
        classes = np.argmax(probs, axis=1)
        scores = probs[np.arange(len(classes)), classes]
        detections = [
            ScoredBox(center=tuple(c), size=tuple(s), class_id=int(k), score=float(np.clip(p, 0.0, 1.0)))
            for c, s, k, p in zip(prediction.centers, prediction.sizes, classes, scores)
        ]
        return DetectionResult.from_unsorted(scene.scene_id, detections)
