"""
Dynamic channel gating.

One trainable raw weight per channel, shared by all points. The gate is
sigmoid(raw) in (0, 1), applied at use time so the stored parameter is
unconstrained:

    D_f[i, c] = sigmoid(raw[c]) * p'[i, c]
"""

import logging
from typing import Tuple

import numpy as np

from geodet.core.exceptions import ConfigurationError, ShapeError
from geodet.models.network_models import GATING_INIT, GatingParams
from geodet.models.pointcloud_models import check_feature_matrix

logger = logging.getLogger(__name__)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    exp_x = np.exp(x[~positive])
    out[~positive] = exp_x / (1.0 + exp_x)
    return out


def init_gating(channels: int) -> GatingParams:
    """Raw gate vector with every entry at 0.1."""
    if channels < 1:
        raise ConfigurationError(f"gating needs at least one channel, got {channels}",
                                 details={"channels": channels})
    return GatingParams(raw_weights=np.full(channels, GATING_INIT))


def _check_width(params: GatingParams, features: np.ndarray) -> None:
    if features.shape[1] != params.channels:
        raise ShapeError(f"gate has {params.channels} channels but features have {features.shape[1]}",
                         expected=params.channels, actual=features.shape[1])


def gate_features(params: GatingParams, features: np.ndarray) -> np.ndarray:
    """Scale every channel by its sigmoid gate."""
    features = check_feature_matrix("features", features)
    _check_width(params, features)
    return features * sigmoid(params.raw_weights)[None, :]


def gate_backward(params: GatingParams, features: np.ndarray,
                  upstream_grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gradients of a scalar loss through the gate.

    Returns:
        (grad_raw, grad_features) with grad_raw[c] = s(1-s) * sum_i f[i,c] * u[i,c]
        and grad_features = s * u.
    """
    features = check_feature_matrix("features", features)
    _check_width(params, features)
    upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
    if upstream_grad.shape != features.shape:
        raise ShapeError("upstream gradient does not match the gated features",
                         expected=list(features.shape), actual=list(upstream_grad.shape))
    gate = sigmoid(params.raw_weights)
    grad_features = upstream_grad * gate[None, :]
    grad_raw = gate * (1.0 - gate) * np.einsum("ic,ic->c", features, upstream_grad)
    return grad_raw, grad_features
