"""Squeeze-and-excitation gating for feature maps and for capsule outputs.

The SE block learns a per-channel gate in (0, 1): global-average-pool the
map, squeeze through a bottleneck dense layer with ReLU, restore width with
a second dense layer, sigmoid, and rescale the input channels.  The capsule
variant applies the same squeeze/excite machinery across classes, gating
both the class poses and their scalar agreements before activations are
recomputed.

Each differentiable function has a ``*_reference`` twin: a straight-line
numpy implementation kept deliberately independent of the tensor engine so
the two can be checked against each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import ops
from .errors import ConfigError, ShapeError
from .tensor import Tensor, as_tensor


def default_se_ratio(channels: int) -> int:
    """Reduction ratio used when a config does not pin one.

    Wide maps (128 channels) reduce by 8; otherwise the largest divisor of
    ``channels`` not exceeding 4 keeps the bottleneck at least one unit wide
    for small channel counts and class counts.
    """
    if channels == 128:
        return 8
    for ratio in (4, 3, 2):
        if channels % ratio == 0:
            return ratio
    return 1


def validate_se_ratio(channels: int, ratio: int) -> int:
    if ratio < 1 or channels % ratio != 0:
        raise ConfigError(
            f"SE reduction ratio {ratio} must divide the channel count {channels}")
    return ratio


def se_block(x, w1, b1, w2, b2) -> Tensor:
    """Channel-gated feature map: x * sigmoid(W2 relu(W1 avgpool(x) + b1) + b2).

    ``x`` is [N,H,W,C]; ``w1`` is [C, C/r], ``w2`` is [C/r, C].  Gates lie
    strictly inside (0, 1), so the output never exceeds the input in
    magnitude.
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"se_block input must be [N,H,W,C], got shape {x.shape}")
    c = x.shape[-1]
    w1, w2 = as_tensor(w1), as_tensor(w2)
    if w1.shape[0] != c or w2.shape[1] != c or w1.shape[1] != w2.shape[0]:
        raise ShapeError(
            f"SE weights {w1.shape} and {w2.shape} do not form a {c}->hidden->{c} bottleneck")
    pooled = ops.global_avg_pool(x)
    hidden = ops.relu(ops.dense(pooled, w1, b1))
    gate = ops.sigmoid(ops.dense(hidden, w2, b2))
    n = x.shape[0]
    return ops.multiply(x, ops.reshape(gate, (n, 1, 1, c)))


def se_block_reference(x: np.ndarray, w1: np.ndarray, b1: np.ndarray,
                       w2: np.ndarray, b2: np.ndarray) -> np.ndarray:
    """Straight-line numpy oracle for :func:`se_block` (no tensor engine)."""
    x = np.asarray(x, dtype=np.float64)
    pooled = x.mean(axis=(1, 2))
    hidden = pooled @ np.asarray(w1, dtype=np.float64) + np.asarray(b1, dtype=np.float64)
    hidden = np.maximum(hidden, 0.0)
    gate = expit(hidden @ np.asarray(w2, dtype=np.float64) + np.asarray(b2, dtype=np.float64))
    return x * gate[:, None, None, :]


@dataclass
class AttentionResult:
    """Capsule outputs after class-wise gating."""

    activations: Tensor  # [B,J] (or [J]); softmax of gated agreements
    poses: Tensor        # gated poses, same shape as input poses
    gates: Tensor        # [B,J] (or [J]) in (0,1)


def attention_capsules(poses, agreements, w1, b1, w2, b2) -> AttentionResult:
    """Gate class capsules by their own pooled poses.

    ``poses`` is [B,J,k] (a single [J,k] instance is handled too) and
    ``agreements`` is the matching [B,J].  The pose matrix is mean-pooled
    over the feature axis, squeezed/excited across classes to a gate in
    (0,1) per class, and both poses and agreements are rescaled by the
    gate; activations are the softmax of the gated agreements.
    """
    poses, agreements = as_tensor(poses), as_tensor(agreements)
    squeeze = poses.ndim == 2
    if squeeze:
        poses = ops.reshape(poses, (1,) + poses.shape)
        agreements = ops.reshape(agreements, (1,) + agreements.shape)
    if poses.ndim != 3:
        raise ShapeError(f"attention_capsules poses must be [B,J,k], got shape {poses.shape}")
    b_, j, k = poses.shape
    if agreements.shape != (b_, j):
        raise ShapeError(
            f"agreements shape {agreements.shape} does not match poses {poses.shape}")
    if j < 2:
        raise ConfigError(f"attention over classes needs at least 2 classes, got {j}")

    pooled = ops.reduce_mean(poses, axis=-1)            # [B,J]
    hidden = ops.relu(ops.dense(pooled, w1, b1))        # [B,J/r]
    gate = ops.sigmoid(ops.dense(hidden, w2, b2))       # [B,J]
    gated_poses = ops.multiply(poses, ops.reshape(gate, (b_, j, 1)))
    gated_agree = ops.multiply(gate, agreements)
    activations = ops.softmax(gated_agree, axis=-1)
    if squeeze:
        activations = ops.reshape(activations, (j,))
        gated_poses = ops.reshape(gated_poses, (j, k))
        gate = ops.reshape(gate, (j,))
    return AttentionResult(activations=activations, poses=gated_poses, gates=gate)


def attention_capsules_reference(poses: np.ndarray, agreements: np.ndarray,
                                 w1: np.ndarray, b1: np.ndarray,
                                 w2: np.ndarray, b2: np.ndarray):
    """Straight-line numpy oracle for :func:`attention_capsules`."""
    poses = np.asarray(poses, dtype=np.float64)
    agreements = np.asarray(agreements, dtype=np.float64)
    squeeze = poses.ndim == 2
    if squeeze:
        poses = poses[None]
        agreements = agreements[None]
    pooled = poses.mean(axis=-1)
    hidden = np.maximum(pooled @ np.asarray(w1, np.float64) + np.asarray(b1, np.float64), 0.0)
    gate = expit(hidden @ np.asarray(w2, np.float64) + np.asarray(b2, np.float64))
    gated_poses = poses * gate[..., None]
    logits = gate * agreements
    shifted = np.exp(logits - logits.max(axis=-1, keepdims=True))
    activations = shifted / shifted.sum(axis=-1, keepdims=True)
    if squeeze:
        return activations[0], gated_poses[0], gate[0]
    return activations, gated_poses, gate
