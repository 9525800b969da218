"""Dynamic persona-aware fusion.

Cross-attention produces per-prefix-position encodings of the user persona,
the robot persona and the dialogue context, plus a causal self-encoding of
the prefix. A small head predicts from the pooled context encoding whether
the upcoming response expresses the user's persona, the robot's, or none,
and those probabilities weight the fused encoding

    fused = alpha * O_user + beta * O_robot + (gamma + 1) * O_context + O_prefix

with alpha + beta + gamma = 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import tensor as T
from .backbone import multi_head_attention
from .embedding import INIT_SCALE
from .errors import ContractError, ShapeMismatchError


class WeightMode(Enum):
    AUTO = "auto"
    ALPHA1 = "alpha1"
    BETA1 = "beta1"
    GAMMA1 = "gamma1"


PREDICTED = "predicted"
OVERRIDE = "override"


@dataclass(frozen=True)
class FusionWeights:
    """The (alpha, beta, gamma) persona-aware weights and their provenance."""

    alpha: float
    beta: float
    gamma: float
    source: str

    def __post_init__(self):
        for v in (self.alpha, self.beta, self.gamma):
            if not (0.0 <= v <= 1.0):
                raise ContractError(f"fusion weight {v} outside [0, 1]")
        if abs(self.alpha + self.beta + self.gamma - 1.0) > 1e-9:
            raise ContractError(f"fusion weights must sum to 1, got {self.alpha + self.beta + self.gamma}")

    def as_array(self):
        return np.array([self.alpha, self.beta, self.gamma])


@dataclass
class FusionHead:
    """Two-layer perceptron (tanh hidden, width d) over the pooled context encoding."""

    w1: T.Tensor
    b1: T.Tensor
    w2: T.Tensor
    b2: T.Tensor

    @staticmethod
    def create(rng, d):
        return FusionHead(
            T.parameter(rng.normal(0.0, INIT_SCALE, size=(d, d))),
            T.parameter(np.zeros(d)),
            T.parameter(rng.normal(0.0, INIT_SCALE, size=(d, 3))),
            T.parameter(np.zeros(3)),
        )

    def named_parameters(self):
        return [
            ("fusion_head.w1", self.w1), ("fusion_head.b1", self.b1),
            ("fusion_head.w2", self.w2), ("fusion_head.b2", self.b2),
        ]


@dataclass
class PresencePrediction:
    """Presence logits/probabilities for one prefix; probs stay on the tape."""

    logits: T.Tensor  # [1, 3]
    probs: T.Tensor   # [1, 3]

    @property
    def weights(self):
        a, b, g = (float(v) for v in self.probs.values[0])
        return FusionWeights(a, b, g, PREDICTED)


def compute_encodings(e_prev, e_user, e_robot, e_context, masks, heads, cross):
    """The four fusion attention outputs, all with the prefix's length.

    ``masks`` maps "user"/"robot"/"context" to key pad masks; the prefix is
    never padded. The prefix self-encoding is causally masked.
    """
    d = e_prev.shape[1]
    for name, enc in (("user", e_user), ("robot", e_robot), ("context", e_context)):
        if enc.shape[1] != d:
            raise ShapeMismatchError(f"{name} encoding width {enc.shape[1]} != prefix width {d}")
    prefix_mask = np.ones(e_prev.shape[0], dtype=bool)
    o_user = multi_head_attention(e_prev, e_user, e_user, masks["user"], False, heads, cross)
    o_robot = multi_head_attention(e_prev, e_robot, e_robot, masks["robot"], False, heads, cross)
    o_context = multi_head_attention(e_prev, e_context, e_context, masks["context"], False, heads, cross)
    o_prev = multi_head_attention(e_prev, e_prev, e_prev, prefix_mask, True, heads, cross)
    return o_prev, o_user, o_robot, o_context


def predict_presence(o_context, mask, head, pooling="mean"):
    """Pool the context encoding, run the head, softmax to (alpha, beta, gamma)."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ContractError("predict_presence: every position is padded")
    pool = T.mean_rows if pooling == "mean" else T.max_rows
    pooled = pool(o_context, mask)
    hidden = T.tanh(T.add(T.matmul(pooled, head.w1), head.b1))
    logits = T.add(T.matmul(hidden, head.w2), head.b2)
    return PresencePrediction(logits, T.softmax(logits, axis=-1))


def override_weights(mode):
    """Fixed weights for the override modes; AUTO has no fixed weights."""
    if mode == WeightMode.ALPHA1:
        return FusionWeights(1.0, 0.0, 0.0, OVERRIDE)
    if mode == WeightMode.BETA1:
        return FusionWeights(0.0, 1.0, 0.0, OVERRIDE)
    if mode == WeightMode.GAMMA1:
        return FusionWeights(0.0, 0.0, 1.0, OVERRIDE)
    if mode == WeightMode.AUTO:
        return None
    raise ContractError(f"unknown weight mode {mode!r}")


def fuse(o_user, o_robot, o_context, o_prev, weights):
    """fused = alpha*O_user + beta*O_robot + (gamma+1)*O_context + O_prev.

    ``weights`` is either a FusionWeights (fixed values) or a [1, 3] probs
    tensor, in which case the coefficients stay differentiable.
    """
    for name, enc in (("robot", o_robot), ("context", o_context), ("prefix", o_prev)):
        if enc.shape != o_user.shape:
            raise ShapeMismatchError(f"fuse: {name} encoding {enc.shape} != {o_user.shape}")
    if isinstance(weights, FusionWeights):
        out = T.scale(o_user, weights.alpha)
        out = T.add(out, T.scale(o_robot, weights.beta))
        out = T.add(out, T.scale(o_context, weights.gamma + 1.0))
        return T.add(out, o_prev)
    if weights.shape != (1, 3):
        raise ShapeMismatchError(f"fuse: weights must be [1, 3], got {weights.shape}")
    alpha = T.slice_cols(weights, 0, 1)
    beta = T.slice_cols(weights, 1, 2)
    gamma1 = T.shift(T.slice_cols(weights, 2, 3), 1.0)
    out = T.mul(o_user, alpha)
    out = T.add(out, T.mul(o_robot, beta))
    out = T.add(out, T.mul(o_context, gamma1))
    return T.add(out, o_prev)
