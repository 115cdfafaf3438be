"""Joint output construction, decision rules and the multi-task loss.

Class indices are 0..4 with 0 = negative (no kinship) and m = KinType m.
Head outputs are softmax pairs ordered (negative, positive). The decision
functions accept a single example or a leading batch axis, are pure, and break
every argmax tie toward the lowest class index.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import tensor as T

NUM_CLASSES = 5
NUM_HEADS = 4


@dataclass
class LossWeights:
    verification_class_weights: list = field(default_factory=lambda: [0.25, 8.0])
    identification_class_weights: list = field(default_factory=lambda: [0.18, 2.0, 2.0, 2.0, 2.0])
    lambdas: list = field(default_factory=lambda: [1.0, 1.0, 1.0, 1.0, 10.0])
    multiclass_class_weights: list = field(default_factory=lambda: [0.1, 1.0, 1.0, 1.0, 1.0])
    # verification models trained on the balanced per-type sets
    independent_class_weights: list = field(default_factory=lambda: [1.0, 1.0])

    def validate(self):
        checks = {
            "verification_class_weights": 2,
            "identification_class_weights": NUM_CLASSES,
            "lambdas": NUM_CLASSES,
            "multiclass_class_weights": NUM_CLASSES,
            "independent_class_weights": 2,
        }
        for name, length in checks.items():
            values = getattr(self, name)
            if len(values) != length:
                raise ValueError(f"{name} needs {length} entries, got {values}")
            # lambda_5 may be zero to switch the identification term off
            if name == "lambdas":
                if any(v < 0 for v in values) or any(v <= 0 for v in values[:4]):
                    raise ValueError(f"lambdas must be positive (lambda_5 >= 0), got {values}")
            elif any(v <= 0 for v in values):
                raise ValueError(f"{name} must be positive, got {values}")
        return self


def _heads_array(heads):
    arr = np.asarray(heads, dtype=np.float64)
    if arr.shape[-2:] != (NUM_HEADS, 2):
        raise ValueError(f"expected four (negative, positive) head outputs, got shape {arr.shape}")
    return arr


def build_joint_output(heads):
    """Five-way joint vector from four head outputs.

    Entry 0 is the smallest negative probability over the heads; entry m is
    head m's positive probability.
    """
    h = _heads_array(heads)
    return np.concatenate([h[..., :, 0].min(axis=-1, keepdims=True), h[..., :, 1]], axis=-1)


def softmax_np(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    if np.isnan(x).any():
        raise ValueError("softmax: NaN in input")
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def identify_class(o):
    """Class with the largest softmax(o) entry.

    Softmax is strictly monotone, so this is the argmax of ``o`` itself; taking
    it on ``o`` avoids exp() rounding two distinct entries to the same value.
    """
    o = np.asarray(o, dtype=np.float64)
    if o.shape[-1] != NUM_CLASSES:
        raise ValueError(f"joint output must have {NUM_CLASSES} entries, got shape {o.shape}")
    return np.argmax(o, axis=-1)


def ensemble_decision(heads):
    """Negative when every positive probability is below 0.5, else the most confident head."""
    pos = _heads_array(heads)[..., 1]
    best = np.argmax(pos, axis=-1)
    top = np.take_along_axis(pos, best[..., None], axis=-1)[..., 0]
    return np.where(top < 0.5, 0, best + 1)


def ensemble_distribution(heads):
    """Five-way distribution ``[1 - max_n p_n, p_1..p_4]`` renormalised."""
    pos = _heads_array(heads)[..., 1]
    raw = np.concatenate([1.0 - pos.max(axis=-1, keepdims=True), pos], axis=-1)
    return raw / raw.sum(axis=-1, keepdims=True)


def combined_distribution(heads, o=None):
    if o is None:
        o = build_joint_output(heads)
    return 0.5 * (softmax_np(o) + ensemble_distribution(heads))


def combined_decision(heads, o=None):
    """Average of the identification and ensemble distributions, then argmax."""
    return np.argmax(combined_distribution(heads, o), axis=-1)


# differentiable counterparts used during training

def joint_output_tensor(head_probs):
    """Tensor version of :func:`build_joint_output` for a batch.

    ``head_probs`` is a list of four (N, 2) tensors. The min routes its
    gradient to the first minimising head.
    """
    if len(head_probs) != NUM_HEADS:
        raise ValueError(f"need {NUM_HEADS} heads, got {len(head_probs)}")
    negs = T.stack([p[:, 0] for p in head_probs], axis=1)
    poss = [T.reshape(p[:, 1], (-1, 1)) for p in head_probs]
    return T.concat([T.reshape(T.tmin(negs, axis=1), (-1, 1))] + poss, axis=1)


def binary_labels(labels, head):
    """Head ``head`` (1..4) sees class 1 for its own kin type and 0 otherwise."""
    return (np.asarray(labels) == head).astype(np.int64)


def _check_labels(labels):
    labels = np.atleast_1d(np.asarray(labels))
    if labels.dtype.kind not in "iu" or labels.min() < 0 or labels.max() >= NUM_CLASSES:
        raise ValueError(f"labels must be integers in 0..{NUM_CLASSES - 1}, got {labels}")
    return labels.astype(np.int64)


def joint_loss(head_probs, o, labels, weights, return_terms=False):
    """Weighted sum of four verification losses and the identification loss.

    ``head_probs``: four (N, 2) tensors (or (2,) for one sample); ``o``: (N, 5)
    joint output tensor; ``labels``: class indices. Terms with a zero lambda are
    not built, so they contribute no gradient.
    """
    labels = _check_labels(labels)
    single = head_probs[0].ndim == 1
    if single:
        head_probs = [T.reshape(p, (1, 2)) for p in head_probs]
        o = T.reshape(o, (1, NUM_CLASSES))
    lam = weights.lambdas
    terms = {}
    total = None
    for n in range(NUM_HEADS):
        term = T.weighted_cross_entropy(head_probs[n], binary_labels(labels, n + 1), weights.verification_class_weights)
        terms[f"verification_{n + 1}"] = term
        part = term * lam[n]
        total = part if total is None else total + part
    if lam[4] != 0:
        ident = T.weighted_cross_entropy(T.softmax(o, axis=-1), labels, weights.identification_class_weights)
        terms["identification"] = ident
        total = total + ident * lam[4]
    if return_terms:
        return total, terms
    return total
