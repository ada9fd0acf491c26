"""Task-specific classifier heads for object (K=100) and action (K=40)
recognition.

The annotation grid is mean-pooled over positions, passed through two
64-unit ReLU layers (dropout 0.2 in training) and a softmax output layer.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import LabelOutOfRange, ShapeMismatch
from .nnops import dropout_mask, glorot_uniform, linear_backward, linear_forward, relu_backward, relu_forward, softmax

DROPOUT_RATE = 0.2
LOG_EPS = 1e-12


@dataclass
class ClassifierHeadParams:
    fc0_W: np.ndarray  # (C, H)
    fc0_b: np.ndarray
    fc1_W: np.ndarray  # (H, H)
    fc1_b: np.ndarray
    out_W: np.ndarray  # (H, K)
    out_b: np.ndarray

    @property
    def n_classes(self):
        return self.out_W.shape[1]

    @property
    def in_dim(self):
        return self.fc0_W.shape[0]

    def tensors(self) -> dict[str, np.ndarray]:
        return {"fc0.W": self.fc0_W, "fc0.b": self.fc0_b,
                "fc1.W": self.fc1_W, "fc1.b": self.fc1_b,
                "out.W": self.out_W, "out.b": self.out_b}


def init_head(seed: int, in_dim: int, hidden: int, n_classes: int) -> ClassifierHeadParams:
    rng = np.random.default_rng(seed)
    return ClassifierHeadParams(
        fc0_W=glorot_uniform(rng, in_dim, hidden, (in_dim, hidden)),
        fc0_b=np.zeros(hidden),
        fc1_W=glorot_uniform(rng, hidden, hidden, (hidden, hidden)),
        fc1_b=np.zeros(hidden),
        out_W=glorot_uniform(rng, hidden, n_classes, (hidden, n_classes)),
        out_b=np.zeros(n_classes),
    )


def head_forward_full(grid, params: ClassifierHeadParams, training: bool = False, rng=None):
    """Returns (probs, logits, cache) for one annotation grid."""
    ann = np.asarray(grid, dtype=np.float64)
    if ann.ndim != 2 or ann.shape[1] != params.in_dim:
        raise ShapeMismatch(f"annotation grid shape {ann.shape} incompatible with head in_dim {params.in_dim}")
    L = ann.shape[0]
    pooled = ann.mean(axis=0)

    h0_pre, _ = linear_forward(pooled, params.fc0_W, params.fc0_b)
    h0, m0 = relu_forward(h0_pre)
    d0 = dropout_mask(rng, h0.shape, DROPOUT_RATE) if training else None
    h0d = h0 * d0 if training else h0

    h1_pre, _ = linear_forward(h0d, params.fc1_W, params.fc1_b)
    h1, m1 = relu_forward(h1_pre)
    d1 = dropout_mask(rng, h1.shape, DROPOUT_RATE) if training else None
    h1d = h1 * d1 if training else h1

    logits, _ = linear_forward(h1d, params.out_W, params.out_b)
    probs = softmax(logits)
    cache = (L, pooled, m0, d0, h0d, m1, d1, h1d)
    return probs, logits, cache


def head_forward(grid, params: ClassifierHeadParams, training: bool = False, rng=None) -> np.ndarray:
    """Class probabilities for one annotation grid (sums to 1)."""
    probs, _, _ = head_forward_full(grid, params, training, rng)
    return probs


def classification_loss(probs, label: int) -> float:
    """Categorical cross-entropy -log(p[label] + eps)."""
    probs = np.asarray(probs)
    if not 0 <= label < probs.shape[0]:
        raise LabelOutOfRange(label, probs.shape[0])
    return float(-math.log(probs[label] + LOG_EPS))


def head_backward(dlogits, cache, params: ClassifierHeadParams):
    """Backprop from dlogits; returns (param grads, d_annotations)."""
    L, pooled, m0, d0, h0d, m1, d1, h1d = cache
    grads = {}
    d, grads["out.W"], grads["out.b"] = linear_backward(dlogits, h1d, params.out_W)
    if d1 is not None:
        d = d * d1
    d = relu_backward(d, m1)
    d, grads["fc1.W"], grads["fc1.b"] = linear_backward(d, h0d, params.fc1_W)
    if d0 is not None:
        d = d * d0
    d = relu_backward(d, m0)
    d_pooled, grads["fc0.W"], grads["fc0.b"] = linear_backward(d, pooled, params.fc0_W)
    d_annotations = np.tile(d_pooled / L, (L, 1))
    return grads, d_annotations


def head_loss_and_grads(grid, label: int, params: ClassifierHeadParams,
                        training: bool = False, rng=None):
    """Cross-entropy loss plus gradients for one sample.

    dloss/dlogits is the closed form probs - one_hot(label).
    """
    probs, _, cache = head_forward_full(grid, params, training, rng)
    loss = classification_loss(probs, label)
    dlogits = probs.copy()
    dlogits[label] -= 1.0
    grads, d_annotations = head_backward(dlogits, cache, params)
    return loss, probs, grads, d_annotations
