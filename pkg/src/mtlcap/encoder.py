"""Shared convolutional encoder: the trunk every task head attends to.

A learned 1x1 projection maps backbone channels down to the trunk width,
followed by a fixed stack of six 3x3 same-padding convolutions with ReLU
(dropout after each stack layer in training mode). Output is the L x C
annotation grid; position i holds the annotation vector a_i.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonSquareGrid, ShapeMismatch
from .nnops import (
    conv3x3_backward,
    conv3x3_forward,
    dropout_mask,
    glorot_uniform,
    relu_backward,
    relu_forward,
)

N_STACK_LAYERS = 6
DROPOUT_RATE = 0.2


@dataclass
class SharedEncoderParams:
    proj_W: np.ndarray  # (D_in, C)
    proj_b: np.ndarray  # (C,)
    conv_W: list[np.ndarray]  # 6 x (3, 3, C, C)
    conv_b: list[np.ndarray]  # 6 x (C,)

    @property
    def in_dim(self):
        return self.proj_W.shape[0]

    @property
    def channels(self):
        return self.proj_W.shape[1]

    def tensors(self) -> dict[str, np.ndarray]:
        out = {"proj.W": self.proj_W, "proj.b": self.proj_b}
        for i in range(N_STACK_LAYERS):
            out[f"conv{i}.W"] = self.conv_W[i]
            out[f"conv{i}.b"] = self.conv_b[i]
        return out


def init_encoder(seed: int, D_in: int, channels: int = 64) -> SharedEncoderParams:
    """Glorot-uniform weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    proj_W = glorot_uniform(rng, D_in, channels, (D_in, channels))
    proj_b = np.zeros(channels)
    conv_W = [glorot_uniform(rng, 9 * channels, 9 * channels, (3, 3, channels, channels))
              for _ in range(N_STACK_LAYERS)]
    conv_b = [np.zeros(channels) for _ in range(N_STACK_LAYERS)]
    return SharedEncoderParams(proj_W, proj_b, conv_W, conv_b)


def _grid_values(grid):
    values = grid.values if hasattr(grid, "values") else grid
    return np.asarray(values, dtype=np.float64)


def encode_forward(grid, params: SharedEncoderParams, training: bool = False, rng=None):
    """Returns (annotations (L, C), cache for encode_backward)."""
    values = _grid_values(grid)
    if values.ndim != 2:
        raise ShapeMismatch(f"expected an L x D grid, got shape {values.shape}")
    L, D = values.shape
    if D != params.in_dim:
        raise ShapeMismatch(f"grid has D={D}, projection expects {params.in_dim}")
    side = math.isqrt(L)
    if side * side != L:
        raise NonSquareGrid(L)
    C = params.channels

    x = (values @ params.proj_W + params.proj_b).reshape(side, side, C)
    layer_caches = []
    for i in range(N_STACK_LAYERS):
        y, conv_cache = conv3x3_forward(x, params.conv_W[i], params.conv_b[i])
        y, relu_mask = relu_forward(y)
        mask = None
        if training:
            mask = dropout_mask(rng, y.shape, DROPOUT_RATE)
            y = y * mask
        layer_caches.append((conv_cache, relu_mask, mask))
        x = y
    cache = (values, layer_caches, (side, C))
    return x.reshape(L, C), cache


def encode(grid, params: SharedEncoderParams, training: bool = False, rng=None) -> np.ndarray:
    """Map a FeatureGrid to the L x C annotation grid."""
    annotations, _ = encode_forward(grid, params, training, rng)
    return annotations


def encode_backward(d_annotations, cache, params: SharedEncoderParams):
    """Backprop through the encoder; returns (param grads, d_grid)."""
    values, layer_caches, (side, C) = cache
    grads = {}
    d = np.asarray(d_annotations).reshape(side, side, C)
    for i in range(N_STACK_LAYERS - 1, -1, -1):
        conv_cache, relu_mask, mask = layer_caches[i]
        if mask is not None:
            d = d * mask
        d = relu_backward(d, relu_mask)
        d, dW, db = conv3x3_backward(d, conv_cache, params.conv_W[i])
        grads[f"conv{i}.W"] = dW
        grads[f"conv{i}.b"] = db
    d = d.reshape(-1, C)
    grads["proj.W"] = values.T @ d
    grads["proj.b"] = d.sum(axis=0)
    d_grid = d @ params.proj_W.T
    return grads, d_grid
