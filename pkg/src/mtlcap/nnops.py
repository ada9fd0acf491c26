"""Numerical building blocks with explicit forward/backward pairs.

Everything is float64 numpy, single sample (no batch axis); batching is done
by gradient accumulation in the trainer. Each forward returns (output,
cache) and the matching backward consumes the cache, so analytic gradients
can be checked against finite differences exactly.
"""

import math

import numpy as np


def glorot_uniform(rng, fan_in, fan_out, shape):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def sigmoid(x):
    # stable in both tails
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softmax(x):
    e = np.exp(x - np.max(x))
    return e / e.sum()


def log_softmax(x):
    shifted = x - np.max(x)
    return shifted - np.log(np.exp(shifted).sum())


def relu_forward(x):
    out = np.maximum(x, 0.0)
    return out, (x > 0.0)


def relu_backward(dout, mask):
    return dout * mask


def linear_forward(x, W, b):
    """y = x @ W + b for a 1-D or 2-D x."""
    return x @ W + b, x


def linear_backward(dout, x, W):
    if x.ndim == 1:
        dW = np.outer(x, dout)
        db = dout.copy()
        dx = dout @ W.T
    else:
        dW = x.T @ dout
        db = dout.sum(axis=0)
        dx = dout @ W.T
    return dx, dW, db


def dropout_mask(rng, shape, rate):
    """Inverted-dropout mask; multiply activations by it in training mode."""
    return (rng.random(shape) >= rate) / (1.0 - rate)


def conv3x3_forward(x, W, b):
    """3x3 convolution, stride 1, zero padding 1 (spatial size preserved).

    x: (H, W, Cin); W: (3, 3, Cin, Cout); b: (Cout) -> y: (H, W, Cout)
    """
    h, w, cin = x.shape
    cout = W.shape[3]
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    cols = np.empty((h, w, 9 * cin))
    for k in range(9):
        di, dj = divmod(k, 3)
        cols[:, :, k * cin:(k + 1) * cin] = xp[di:di + h, dj:dj + w, :]
    flat = cols.reshape(h * w, 9 * cin)
    y = (flat @ W.reshape(9 * cin, cout) + b).reshape(h, w, cout)
    return y, (flat, x.shape)


def conv3x3_backward(dout, cache, W):
    flat, x_shape = cache
    h, w, cin = x_shape
    cout = W.shape[3]
    dflat_out = dout.reshape(h * w, cout)
    dW = (flat.T @ dflat_out).reshape(3, 3, cin, cout)
    db = dflat_out.sum(axis=0)
    dcols = (dflat_out @ W.reshape(9 * cin, cout).T).reshape(h, w, 9 * cin)
    dxp = np.zeros((h + 2, w + 2, cin))
    for k in range(9):
        di, dj = divmod(k, 3)
        dxp[di:di + h, dj:dj + w, :] += dcols[:, :, k * cin:(k + 1) * cin]
    return dxp[1:1 + h, 1:1 + w, :], dW, db


def lstm_cell_forward(x, h, c, Wx, Wh, b):
    """One LSTM step. Gate layout along the last axis is [i, f, g, o].

    x: (Din), h/c: (H), Wx: (Din, 4H), Wh: (H, 4H), b: (4H)
    """
    H = h.shape[0]
    pre = x @ Wx + h @ Wh + b
    i = sigmoid(pre[:H])
    f = sigmoid(pre[H:2 * H])
    g = np.tanh(pre[2 * H:3 * H])
    o = sigmoid(pre[3 * H:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    cache = (x, h, c, i, f, g, o, tc)
    return h_new, c_new, cache


def lstm_cell_backward(dh_new, dc_new, cache, Wx, Wh):
    """Backprop one LSTM step; returns (dx, dh, dc, dWx, dWh, db)."""
    x, h, c, i, f, g, o, tc = cache
    dc_total = dc_new + dh_new * o * (1.0 - tc * tc)
    do = dh_new * tc
    di = dc_total * g
    df = dc_total * c
    dg = dc_total * i
    dc = dc_total * f
    dpre = np.concatenate([
        di * i * (1.0 - i),
        df * f * (1.0 - f),
        dg * (1.0 - g * g),
        do * o * (1.0 - o),
    ])
    dx = dpre @ Wx.T
    dh = dpre @ Wh.T
    dWx = np.outer(x, dpre)
    dWh = np.outer(h, dpre)
    return dx, dh, dc, dWx, dWh, dpre


def clip_by_global_norm(grads: dict, max_norm: float) -> dict:
    """Scale a dict of gradient arrays so their joint L2 norm is <= max_norm."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}
