"""Dense, LSTM and conv1d kernels with hand-written backward passes.

Kernels work on batches: the leading axis of every activation is the sample
axis. All arithmetic is float64.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def dense_apply(weights, bias, x):
    """weights @ x + bias for a vector x, or row-wise for a batch (n, in)."""
    weights = np.asarray(weights, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if weights.ndim != 2 or x.shape[-1] != weights.shape[1] or np.shape(bias) != (weights.shape[0],):
        raise ShapeError(f"dense: weights {weights.shape}, bias {np.shape(bias)}, input {x.shape}")
    return x @ weights.T + bias


def dense_backward(dout, weights, x):
    """Returns (d_weights, d_bias, d_input); leading axes of x are summed over."""
    x2 = x.reshape(-1, x.shape[-1])
    d2 = dout.reshape(-1, dout.shape[-1])
    return d2.T @ x2, d2.sum(axis=0), dout @ weights


@dataclass
class LstmParams:
    """Gate weights stacked in (input, forget, candidate, output) order.

    W: (4H, in), U: (4H, H), b: (4H,). The per-gate blocks are exposed as
    views, e.g. ``W_f`` or ``U_c``.
    """

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        h4 = self.W.shape[0]
        if h4 % 4 or self.U.shape != (h4, h4 // 4) or self.b.shape != (h4,):
            raise ShapeError(f"inconsistent LSTM shapes W{self.W.shape} U{self.U.shape} b{self.b.shape}")

    @property
    def hidden(self) -> int:
        return self.U.shape[1]

    def _gate(self, arr, k):
        h = self.hidden
        return arr[k * h:(k + 1) * h]

    W_i = property(lambda s: s._gate(s.W, 0))
    W_f = property(lambda s: s._gate(s.W, 1))
    W_c = property(lambda s: s._gate(s.W, 2))
    W_o = property(lambda s: s._gate(s.W, 3))
    U_i = property(lambda s: s._gate(s.U, 0))
    U_f = property(lambda s: s._gate(s.U, 1))
    U_c = property(lambda s: s._gate(s.U, 2))
    U_o = property(lambda s: s._gate(s.U, 3))
    b_i = property(lambda s: s._gate(s.b, 0))
    b_f = property(lambda s: s._gate(s.b, 1))
    b_c = property(lambda s: s._gate(s.b, 2))
    b_o = property(lambda s: s._gate(s.b, 3))

    @classmethod
    def from_gates(cls, **g) -> "LstmParams":
        def stack(prefix):
            return np.concatenate([np.atleast_1d(np.asarray(g[f"{prefix}_{z}"], dtype=np.float64))
                                   for z in "ifco"], axis=0)
        W, U, b = stack("W"), stack("U"), stack("b")
        h = b.shape[0] // 4
        return cls(W.reshape(4 * h, -1), U.reshape(4 * h, h), b)


def lstm_cell_forward(p: LstmParams, x, h_prev, c_prev):
    """One LSTM step; returns (h, c, cache).

    f = s(W_f x + U_f h + b_f), i = s(W_i x + U_i h + b_i),
    g = tanh(W_c x + U_c h + b_c), c = f*c_prev + i*g,
    o = s(W_o x + U_o h + b_o), h = o*tanh(c)
    """
    H = p.hidden
    if x.shape[-1] != p.W.shape[1] or h_prev.shape[-1] != H or c_prev.shape[-1] != H:
        raise ShapeError(f"lstm: x {x.shape}, h {h_prev.shape}, c {c_prev.shape}, hidden {H}")
    z = x @ p.W.T + h_prev @ p.U.T + p.b
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    g = np.tanh(z[..., 2 * H:3 * H])
    o = sigmoid(z[..., 3 * H:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(c))):
        raise NonFiniteError("lstm cell produced a non-finite state")
    return h, c, (x, h_prev, c_prev, i, f, g, o, tc)


def lstm_cell_step(params: LstmParams, x_t, h_prev, c_prev):
    h, c, _ = lstm_cell_forward(params, np.asarray(x_t, dtype=np.float64),
                                np.asarray(h_prev, dtype=np.float64),
                                np.asarray(c_prev, dtype=np.float64))
    return h, c


def lstm_cell_backward(p: LstmParams, dh, dc, cache):
    """Backward through one step. Returns (dx, dh_prev, dc_prev, dW, dU, db)."""
    x, h_prev, c_prev, i, f, g, o, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc ** 2)
    di = dc * g
    df = dc * c_prev
    dg = dc * i
    dc_prev = dc * f
    dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g ** 2), do * o * (1 - o)],
                        axis=-1)
    dW = dz.reshape(-1, dz.shape[-1]).T @ x.reshape(-1, x.shape[-1])
    dU = dz.reshape(-1, dz.shape[-1]).T @ h_prev.reshape(-1, h_prev.shape[-1])
    db = dz.reshape(-1, dz.shape[-1]).sum(axis=0)
    return dz @ p.W, dz @ p.U, dc_prev, dW, dU, db


def lstm_forward(p: LstmParams, xs):
    """Run over xs of shape (n, T, in) from zero state; returns (h_T, caches)."""
    n = xs.shape[0]
    h = np.zeros((n, p.hidden))
    c = np.zeros((n, p.hidden))
    caches = []
    for t in range(xs.shape[1]):
        h, c, cache = lstm_cell_forward(p, xs[:, t], h, c)
        caches.append(cache)
    return h, caches


def lstm_backward(p: LstmParams, dh_last, caches):
    """Backpropagation through time from a gradient on the final hidden state."""
    dW, dU, db = np.zeros_like(p.W), np.zeros_like(p.U), np.zeros_like(p.b)
    dxs = [None] * len(caches)
    dh, dc = dh_last, np.zeros_like(dh_last)
    for t in reversed(range(len(caches))):
        dx, dh, dc, gW, gU, gb = lstm_cell_backward(p, dh, dc, caches[t])
        dW += gW
        dU += gU
        db += gb
        dxs[t] = dx
    return np.stack(dxs, axis=1), dW, dU, db


def conv_output_len(length: int, kernel_width: int, pool_width: int) -> int:
    """Pooled length for valid conv then non-overlapping pooling with a partial tail."""
    valid = length - kernel_width + 1
    return -(-valid // pool_width)


def conv1d_relu_pool_forward(kernels, bias, x, pool_width: int = 4):
    """Valid 1-D convolution over the last axis, ReLU, then max-pool.

    kernels: (F, k); x: (n, L) single channel. Output (n, F, P) with
    P = ceil((L - k + 1) / pool_width); the tail window may be shorter.
    """
    nf, k = kernels.shape
    if x.shape[-1] < k:
        raise ShapeError(f"input length {x.shape[-1]} shorter than kernel width {k}")
    windows = sliding_window_view(x, k, axis=-1)  # (n, Lc, k)
    conv = np.einsum("nlk,fk->nfl", windows, kernels) + bias[None, :, None]
    act = np.maximum(conv, 0.0)
    n, _, lc = act.shape
    P = -(-lc // pool_width)
    padded = np.full((n, nf, P * pool_width), -np.inf)
    padded[..., :lc] = act
    blocks = padded.reshape(n, nf, P, pool_width)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, (x, kernels, conv, arg, lc)


def conv1d_relu_pool_backward(dout, cache, pool_width: int = 4):
    """Returns (d_kernels, d_bias, d_input)."""
    x, kernels, conv, arg, lc = cache
    n, nf, P = dout.shape
    k = kernels.shape[1]
    dact = np.zeros((n, nf, P * pool_width))
    idx = np.arange(P)[None, None, :] * pool_width + arg
    np.put_along_axis(dact, idx, dout, axis=-1)
    dconv = dact[..., :lc] * (conv > 0)
    windows = sliding_window_view(x, k, axis=-1)
    dk = np.einsum("nfl,nlk->fk", dconv, windows)
    db = dconv.sum(axis=(0, 2))
    dx = np.zeros_like(x, dtype=np.float64)
    for j in range(k):
        dx[:, j:j + lc] += np.einsum("nfl,f->nl", dconv, kernels[:, j])
    return dk, db, dx


def conv1d_relu_pool(kernels, bias, x, pool_width: int = 4):
    out, _ = conv1d_relu_pool_forward(np.asarray(kernels, dtype=np.float64),
                                      np.asarray(bias, dtype=np.float64),
                                      np.atleast_2d(np.asarray(x, dtype=np.float64)), pool_width)
    return out if np.ndim(x) > 1 else out[0]


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(dout, x):
    return dout * (x > 0)


def loss(pred, target, kind: str = "mse") -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    if kind == "mse":
        return float(np.mean((pred - target) ** 2))
    if kind == "bce":
        if np.any(pred <= 0) or np.any(pred >= 1):
            raise ValueError("bce needs predictions strictly inside (0, 1)")
        return float(-np.mean(target * np.log(pred) + (1 - target) * np.log1p(-pred)))
    raise ValueError(f"unknown loss {kind!r}")


def bce_with_logits(logits, target):
    """Mean binary cross-entropy from logits and its gradient w.r.t. the logits."""
    value = np.mean(np.maximum(logits, 0) - logits * target + np.log1p(np.exp(-np.abs(logits))))
    return float(value), (sigmoid(logits) - target) / logits.size


def mse_with_grad(pred, target):
    diff = pred - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size
