"""Layers with hand-written forward and backward passes.

Every layer works on batched arrays: convolutional layers take (B, T, L, C),
recurrent and dense layers take (B, T, D). ``forward`` caches what
``backward`` needs; ``backward(dout)`` fills ``self.grads`` and returns the
gradient with respect to the layer input.
"""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import NumericError, ValidationError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0, e) / (1.0 + e)


def glorot(rng, fan_in, fan_out, shape, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def zero_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}


# ---------------------------------------------------------------------------
# convolution


def conv2d_forward(x, kernels_, bias):
    """'Same' 2-D cross-correlation over (time, feature) axes.

    x: (B, T, L, C) or (T, L, C); kernels_: (kh, kw, C, F); bias: (F,).
    """
    single = x.ndim == 3
    if single:
        x = x[None]
    kh, kw, C, F = kernels_.shape
    if x.shape[-1] != C:
        raise ValidationError(f"input has {x.shape[-1]} layers, kernels expect {C}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValidationError(f"kernel size {kh}x{kw} must be odd for same padding")
    B, T, L, _ = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    out = np.empty((B, T, L, F), dtype=np.result_type(x, kernels_))
    out[...] = bias
    flat = out.reshape(-1, F)
    for i in range(kh):
        for j in range(kw):
            patch = np.ascontiguousarray(xp[:, i:i + T, j:j + L, :]).reshape(-1, C)
            flat += patch @ kernels_[i, j]
    return out[0] if single else out


def conv2d_backward(x, kernels_, dout):
    """Gradients of :func:`conv2d_forward` w.r.t. input, kernels and bias."""
    kh, kw, C, F = kernels_.shape
    B, T, L, _ = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    dxp = np.zeros_like(xp)
    dflat = dout.reshape(-1, F)
    dk = np.empty_like(kernels_)
    for i in range(kh):
        for j in range(kw):
            patch = np.ascontiguousarray(xp[:, i:i + T, j:j + L, :]).reshape(-1, C)
            dk[i, j] = patch.T @ dflat
            dxp[:, i:i + T, j:j + L, :] += (dflat @ kernels_[i, j].T).reshape(B, T, L, C)
    return dxp[:, ph:ph + T, pw:pw + L, :], dk, dflat.sum(axis=0)


class Conv2D(Layer):
    def __init__(self, in_ch, filters, kernel=(3, 3), rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        kh, kw = kernel
        self.params["W"] = glorot(rng, kh * kw * in_ch, kh * kw * filters, (kh, kw, in_ch, filters), dtype)
        self.params["b"] = np.zeros(filters, dtype=dtype)

    def forward(self, x, train=False, rng=None):
        self._x = x
        return conv2d_forward(x, self.params["W"], self.params["b"])

    def backward(self, dout):
        dx, dW, db = conv2d_backward(self._x, self.params["W"], dout)
        self.grads = {"W": dW, "b": db}
        return dx


# ---------------------------------------------------------------------------
# batch normalization over all axes but the last


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train, momentum=BN_MOMENTUM, eps=BN_EPS):
    """Returns ``(out, cache, new_running_mean, new_running_var)``."""
    axes = tuple(range(x.ndim - 1))
    if train:
        if x.size == 0:
            raise ValidationError("batch norm needs a non-empty batch")
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean = momentum * running_mean + (1 - momentum) * mu
        running_var = momentum * running_var + (1 - momentum) * var
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return gamma * xhat + beta, (xhat, inv, gamma, train), running_mean, running_var


def batchnorm_backward(dout, cache):
    xhat, inv, gamma, train = cache
    axes = tuple(range(dout.ndim - 1))
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * gamma
    if not train:
        return dxhat * inv, dgamma, dbeta
    m = dout.size // dout.shape[-1]
    dx = inv / m * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return dx, dgamma, dbeta


class BatchNorm(Layer):
    def __init__(self, channels, dtype=np.float32):
        super().__init__()
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)

    def forward(self, x, train=False, rng=None):
        out, self._cache, rm, rv = batchnorm_forward(
            x, self.params["gamma"], self.params["beta"],
            self.buffers["running_mean"], self.buffers["running_var"], train,
        )
        if train:
            self.buffers["running_mean"][...] = rm
            self.buffers["running_var"][...] = rv
        return out

    def backward(self, dout):
        dx, dg, db = batchnorm_backward(dout, self._cache)
        self.grads = {"gamma": dg, "beta": db}
        return dx


class ReLU(Layer):
    def forward(self, x, train=False, rng=None):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


def maxpool_feature_axis(x, p):
    """Max over non-overlapping width-``p`` windows of the feature axis (axis -2)."""
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.shape[2] % p:
        raise ValidationError(f"pool factor {p} does not divide feature length {x.shape[2]}")
    out, _ = kernels.maxpool_forward(np.ascontiguousarray(x), p)
    return out[0] if single else out


class MaxPoolFeature(Layer):
    def __init__(self, p):
        super().__init__()
        self.p = p

    def forward(self, x, train=False, rng=None):
        if self.p == 1:
            return x
        if x.shape[2] % self.p:
            raise ValidationError(f"pool factor {self.p} does not divide feature length {x.shape[2]}")
        out, self._arg = kernels.maxpool_forward(np.ascontiguousarray(x), self.p)
        return out

    def backward(self, dout):
        if self.p == 1:
            return dout
        return kernels.maxpool_backward(np.ascontiguousarray(dout), self._arg, self.p)


class Dropout(Layer):
    """Inverted dropout; identity at inference."""

    def __init__(self, rate):
        super().__init__()
        if not 0 <= rate < 1:
            raise ValidationError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._mask = None

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask


# ---------------------------------------------------------------------------
# LSTM


def lstm_forward(x, W, U, b, reverse=False):
    """Single-direction LSTM over (B, T, D); gate order i, f, g, o.

    Returns ``(h_seq, cache)`` with ``h_seq`` shaped (B, T, H) and aligned to
    the input time index even when ``reverse`` is set.
    """
    B, T, D = x.shape
    H = U.shape[0]
    if W.shape != (D, 4 * H):
        raise ValidationError(f"input width {D} does not match weights {W.shape}")
    xs = x[:, ::-1] if reverse else x
    proj = (xs.reshape(-1, D) @ W).reshape(B, T, 4 * H) + b
    dt = np.result_type(x, W)
    hs = np.zeros((B, T + 1, H), dtype=dt)
    cs = np.zeros((B, T + 1, H), dtype=dt)
    gates = np.empty((B, T, 4 * H), dtype=dt)
    for t in range(T):
        a = proj[:, t] + hs[:, t] @ U
        g = gates[:, t]
        g[:, : 2 * H] = sigmoid(a[:, : 2 * H])
        g[:, 2 * H:3 * H] = np.tanh(a[:, 2 * H:3 * H])
        g[:, 3 * H:] = sigmoid(a[:, 3 * H:])
        cs[:, t + 1] = g[:, H:2 * H] * cs[:, t] + g[:, :H] * g[:, 2 * H:3 * H]
        hs[:, t + 1] = g[:, 3 * H:] * np.tanh(cs[:, t + 1])
        if not np.isfinite(hs[:, t + 1]).all():
            frame = T - 1 - t if reverse else t
            raise NumericError(f"non-finite LSTM activation at frame {frame}")
    out = hs[:, 1:]
    return (out[:, ::-1] if reverse else out), (xs, hs, cs, gates, reverse)


def lstm_backward(dh_out, W, U, cache):
    """Backpropagation through time for :func:`lstm_forward`."""
    xs, hs, cs, gates, reverse = cache
    B, T, D = xs.shape
    H = U.shape[0]
    dh_seq = dh_out[:, ::-1] if reverse else dh_out
    da = np.empty_like(gates)
    dh_next = np.zeros((B, H), dtype=gates.dtype)
    dc_next = np.zeros((B, H), dtype=gates.dtype)
    for t in range(T - 1, -1, -1):
        g = gates[:, t]
        i, f, gg, o = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        tc = np.tanh(cs[:, t + 1])
        dh = dh_seq[:, t] + dh_next
        dc = dc_next + dh * o * (1 - tc * tc)
        a = da[:, t]
        a[:, :H] = dc * gg * i * (1 - i)
        a[:, H:2 * H] = dc * cs[:, t] * f * (1 - f)
        a[:, 2 * H:3 * H] = dc * i * (1 - gg * gg)
        a[:, 3 * H:] = dh * tc * o * (1 - o)
        dh_next = a @ U.T
        dc_next = dc * f
    da2 = da.reshape(-1, 4 * H)
    dW = xs.reshape(-1, D).T @ da2
    dU = hs[:, :-1].reshape(-1, H).T @ da2
    db = da2.sum(axis=0)
    dxs = (da2 @ W.T).reshape(B, T, D)
    return (dxs[:, ::-1] if reverse else dxs), dW, dU, db


class BiLSTM(Layer):
    def __init__(self, in_dim, hidden, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.hidden = hidden
        for d in ("fwd", "bwd"):
            self.params[f"{d}.W"] = glorot(rng, in_dim, 4 * hidden, (in_dim, 4 * hidden), dtype)
            self.params[f"{d}.U"] = glorot(rng, hidden, 4 * hidden, (hidden, 4 * hidden), dtype)
            bias = np.zeros(4 * hidden, dtype=dtype)
            bias[hidden:2 * hidden] = 1.0  # forget gate
            self.params[f"{d}.b"] = bias

    def forward(self, x, train=False, rng=None):
        p = self.params
        hf, self._cf = lstm_forward(x, p["fwd.W"], p["fwd.U"], p["fwd.b"])
        hb, self._cb = lstm_forward(x, p["bwd.W"], p["bwd.U"], p["bwd.b"], reverse=True)
        return np.concatenate([hf, hb], axis=-1)

    def backward(self, dout):
        p, H = self.params, self.hidden
        dxf, dWf, dUf, dbf = lstm_backward(dout[..., :H], p["fwd.W"], p["fwd.U"], self._cf)
        dxb, dWb, dUb, dbb = lstm_backward(dout[..., H:], p["bwd.W"], p["bwd.U"], self._cb)
        self.grads = {"fwd.W": dWf, "fwd.U": dUf, "fwd.b": dbf, "bwd.W": dWb, "bwd.U": dUb, "bwd.b": dbb}
        return dxf + dxb


def bilstm_forward(x, params, dropout_mask=None):
    """Functional BiLSTM over a single (T, D) or batched (B, T, D) sequence.

    ``params`` holds ``fwd.W``, ``fwd.U``, ``fwd.b`` and the ``bwd.*``
    counterparts; ``dropout_mask`` (same shape as the output) multiplies the
    result when given.
    """
    single = x.ndim == 2
    if single:
        x = x[None]
    hf, _ = lstm_forward(x, params["fwd.W"], params["fwd.U"], params["fwd.b"])
    hb, _ = lstm_forward(x, params["bwd.W"], params["bwd.U"], params["bwd.b"], reverse=True)
    out = np.concatenate([hf, hb], axis=-1)
    if dropout_mask is not None:
        out = out * (dropout_mask[None] if single else dropout_mask)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# output layer and loss


def output_layer(x, weights, bias):
    """Time-distributed affine map followed by an element-wise sigmoid."""
    if x.shape[-1] != weights.shape[0]:
        raise ValidationError(f"input width {x.shape[-1]} does not match weights {weights.shape}")
    return sigmoid(x @ weights + bias)


class Dense(Layer):
    """Time-distributed dense layer; returns logits (sigmoid applied by the loss/model)."""

    def __init__(self, in_dim, units, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = glorot(rng, in_dim, units, (in_dim, units), dtype)
        self.params["b"] = np.zeros(units, dtype=dtype)

    def forward(self, x, train=False, rng=None):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        x = self._x
        D = x.shape[-1]
        K = dout.shape[-1]
        self.grads = {"W": x.reshape(-1, D).T @ dout.reshape(-1, K), "b": dout.reshape(-1, K).sum(axis=0)}
        return dout @ self.params["W"].T


PROB_CLIP = 1e-7


def bce_loss(pred, target, mask=None):
    """Mean binary cross-entropy with probabilities clipped to [1e-7, 1-1e-7].

    ``mask`` (broadcastable over the frame axes) drops padded frames from the mean.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValidationError(f"prediction shape {pred.shape} != target shape {target.shape}")
    p = np.clip(pred, PROB_CLIP, 1 - PROB_CLIP)
    cell = -(target * np.log(p) + (1 - target) * np.log(1 - p))
    if mask is None:
        return float(cell.mean())
    w = np.broadcast_to(np.asarray(mask, dtype=np.float64)[..., None], cell.shape)
    return float((cell * w).sum() / max(w.sum(), 1.0))


def clip_probs(p):
    lo = np.asarray(PROB_CLIP, dtype=p.dtype)
    return np.clip(p, lo, 1 - lo)


def bce_grad_logits(pred, target, mask=None):
    """d(bce_loss)/d(logits) through the sigmoid; zero where the clip is active."""
    lo = np.asarray(PROB_CLIP, dtype=pred.dtype)
    g = np.asarray(pred, dtype=np.float64) - target
    g[(pred <= lo) | (pred >= 1 - lo)] = 0.0
    if mask is None:
        return (g / g.size).astype(pred.dtype)
    w = np.broadcast_to(np.asarray(mask, dtype=np.float64)[..., None], g.shape)
    return (g * w / max(w.sum(), 1.0)).astype(pred.dtype)
