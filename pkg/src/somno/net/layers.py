"""Layers over [batch, time, channels] arrays.

Each layer's ``forward(params, x, rng, record)`` returns ``(output, ctx)``.
Dropout is active only when an ``rng`` is passed (training mode); ``ctx``
holds what ``backward`` needs when ``record`` is true and is ``None``
otherwise. Layers never mutate themselves during a pass, so one set of
weights can serve several threads at inference time.
"""

from __future__ import annotations

import math

import numpy as np

from .. import _kernels
from ..errors import ShapeMismatch


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def _same_pad(k: int) -> tuple[int, int]:
    left = (k - 1) // 2
    return left, k - 1 - left


def conv1d(x, kernel, bias, padding: str = "valid", activation: str = "none") -> np.ndarray:
    """Stateless 1-D convolution (cross-correlation), layout [b, t, c]."""
    x = np.asarray(x)
    kernel = np.asarray(kernel)
    if x.ndim != 3 or kernel.ndim != 3 or x.shape[2] != kernel.shape[1]:
        raise ShapeMismatch(f"input {x.shape} incompatible with kernel {kernel.shape}")
    k = kernel.shape[0]
    if padding == "same":
        x = np.pad(x, ((0, 0), _same_pad(k), (0, 0)))
    elif padding != "valid":
        raise ValueError(f"unknown padding {padding!r}")
    if x.shape[1] < k:
        raise ShapeMismatch(f"sequence of length {x.shape[1]} shorter than kernel {k}")
    out = _kernels.conv1d_valid(x, kernel, np.asarray(bias, dtype=x.dtype))
    return relu(out) if activation == "relu" else out


def maxpool1d(x, size: int = 2) -> np.ndarray:
    return _kernels.maxpool_forward(np.asarray(x), size)[0]


def global_maxpool(x) -> np.ndarray:
    return np.asarray(x).max(axis=1)


def dense(x, weight, bias, activation: str = "none") -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeMismatch(f"input width {x.shape[-1]} vs weight {weight.shape}")
    out = x @ weight + bias
    return relu(out) if activation == "relu" else out


def spatial_dropout(x, rate: float = 0.01, mode: str = "infer", rng=None) -> np.ndarray:
    if mode == "train" and rng is None:
        rng = np.random.default_rng()
    return SpatialDropout(rate).forward({}, np.asarray(x), rng if mode == "train" else None, False)[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits, labels) -> tuple[float, np.ndarray]:
    """Mean categorical cross-entropy over all positions, and the probabilities."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.shape[:-1] != labels.shape:
        raise ShapeMismatch(f"logits {logits.shape} vs labels {labels.shape}")
    z = logits - logits.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    log_p = z - log_norm
    picked = np.take_along_axis(log_p, labels[..., None], axis=-1)[..., 0]
    return float(-picked.mean()), np.exp(log_p)


def softmax_xent_grad(probs: np.ndarray, labels) -> np.ndarray:
    """d(mean xent)/d(logits) = (p - onehot) / count."""
    labels = np.asarray(labels, dtype=np.int64)
    g = probs.copy()
    np.put_along_axis(g, labels[..., None], np.take_along_axis(g, labels[..., None], axis=-1) - 1, axis=-1)
    return g / labels.size


class Layer:
    name: str = ""

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {}

    def forward(self, params, x, rng, record):
        raise NotImplementedError

    def backward(self, params, ctx, grad, grads):
        raise NotImplementedError


class Conv1D(Layer):
    def __init__(self, name: str, c_in: int, c_out: int, kernel: int,
                 padding: str = "valid", activation: str = "relu"):
        self.name, self.c_in, self.c_out, self.k = name, c_in, c_out, kernel
        self.padding, self.activation = padding, activation

    def param_shapes(self):
        return {f"{self.name}/kernel": (self.k, self.c_in, self.c_out), f"{self.name}/bias": (self.c_out,)}

    def out_len(self, t: int) -> int:
        return t if self.padding == "same" else t - self.k + 1

    def forward(self, params, x, rng, record):
        kernel = params[f"{self.name}/kernel"]
        if self.padding == "same":
            x = np.pad(x, ((0, 0), _same_pad(self.k), (0, 0)))
        if x.shape[1] < self.k:
            raise ShapeMismatch(f"{self.name}: length {x.shape[1]} shorter than kernel {self.k}")
        z = _kernels.conv1d_valid(x, kernel, params[f"{self.name}/bias"])
        if self.activation == "relu":
            active = z > 0
            out = np.where(active, z, 0).astype(z.dtype, copy=False)
        else:
            active, out = None, z
        return out, ((x, active) if record else None)

    def backward(self, params, ctx, grad, grads):
        x, active = ctx
        if active is not None:
            grad = np.where(active, grad, 0).astype(grad.dtype, copy=False)
        dx, dk, db = _kernels.conv1d_valid_backward(x, params[f"{self.name}/kernel"], grad)
        grads[f"{self.name}/kernel"] = dk
        grads[f"{self.name}/bias"] = db
        if self.padding == "same":
            left, right = _same_pad(self.k)
            dx = dx[:, left : dx.shape[1] - right]
        return dx


class MaxPool1D(Layer):
    def __init__(self, size: int = 2):
        self.size = size

    def out_len(self, t: int) -> int:
        return t // self.size

    def forward(self, params, x, rng, record):
        out, arg = _kernels.maxpool_forward(x, self.size)
        return out, ((arg, x.shape[1]) if record else None)

    def backward(self, params, ctx, grad, grads):
        arg, t = ctx
        return _kernels.maxpool_backward(grad, arg, t, self.size)


class SpatialDropout(Layer):
    """Zeroes whole channels (every time step) in training mode."""

    def __init__(self, rate: float = 0.01):
        if not 0 <= rate < 1:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate

    def _mask_shape(self, x):
        return (x.shape[0], 1, x.shape[2])

    def forward(self, params, x, rng, record):
        if rng is None or self.rate == 0:
            return x, None
        keep = rng.random(self._mask_shape(x)) >= self.rate
        mask = (keep / (1.0 - self.rate)).astype(x.dtype)
        return x * mask, (mask if record else None)

    def backward(self, params, ctx, grad, grads):
        return grad if ctx is None else grad * ctx


class Dropout(SpatialDropout):
    """Element-wise dropout."""

    def _mask_shape(self, x):
        return x.shape


class GlobalMaxPool1D(Layer):
    def forward(self, params, x, rng, record):
        arg = x.argmax(axis=1)
        out = np.take_along_axis(x, arg[:, None, :], axis=1)[:, 0, :]
        return out, ((arg, x.shape[1]) if record else None)

    def backward(self, params, ctx, grad, grads):
        arg, t = ctx
        dx = np.zeros((grad.shape[0], t, grad.shape[1]), dtype=grad.dtype)
        np.put_along_axis(dx, arg[:, None, :], grad[:, None, :], axis=1)
        return dx


class Dense(Layer):
    """Affine map over the last axis; leading axes are treated as batch."""

    def __init__(self, name: str, n_in: int, n_out: int, activation: str = "relu"):
        self.name, self.n_in, self.n_out, self.activation = name, n_in, n_out, activation

    def param_shapes(self):
        return {f"{self.name}/kernel": (self.n_in, self.n_out), f"{self.name}/bias": (self.n_out,)}

    def forward(self, params, x, rng, record):
        z = x @ params[f"{self.name}/kernel"] + params[f"{self.name}/bias"]
        if self.activation == "relu":
            active = z > 0
            out = np.where(active, z, 0).astype(z.dtype, copy=False)
        else:
            active, out = None, z
        return out, ((x, active) if record else None)

    def backward(self, params, ctx, grad, grads):
        x, active = ctx
        if active is not None:
            grad = np.where(active, grad, 0).astype(grad.dtype, copy=False)
        x2 = x.reshape(-1, self.n_in)
        g2 = grad.reshape(-1, self.n_out)
        grads[f"{self.name}/kernel"] = x2.T @ g2
        grads[f"{self.name}/bias"] = g2.sum(axis=0)
        return (g2 @ params[f"{self.name}/kernel"].T).reshape(x.shape)


def glorot_uniform(shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    if len(shape) == 3:
        fan_in, fan_out = shape[0] * shape[1], shape[0] * shape[2]
    else:
        fan_in, fan_out = shape[0], shape[1]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)
