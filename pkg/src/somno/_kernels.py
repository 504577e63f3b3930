"""Hot inner loops, each with a numba and a pure-numpy implementation.

The numba path is used when numba imports and ``SOMNO_DISABLE_NUMBA`` is not
set to a truthy value. Both paths produce the same results up to floating
point summation order; tests run them against each other.
"""

from __future__ import annotations

import contextlib
import os
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


def _env_disabled() -> bool:
    return os.environ.get("SOMNO_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}


_backend = "numba" if HAVE_NUMBA and not _env_disabled() else "numpy"


def backend() -> str:
    """Name of the active kernel backend, ``"numba"`` or ``"numpy"``."""
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not importable")
    _backend = name


@contextlib.contextmanager
def use_backend(name: str) -> Iterator[None]:
    previous = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


# --------------------------------------------------------------------------
# im2col / col2im for valid 1-D convolution, layout [batch, time, channels].
# Column index is j * c_in + c so that kernel[k, c_in, c_out] reshapes
# directly to [k * c_in, c_out].
# --------------------------------------------------------------------------


def _im2col_np(x: np.ndarray, k: int) -> np.ndarray:
    b, t, c = x.shape
    n_out = t - k + 1
    win = sliding_window_view(x, k, axis=1)  # [b, n_out, c, k]
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(b * n_out, k * c)


def _col2im_np(cols: np.ndarray, b: int, t: int, c: int, k: int) -> np.ndarray:
    n_out = t - k + 1
    cols = cols.reshape(b, n_out, k, c)
    out = np.zeros((b, t, c), dtype=cols.dtype)
    for j in range(k):
        out[:, j : j + n_out, :] += cols[:, :, j, :]
    return out


@njit(cache=True)
def _im2col_nb(x, k):
    b, t, c = x.shape
    n_out = t - k + 1
    cols = np.empty((b * n_out, k * c), dtype=x.dtype)
    for bi in range(b):
        for i in range(n_out):
            row = bi * n_out + i
            for j in range(k):
                base = j * c
                for ci in range(c):
                    cols[row, base + ci] = x[bi, i + j, ci]
    return cols


@njit(cache=True)
def _col2im_nb(cols, b, t, c, k):
    n_out = t - k + 1
    out = np.zeros((b, t, c), dtype=cols.dtype)
    for bi in range(b):
        for i in range(n_out):
            row = bi * n_out + i
            for j in range(k):
                base = j * c
                for ci in range(c):
                    out[bi, i + j, ci] += cols[row, base + ci]
    return out


@njit(cache=True)
def _conv_fwd_nb(x, w2d, bias, k):
    b, t, c = x.shape
    n_out = t - k + 1
    cols = _im2col_nb(x, k)
    out = np.dot(cols, w2d)
    for r in range(out.shape[0]):
        for o in range(out.shape[1]):
            out[r, o] += bias[o]
    return out.reshape(b, n_out, w2d.shape[1])


def conv1d_valid(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Valid cross-correlation ``out[b,i,o] = sum_{j,c} x[b,i+j,c] k[j,c,o] + bias[o]``."""
    k, c_in, c_out = kernel.shape
    w2d = np.ascontiguousarray(kernel.reshape(k * c_in, c_out))
    if _backend == "numba":
        return _conv_fwd_nb(np.ascontiguousarray(x), w2d, bias, k)
    b, t, _ = x.shape
    cols = _im2col_np(x, k)
    out = cols @ w2d
    out += bias
    return out.reshape(b, t - k + 1, c_out)


def conv1d_valid_backward(
    x: np.ndarray, kernel: np.ndarray, grad_out: np.ndarray, need_input_grad: bool = True
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    """Gradients of :func:`conv1d_valid` w.r.t. input, kernel and bias."""
    k, c_in, c_out = kernel.shape
    b, t, _ = x.shape
    g2d = np.ascontiguousarray(grad_out.reshape(-1, c_out))
    w2d = np.ascontiguousarray(kernel.reshape(k * c_in, c_out))
    if _backend == "numba":
        cols = _im2col_nb(np.ascontiguousarray(x), k)
    else:
        cols = _im2col_np(x, k)
    grad_kernel = (cols.T @ g2d).reshape(k, c_in, c_out)
    grad_bias = g2d.sum(axis=0)
    grad_input = None
    if need_input_grad:
        dcols = g2d @ w2d.T
        if _backend == "numba":
            grad_input = _col2im_nb(dcols, b, t, c_in, k)
        else:
            grad_input = _col2im_np(dcols, b, t, c_in, k)
    return grad_input, grad_kernel, grad_bias


# --------------------------------------------------------------------------
# max pooling over time, trailing partial window dropped
# --------------------------------------------------------------------------


@njit(cache=True)
def _maxpool_fwd_nb(x, size):
    b, t, c = x.shape
    n_out = t // size
    out = np.empty((b, n_out, c), dtype=x.dtype)
    arg = np.empty((b, n_out, c), dtype=np.int64)
    for bi in range(b):
        for i in range(n_out):
            for ci in range(c):
                best = x[bi, i * size, ci]
                best_j = 0
                for j in range(1, size):
                    v = x[bi, i * size + j, ci]
                    if v > best:
                        best = v
                        best_j = j
                out[bi, i, ci] = best
                arg[bi, i, ci] = best_j
    return out, arg


@njit(cache=True)
def _maxpool_bwd_nb(grad_out, arg, t, size):
    b, n_out, c = grad_out.shape
    dx = np.zeros((b, t, c), dtype=grad_out.dtype)
    for bi in range(b):
        for i in range(n_out):
            for ci in range(c):
                dx[bi, i * size + arg[bi, i, ci], ci] += grad_out[bi, i, ci]
    return dx


def maxpool_forward(x: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Return pooled values and the within-window argmax (first maximum on ties)."""
    if _backend == "numba":
        return _maxpool_fwd_nb(np.ascontiguousarray(x), size)
    b, t, c = x.shape
    n_out = t // size
    win = x[:, : n_out * size].reshape(b, n_out, size, c)
    arg = win.argmax(axis=2)
    out = np.take_along_axis(win, arg[:, :, None, :], axis=2)[:, :, 0, :]
    return out, arg


def maxpool_backward(grad_out: np.ndarray, arg: np.ndarray, t: int, size: int) -> np.ndarray:
    if _backend == "numba":
        return _maxpool_bwd_nb(np.ascontiguousarray(grad_out), arg, t, size)
    b, n_out, c = grad_out.shape
    dx = np.zeros((b, t, c), dtype=grad_out.dtype)
    view = dx[:, : n_out * size].reshape(b, n_out, size, c)
    np.put_along_axis(view, arg[:, :, None, :], grad_out[:, :, None, :], axis=2)
    return dx


# --------------------------------------------------------------------------
# min-max distance
# --------------------------------------------------------------------------


@njit(cache=True)
def _mmd_nb(x, win):
    n_win = x.shape[0] // win
    total = 0.0
    for w in range(n_win):
        off = w * win
        i_min = 0
        i_max = 0
        v_min = x[off]
        v_max = x[off]
        for i in range(1, win):
            v = x[off + i]
            if v < v_min:
                v_min = v
                i_min = i
            if v > v_max:
                v_max = v
                i_max = i
        dt = float(i_max - i_min)
        dv = v_max - v_min
        total += np.sqrt(dt * dt + dv * dv)
    return total


def mmd_sum(x: np.ndarray, win: int) -> float:
    """Sum over non-overlapping windows of the min/max point distance."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if _backend == "numba":
        return float(_mmd_nb(x, win))
    n_win = x.shape[0] // win
    w = x[: n_win * win].reshape(n_win, win)
    i_min = w.argmin(axis=1)
    i_max = w.argmax(axis=1)
    dv = w.max(axis=1) - w.min(axis=1)
    dt = (i_max - i_min).astype(np.float64)
    return float(np.sqrt(dt * dt + dv * dv).sum())


# --------------------------------------------------------------------------
# 1-D nearest-neighbour statistics for the k-NN mutual information estimator
# --------------------------------------------------------------------------


@njit(cache=True)
def _kth_distance_nb(s, k):
    # s sorted ascending; k-th nearest neighbour distance excluding self
    n = s.shape[0]
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        lo = i - 1
        hi = i + 1
        d = 0.0
        for _ in range(k):
            dl = s[i] - s[lo] if lo >= 0 else np.inf
            dh = s[hi] - s[i] if hi < n else np.inf
            if dl <= dh:
                d = dl
                lo -= 1
            else:
                d = dh
                hi += 1
        out[i] = d
    return out


def _kth_distance_np(s: np.ndarray, k: int) -> np.ndarray:
    n = s.shape[0]
    offsets = np.concatenate([np.arange(-k, 0), np.arange(1, k + 1)])
    idx = np.arange(n)[:, None] + offsets[None, :]
    valid = (idx >= 0) & (idx < n)
    d = np.abs(s[np.clip(idx, 0, n - 1)] - s[:, None])
    d[~valid] = np.inf
    d.sort(axis=1)
    return d[:, k - 1]


def kth_neighbor_distance(sorted_values: np.ndarray, k: int) -> np.ndarray:
    """Distance from each point of a sorted 1-D sample to its k-th nearest other point."""
    s = np.ascontiguousarray(sorted_values, dtype=np.float64)
    if _backend == "numba":
        return _kth_distance_nb(s, k)
    return _kth_distance_np(s, k)


@njit(cache=True)
def _count_within_nb(s, x, r):
    n = s.shape[0]
    out = np.empty(x.shape[0], dtype=np.int64)
    for i in range(x.shape[0]):
        xi = x[i]
        ri = r[i]
        # searchsorted brackets the window; x +- r may round across a boundary
        # point, so the edges are re-tested with the exact |s - x| < r rule
        lo = np.searchsorted(s, xi - ri, side="left")
        while lo > 0 and abs(s[lo - 1] - xi) < ri:
            lo -= 1
        while lo < n and s[lo] < xi and not abs(s[lo] - xi) < ri:
            lo += 1
        hi = np.searchsorted(s, xi + ri, side="right")
        while hi < n and abs(s[hi] - xi) < ri:
            hi += 1
        while hi > lo and not abs(s[hi - 1] - xi) < ri:
            hi -= 1
        out[i] = hi - lo
    return out


def _count_within_np(s: np.ndarray, x: np.ndarray, r: np.ndarray) -> np.ndarray:
    n = s.shape[0]
    inside = lambda j: (j >= 0) & (j < n) & (np.abs(s[np.clip(j, 0, n - 1)] - x) < r)  # noqa: E731
    lo = np.searchsorted(s, x - r, side="left")
    while True:
        step = inside(lo - 1)
        if not step.any():
            break
        lo -= step
    while True:
        step = (lo < n) & (s[np.clip(lo, 0, n - 1)] < x) & ~inside(lo)
        if not step.any():
            break
        lo += step
    hi = np.searchsorted(s, x + r, side="right")
    while True:
        step = inside(hi)
        if not step.any():
            break
        hi += step
    while True:
        step = (hi > lo) & ~inside(hi - 1)
        if not step.any():
            break
        hi -= step
    return hi - lo


def count_within(sorted_all: np.ndarray, x: np.ndarray, radius: np.ndarray) -> np.ndarray:
    """Number of points of ``sorted_all`` at distance strictly below ``radius`` from each ``x``."""
    s = np.ascontiguousarray(sorted_all, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    r = np.ascontiguousarray(radius, dtype=np.float64)
    if _backend == "numba":
        return _count_within_nb(s, x, r)
    return _count_within_np(s, x, r)


# --------------------------------------------------------------------------
# linear interpolation at uniformly spaced output times
# --------------------------------------------------------------------------


@njit(cache=True)
def _interp_uniform_nb(x, ratio, n_out):
    out = np.empty(n_out, dtype=np.float64)
    n = x.shape[0]
    for k in range(n_out):
        pos = k * ratio
        i = int(np.floor(pos))
        if i >= n - 1:
            out[k] = x[n - 1]
        else:
            frac = pos - i
            out[k] = x[i] + (x[i + 1] - x[i]) * frac
    return out


def interp_uniform(x: np.ndarray, ratio: float, n_out: int) -> np.ndarray:
    """Sample ``x`` (unit spacing) linearly at positions ``k * ratio`` for ``k < n_out``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if _backend == "numba":
        return _interp_uniform_nb(x, float(ratio), int(n_out))
    pos = np.arange(n_out, dtype=np.float64) * ratio
    return np.interp(pos, np.arange(x.shape[0], dtype=np.float64), x)
