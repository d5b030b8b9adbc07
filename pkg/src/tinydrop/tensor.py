"""Dense float64 numeric primitives used by every stage of the pipeline.

Arrays are plain ``numpy.ndarray`` objects in float64. Every primitive that
does arithmetic reports its cost to the active :class:`OpCounter` (if any), so
a real forward pass can be audited against the analytic cost model in
:mod:`tinydrop.flops`.

Per-element FLOP constants (shared with the analytic model):

=============  ==========================================
op             FLOPs
=============  ==========================================
matmul         2 per multiply-add
add            1 per output element (bias, residual, pos)
scale          1 per element
mean_rows      1 per input element (row sums) + 1 per output
softmax        5 per element (max, sub, exp, sum, div)
layer_norm     8 per element (mean, centre, square, var,
               rsqrt, normalise, gamma, beta)
gelu           8 per element (tanh form)
=============  ==========================================
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from typing import Iterator, Sequence

import numpy as np

SOFTMAX_FLOPS = 5
LAYER_NORM_FLOPS = 8
GELU_FLOPS = 8

# tanh-approximation constants: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
GELU_C = math.sqrt(2.0 / math.pi)
GELU_K = 0.044715


class DimensionError(ValueError):
    pass


class OpCounter:
    """Accumulates FLOPs executed by tensor primitives on the current thread."""

    def __init__(self) -> None:
        self.macs = 0
        self.elementwise = 0

    @property
    def flops(self) -> int:
        return 2 * self.macs + self.elementwise


_local = threading.local()


@contextmanager
def count_ops() -> Iterator[OpCounter]:
    counter = OpCounter()
    prev = getattr(_local, "counter", None)
    _local.counter = counter
    try:
        yield counter
    finally:
        _local.counter = prev


def _record(macs: int = 0, elementwise: int = 0) -> None:
    counter = getattr(_local, "counter", None)
    if counter is not None:
        counter.macs += int(macs)
        counter.elementwise += int(elementwise)


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product over the last two axes; leading axes broadcast."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = a @ b
    _record(macs=out.size * a.shape[-1])
    return out


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.add(a, b)
    _record(elementwise=out.size)
    return out


def scale(a: np.ndarray, factor: float) -> np.ndarray:
    _record(elementwise=np.size(a))
    return a * factor


def mean_rows(x: np.ndarray) -> np.ndarray:
    """Mean over the second-to-last axis, keeping it as length 1."""
    out = x.mean(axis=-2, keepdims=True)
    _record(elementwise=np.size(x) + out.size)
    return out


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = as_tensor(x)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    _record(elementwise=SOFTMAX_FLOPS * x.size)
    return e / np.sum(e, axis=axis, keepdims=True)


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Normalise over the last axis, then apply the affine ``gamma * xhat + beta``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = as_tensor(x)
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    _record(elementwise=LAYER_NORM_FLOPS * x.size)
    return xc / np.sqrt(var + eps) * gamma + beta


def gelu(x: np.ndarray) -> np.ndarray:
    x = as_tensor(x)
    _record(elementwise=GELU_FLOPS * x.size)
    return 0.5 * x * (1.0 + np.tanh(GELU_C * (x + GELU_K * x**3)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    """Derivative of :func:`gelu` with respect to its input."""
    u = GELU_C * (x + GELU_K * x**3)
    t = np.tanh(u)
    du = GELU_C * (1.0 + 3.0 * GELU_K * x**2)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du


def _axis_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centres: src = (dst + 0.5) * n_in / n_out - 0.5, clamped to the edge
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def bilinear_resize(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with half-pixel centres (``align_corners=False``)."""
    src = as_tensor(src)
    if src.ndim != 2:
        raise DimensionError(f"bilinear_resize expects a 2-D map, got {src.shape}")
    h, w = src.shape
    if min(h, w, out_h, out_w) < 1:
        raise DimensionError("all sizes must be >= 1")
    y0, y1, fy = _axis_weights(h, out_h)
    x0, x1, fx = _axis_weights(w, out_w)
    fy = fy[:, None]
    fx = fx[None, :]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    # rounding can leak a few ulps past the source range
    return np.clip(out, src.min(), src.max())


def minmax_normalize(x: np.ndarray) -> np.ndarray:
    """Affinely map ``x`` onto [0, 1]; a flat input maps to 0.5 everywhere."""
    x = as_tensor(x)
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.full_like(x, 0.5)
    out = (x - lo) / (hi - lo)
    return np.clip(out, 0.0, 1.0)


def arg_top_k(scores: Sequence[float] | np.ndarray, k: int) -> list[int]:
    """Indices of the ``k`` largest scores, ties to the smaller index, ascending."""
    scores = as_tensor(scores).ravel()
    n = scores.size
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range [1, {n}]")
    # stable sort on -score keeps equal scores in index order
    order = np.argsort(-scores, kind="stable")[:k]
    return sorted(int(i) for i in order)
