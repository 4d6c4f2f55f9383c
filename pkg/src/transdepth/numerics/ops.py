"""Differentiable operations on :class:`Tensor`.

Each function computes its forward value with numpy and registers a closure
that maps the output cotangent to input cotangents. Broadcasting follows numpy
rules: size-1 axes stretch and missing leading axes are prepended; anything
else raises :class:`DimensionError`.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from transdepth.errors import DimensionError, DomainError
from transdepth.numerics.tensor import Tensor, as_tensor, note_branch

__all__ = [
    "add", "sub", "mul", "div", "neg", "power", "exp", "log", "sqrt_scalar",
    "sigmoid", "relu", "gelu", "arccos", "clip", "elementwise",
    "sum", "mean", "reshape", "transpose", "concat", "getitem", "masked_select",
    "matmul", "softmax_last", "layer_norm", "conv2d", "bilinear_resize",
    "global_avg_pool", "l2_normalize", "resize_matrix",
]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# binary elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._result(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._result(out, (a, b), backward, "div")


# ---------------------------------------------------------------------------
# unary elementwise


def neg(x) -> Tensor:
    x = as_tensor(x)
    return Tensor._result(-x.data, (x,), lambda g: (-g,), "neg")


def power(x, exponent: float) -> Tensor:
    x = as_tensor(x)
    p = float(exponent)
    if p != int(p) and np.any(x.data < 0):
        raise DomainError("power: fractional exponent of a negative value")
    out = x.data ** p

    def backward(g):
        return (g * p * x.data ** (p - 1.0),)

    return Tensor._result(out, (x,), backward, "power")


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return Tensor._result(out, (x,), lambda g: (g * out,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log: input must be strictly positive")
    return Tensor._result(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt_scalar(x) -> Tensor:
    """Square root clamped at zero: negative inputs map to 0 with zero gradient."""
    x = as_tensor(x)
    positive = x.data > 0
    note_branch(positive)
    out = np.sqrt(np.where(positive, x.data, 0.0))

    def backward(g):
        safe = np.where(positive, out, 1.0)
        return (np.where(positive, g * 0.5 / safe, 0.0),)

    return Tensor._result(out, (x,), backward, "sqrt_scalar")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = special.expit(x.data)
    return Tensor._result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(x) -> Tensor:
    x = as_tensor(x)
    active = x.data > 0
    note_branch(active)
    return Tensor._result(np.where(active, x.data, 0.0), (x,), lambda g: (g * active,), "relu")


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x) -> Tensor:
    """Exact (erf) GELU."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + special.erf(x.data * _INV_SQRT2))
    out = x.data * cdf

    def backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return Tensor._result(out, (x,), backward, "gelu")


def arccos(x) -> Tensor:
    x = as_tensor(x)
    if np.any(np.abs(x.data) > 1):
        raise DomainError("arccos: input outside [-1, 1]")
    out = np.arccos(x.data)

    def backward(g):
        with np.errstate(divide="ignore"):
            return (-g / np.sqrt(1.0 - x.data * x.data),)

    return Tensor._result(out, (x,), backward, "arccos")


def clip(x, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    note_branch(inside)
    return Tensor._result(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clip")


_UNARY = {
    "neg": neg, "exp": exp, "log": log, "sqrt_scalar": sqrt_scalar,
    "sigmoid": sigmoid, "relu": relu, "gelu": gelu, "arccos": arccos,
}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op: str, *operands) -> Tensor:
    """Dispatch an elementwise operation by name."""
    if op in _UNARY and len(operands) == 1:
        return _UNARY[op](operands[0])
    if op in _BINARY and len(operands) == 2:
        return _BINARY[op](*operands)
    raise ValueError(f"unknown elementwise op {op!r} with {len(operands)} operand(s)")


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._result(out, (x,), backward, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if count == 0:
        raise DimensionError("mean over an empty axis")
    return sum(x, axis=axes, keepdims=keepdims) * (1.0 / count)


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None
    return Tensor._result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes: Sequence[int] | None = None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of an empty sequence")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._result(out, tuple(tensors), backward, "concat")


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    out = x.data[index]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._result(np.array(out, copy=True), (x,), backward, "getitem")


def masked_select(x, mask) -> Tensor:
    """Flatten the entries of ``x`` where the boolean ``mask`` is true."""
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        try:
            mask = np.broadcast_to(mask, x.shape)
        except ValueError:
            raise DimensionError(f"masked_select: mask {mask.shape} vs tensor {x.shape}") from None

    def backward(g):
        full = np.zeros_like(x.data)
        full[mask] = g
        return (full,)

    return Tensor._result(x.data[mask], (x,), backward, "masked_select")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch axes {a.shape[:-2]} and {b.shape[:-2]} do not broadcast") from None
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._result(out, (a, b), backward, "matmul")


def softmax_last(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError("softmax_last: empty last axis")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return Tensor._result(out, (x,), backward, "softmax_last")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError("layer_norm: empty channel axis")
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"layer_norm: gamma/beta must have shape ({c},)")
    if eps <= 0:
        raise DomainError("layer_norm: eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data
            gx = inv_std * (
                gxhat
                - gxhat.mean(axis=-1, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
            )
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._result(out, (x, gamma, beta), backward, "layer_norm")


def conv2d(x, w, b=None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation (no kernel flip) with zero padding.

    Output size is ``floor((H + 2*pad - k) / stride) + 1``, as in the usual
    deep-learning convention.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects NCHW input and OCkk weight, got {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    o, cw, k, k2 = w.shape
    if cw != c:
        raise DimensionError(f"conv2d: input has {c} channels, weight expects {cw}")
    if k != k2 or k % 2 == 0:
        raise DimensionError(f"conv2d: kernel must be square with odd size, got {k}x{k2}")
    if stride < 1 or pad < 0:
        raise DimensionError("conv2d: stride must be >= 1 and pad >= 0")
    h_out = (h + 2 * pad - k) // stride + 1
    w_out = (wd + 2 * pad - k) // stride + 1
    if h_out < 1 or w_out < 1:
        raise DimensionError(f"conv2d: {h}x{wd} input too small for k={k}, pad={pad}")
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (o,):
            raise DimensionError(f"conv2d: bias must have shape ({o},)")
        parents.append(b)

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    if k == 1:
        cols = xp[:, :, ::stride, ::stride][:, :, :h_out, :w_out]
        out = np.einsum("nchw,oc->nohw", cols, w.data[:, :, 0, 0], optimize=True)
    else:
        cols = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :h_out, :w_out]
        cols = np.ascontiguousarray(cols.transpose(0, 2, 3, 1, 4, 5)).reshape(n * h_out * w_out, c * k * k)
        out = (cols @ w.data.reshape(o, -1).T).reshape(n, h_out, w_out, o).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data[None, :, None, None]

    def backward(g):
        gx = gw = None
        if k == 1:
            if w.requires_grad:
                gw = np.einsum("nohw,nchw->oc", g, cols, optimize=True)[:, :, None, None]
            if x.requires_grad:
                gcols = np.einsum("nohw,oc->nchw", g, w.data[:, :, 0, 0], optimize=True)
                gxp = np.zeros_like(xp)
                gxp[:, :, : stride * h_out : stride, : stride * w_out : stride] = gcols
                gx = gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp
        else:
            g2 = g.transpose(0, 2, 3, 1).reshape(n * h_out * w_out, o)
            if w.requires_grad:
                gw = (g2.T @ cols).reshape(w.shape)
            if x.requires_grad:
                gcols = (g2 @ w.data.reshape(o, -1)).reshape(n, h_out, w_out, c, k, k)
                gxp = np.zeros_like(xp)
                for i in range(k):
                    for j in range(k):
                        gxp[:, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride] += (
                            gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                        )
                gx = gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return Tensor._result(out, tuple(parents), backward, "conv2d")


def resize_matrix(src: int, dst: int) -> np.ndarray:
    """Row-stochastic ``dst x src`` bilinear interpolation matrix (half-pixel centers).

    Target index t samples source coordinate ``(t + 0.5) * src / dst - 0.5``,
    clamped to ``[0, src - 1]``.
    """
    if src < 1 or dst < 1:
        raise DimensionError("resize sizes must be >= 1")
    m = np.zeros((dst, src))
    for t in range(dst):
        s = min(max((t + 0.5) * src / dst - 0.5, 0.0), src - 1.0)
        i0 = int(math.floor(s))
        i1 = min(i0 + 1, src - 1)
        frac = s - i0
        m[t, i0] += 1.0 - frac
        m[t, i1] += frac
    return m


def bilinear_resize(x, out_h: int, out_w: int) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"bilinear_resize expects NCHW, got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise DimensionError("bilinear_resize: target size must be >= 1")
    h, w = x.shape[2:]
    if (h, w) == (out_h, out_w):
        return Tensor._result(x.data.copy(), (x,), lambda g: (g,), "bilinear_resize")
    rh = resize_matrix(h, out_h)
    rw = resize_matrix(w, out_w)
    out = rh @ x.data @ rw.T

    def backward(g):
        return (rh.T @ g @ rw,)

    return Tensor._result(out, (x,), backward, "bilinear_resize")


def global_avg_pool(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects NCHW, got {x.shape}")
    h, w = x.shape[2:]
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def backward(g):
        return (np.broadcast_to(g / (h * w), x.shape).copy(),)

    return Tensor._result(out, (x,), backward, "global_avg_pool")


def l2_normalize(x, axis: int = 1, eps: float = 1e-8) -> Tensor:
    """Divide by the L2 norm along ``axis``; norms below ``eps`` are replaced by ``eps``."""
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    big = norm > eps
    note_branch(big)
    denom = np.where(big, norm, eps)
    out = x.data / denom

    def backward(g):
        radial = (g * out).sum(axis=axis, keepdims=True)
        return (np.where(big, (g - out * radial) / denom, g / eps),)

    return Tensor._result(out, (x,), backward, "l2_normalize")
