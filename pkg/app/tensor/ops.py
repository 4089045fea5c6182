"""
Differentiable operations over Tensor

Every function returns a new Tensor and, when graph recording is on and an
input requires grad, attaches the backward rule. Binary operations demand
identical shapes; the only implicit broadcast is a Python scalar in
scale/shift. Explicit alignment is done with tile_hw.
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from app.tensor.tensor import ShapeError, Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# convolution, pooling, resampling
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, padding: Optional[int] = None) -> Tensor:
    """Stride-1 shape-preserving convolution, NCHW input, OutC x InC x k x k weight, k in {1, 3}"""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d input and weight, got {x.shape} and {weight.shape}")
    n, channels, height, width = x.shape
    out_channels, in_channels, kh, kw = weight.shape
    if in_channels != channels:
        raise ShapeError(
            f"conv2d: input {x.shape} has {channels} channels but weight {weight.shape} expects {in_channels}"
        )
    if kh != kw or kh not in (1, 3):
        raise ShapeError(f"conv2d: kernel must be 1x1 or 3x3, got {kh}x{kw}")
    pad = (kh - 1) // 2
    if padding is not None and padding != pad:
        raise ShapeError(f"conv2d: padding {padding} is not shape-preserving for a {kh}x{kw} kernel")
    if bias is not None and bias.shape != (out_channels,):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match {out_channels} output channels")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    out = np.tensordot(cols, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def _backward(g: np.ndarray):
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            gp = np.pad(g, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else g
            gcols = sliding_window_view(gp, (kh, kw), axis=(2, 3))
            flipped = weight.data[:, :, ::-1, ::-1]
            gx = np.ascontiguousarray(np.tensordot(gcols, flipped, axes=([1, 4, 5], [0, 2, 3])).transpose(0, 3, 1, 2))
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor.from_op(out, parents, _backward, "conv2d")


def maxpool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling; on ties the gradient goes to the first pixel in window scan order"""
    if x.ndim != 4:
        raise ShapeError(f"maxpool2x2: expected NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2: extents must be even, got {h}x{w}; pad first")
    windows = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    argmax = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]

    def _backward(g: np.ndarray):
        routed = np.zeros(windows.shape, dtype=g.dtype)
        np.put_along_axis(routed, argmax[..., None], g[..., None], axis=-1)
        gx = routed.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return Tensor.from_op(out, (x,), _backward, "maxpool2x2")


def upsample_nearest2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling by 2x2 block replication"""
    if x.ndim != 4:
        raise ShapeError(f"upsample_nearest2x: expected NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def _backward(g: np.ndarray):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return Tensor.from_op(out, (x,), _backward, "upsample_nearest2x")


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    positive = x.data > 0
    return Tensor.from_op(np.where(positive, x.data, 0.0).astype(x.dtype), (x,), lambda g: (g * positive,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return Tensor.from_op(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return Tensor.from_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return Tensor.from_op(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    return Tensor.from_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("div", a, b)
    out = a.data / b.data
    return Tensor.from_op(out, (a, b), lambda g: (g / b.data, -g * out / b.data), "div")


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return Tensor.from_op(x.data * factor, (x,), lambda g: (g * factor,), "scale")


def shift(x: Tensor, offset: float) -> Tensor:
    offset = float(offset)
    return Tensor.from_op(x.data + offset, (x,), lambda g: (g,), "shift")


def absolute(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return Tensor.from_op(np.abs(x.data), (x,), lambda g: (g * sign,), "abs")


def log(x: Tensor) -> Tensor:
    return Tensor.from_op(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def clip(x: Tensor, low: float, high: float) -> Tensor:
    inside = (x.data >= low) & (x.data <= high)
    return Tensor.from_op(np.clip(x.data, low, high), (x,), lambda g: (g * inside,), "clip")


_UNARY = {"relu": relu, "sigmoid": sigmoid, "abs": absolute, "log": log}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(kind: str, *inputs: Tensor, value: Optional[float] = None) -> Tensor:
    """Dispatch by name: relu, sigmoid, abs, log (unary); add, sub, mul, div (binary); scale, shift (scalar)"""
    if kind in _UNARY:
        (x,) = inputs
        return _UNARY[kind](x)
    if kind in _BINARY:
        a, b = inputs
        return _BINARY[kind](a, b)
    if kind in ("scale", "shift"):
        if value is None:
            raise ValueError(f"{kind} needs a scalar value")
        (x,) = inputs
        return scale(x, value) if kind == "scale" else shift(x, value)
    raise ValueError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------------------
# reductions and layout
# ---------------------------------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return Tensor.from_op(np.asarray(x.data.sum()), (x,), lambda g: (np.full(shape, g, dtype=x.dtype),), "sum")


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / max(x.size, 1))


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    original = x.shape
    return Tensor.from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(original),), "reshape")


def index(x: Tensor, key) -> Tensor:
    """Basic slicing / integer indexing (crop, channel pick, batch item)"""
    out = np.array(x.data[key])

    def _backward(g: np.ndarray):
        gx = np.zeros_like(x.data)
        gx[key] = g
        return (gx,)

    return Tensor.from_op(out, (x,), _backward, "index")


def gather(x: Tensor, positions: np.ndarray) -> Tensor:
    """Flat gather x[positions] for a 1-d tensor"""
    if x.ndim != 1:
        raise ShapeError(f"gather: expected 1-d input, got {x.shape}")
    positions = np.asarray(positions, dtype=np.intp)

    def _backward(g: np.ndarray):
        gx = np.zeros_like(x.data)
        np.add.at(gx, positions, g)
        return (gx,)

    return Tensor.from_op(x.data[positions], (x,), _backward, "gather")


def tile_hw(x: Tensor, height: int, width: int) -> Tensor:
    """Explicitly broadcast (..., 1, 1) to (..., height, width)"""
    if x.ndim < 2 or x.shape[-2:] != (1, 1):
        raise ShapeError(f"tile_hw: expected trailing 1x1 extents, got {x.shape}")
    out = np.broadcast_to(x.data, x.shape[:-2] + (height, width)).copy()
    return Tensor.from_op(out, (x,), lambda g: (g.sum(axis=(-2, -1), keepdims=True),), "tile_hw")


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [t for t in tensors]
    if not tensors:
        raise ShapeError("concat: nothing to concatenate")
    reference = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(reference) or any(
            d != r for i, (d, r) in enumerate(zip(t.shape, reference)) if i != axis % len(reference)
        ):
            raise ShapeError(f"concat: {t.shape} does not align with {reference} outside axis {axis}")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor.from_op(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------

@dataclass
class BatchNormState:
    """Running statistics of one batch-norm layer"""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def fresh(cls, channels: int) -> "BatchNormState":
        return cls(np.zeros(channels), np.ones(channels))


def _check_affine(op: str, x: Tensor, gamma: Tensor, beta: Tensor) -> int:
    if x.ndim != 4:
        raise ShapeError(f"{op}: expected NCHW input, got {x.shape}")
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(f"{op}: gamma {gamma.shape} / beta {beta.shape} do not match {channels} channels")
    return channels


def _normalize(x: Tensor, gamma: Tensor, beta: Tensor, axes: Tuple[int, ...], eps: float, op: str) -> Tuple[Tensor, np.ndarray, np.ndarray]:
    """Normalise with batch statistics over `axes` and apply the per-channel affine map"""
    mean = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    g4 = gamma.data[None, :, None, None]
    out = g4 * xhat + beta.data[None, :, None, None]
    count = int(np.prod([x.shape[a] for a in axes]))

    def _backward(g: np.ndarray):
        gx = None
        if x.requires_grad:
            dxhat = g * g4
            gx = (inv_std / count) * (
                count * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        return gx, ggamma, gbeta

    return Tensor.from_op(out, (x, gamma, beta), _backward, op), mean, var


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool) -> Tensor:
    """Per-channel normalisation over N x H x W; training mode updates the running statistics"""
    _check_affine("batchnorm2d", x, gamma, beta)
    if training:
        out, mean, var = _normalize(x, gamma, beta, (0, 2, 3), state.eps, "batchnorm2d")
        count = x.size // x.shape[1]
        unbiased = var.reshape(-1) * (count / (count - 1)) if count > 1 else var.reshape(-1)
        state.running_mean = state.momentum * state.running_mean + (1.0 - state.momentum) * mean.reshape(-1)
        state.running_var = state.momentum * state.running_var + (1.0 - state.momentum) * unbiased
        return out

    inv_std = (1.0 / np.sqrt(state.running_var + state.eps)).astype(x.dtype)
    xhat = (x.data - state.running_mean.astype(x.dtype)[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def _backward(g: np.ndarray):
        gx = g * (gamma.data * inv_std)[None, :, None, None]
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return Tensor.from_op(out, (x, gamma, beta), _backward, "batchnorm2d")


def instancenorm2d(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = BN_EPS) -> Tensor:
    """Per-sample, per-channel normalisation over H x W (identical in train and eval)"""
    _check_affine("instancenorm2d", x, gamma, beta)
    out, _, _ = _normalize(x, gamma, beta, (2, 3), eps, "instancenorm2d")
    return out
