"""Dense tensors with reverse-mode automatic differentiation on an explicit tape.

Every primitive below computes its forward value eagerly with numpy and, when a
tape is active and some input requires a gradient, records a backward closure.
``Tape.backward`` seeds the scalar loss with 1 and replays the recorded nodes
in reverse, accumulating into ``Tensor.grad`` for everything trainable.

Running an op with no active tape (teacher inference, evaluation, benchmarks)
produces a detached result, so frozen-model outputs can never leak gradients.

Everything is float64 by default; float32 arrays pass through untouched for the
forward-only benchmark mode.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erf

from . import kernels
from .errors import ContractError, DimensionError, LengthError

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """n-dimensional float array plus an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(data, np.ndarray) and data.dtype.type in _FLOAT_DTYPES:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; scalars are allowed on either side of + - *
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def parameter(data, name: Optional[str] = None) -> Tensor:
    arr = np.array(data, dtype=np.float64, order="C")  # copy; keeps 0-d shape
    return Tensor(arr, requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(data)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


class Tape:
    """Ordered record of primitive applications for one forward/backward pass.

    Use as a context manager around the forward computation; ``backward``
    replays the nodes last-to-first. Replaying an empty tape is a no-op.
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable[[np.ndarray], None]]] = []

    def __len__(self):
        return len(self._nodes)

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def _record(self, out, inputs, backward_fn):
        self._nodes.append((out, inputs, backward_fn))

    def backward(self, loss: Tensor):
        """Populate .grad for every trainable tensor reachable from ``loss``."""
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        if loss.grad is None:
            loss.grad = np.ones_like(loss.data)
        for out, _inputs, backward_fn in reversed(self._nodes):
            if out.grad is None:
                continue
            backward_fn(out.grad)


class no_grad:
    """Context manager that suspends taping (detached forward passes)."""

    def __enter__(self):
        _TAPE_STACK.append(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False


_TAPE_STACK: list[Optional[Tape]] = []


def _active_tape() -> Optional[Tape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _emit(data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap a forward result, recording the node if gradients are being taped."""
    tape = _active_tape()
    if tape is None or not any(t.requires_grad for t in inputs):
        return Tensor(data)
    out = Tensor(data, requires_grad=True)
    tape._record(out, tuple(inputs), backward_fn)
    return out


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    # never accumulate in place: backward closures may hand out shared views
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape``, inverting numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _emit(out, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _emit(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _emit(out, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    out = a.data * s

    def backward(g):
        _accum(a, g * s)

    return _emit(out, (a,), backward)


def square(a: Tensor) -> Tensor:
    out = a.data * a.data

    def backward(g):
        _accum(a, 2.0 * g * a.data)

    return _emit(out, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.data.shape} x {b.data.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        _accum(a, _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.data.shape))
        _accum(b, _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.data.shape))

    return _emit(out, (a, b), backward)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    return _emit(out, (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = np.ascontiguousarray(a.data.transpose(axes))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        _accum(a, g.transpose(inverse))

    return _emit(out, (a,), backward)


def index_last(a: Tensor, i: int) -> Tensor:
    """Select index ``i`` of the last axis, dropping that axis."""
    out = np.ascontiguousarray(a.data[..., i])

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[..., i] = g
        _accum(a, ga)

    return _emit(out, (a,), backward)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of ``table`` by integer ids (any id-array shape)."""
    out = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        _accum(table, gt)

    return _emit(out, (table,), backward)


# ---------------------------------------------------------------------------
# reductions


def tensor_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return _emit(np.asarray(out), (a,), backward)


def tensor_mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# nonlinearities


def _check_axis(a: Tensor, axis: int):
    if not -a.data.ndim <= axis < a.data.ndim:
        raise DimensionError(f"axis {axis} invalid for shape {a.data.shape}")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    _check_axis(a, axis)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accum(a, out * (g - dot))

    return _emit(out, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    _check_axis(a, axis)
    m = a.data.max(axis=axis, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def backward(g):
        _accum(a, g - soft * g.sum(axis=axis, keepdims=True))

    return _emit(out, (a,), backward)


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit, exact erf form."""
    cdf = 0.5 * (1.0 + erf(a.data * _SQRT1_2))
    out = a.data * cdf

    def backward(g):
        pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT_2PI
        _accum(a, g * (cdf + a.data * pdf))

    return _emit(out, (a,), backward)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize over the last axis with learned gain and bias."""
    if gain.data.shape != a.data.shape[-1:] or bias.data.shape != a.data.shape[-1:]:
        raise DimensionError(
            f"layer_norm gain/bias {gain.data.shape}/{bias.data.shape} "
            f"do not match last axis of {a.data.shape}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        dxhat = g * gain.data
        term = dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        _accum(a, term * inv)
        red = tuple(range(a.data.ndim - 1))
        _accum(gain, (g * xhat).sum(axis=red))
        _accum(bias, g.sum(axis=red))

    return _emit(out, (a, gain, bias), backward)


def dropout(a: Tensor, p: float, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout; p == 0 is an exact identity (no node recorded)."""
    if p == 0.0:
        return a
    if rng is None:
        raise ContractError("dropout with p > 0 needs an rng for determinism")
    keep = (rng.random(a.data.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    out = a.data * keep

    def backward(g):
        _accum(a, g * keep)

    return _emit(out, (a,), backward)


def masked_fill(a: Tensor, keep_mask: np.ndarray, value: float) -> Tensor:
    """Where ``keep_mask`` is true keep ``a``, elsewhere emit ``value``.

    Gradient flows only through kept positions.
    """
    keep = np.broadcast_to(keep_mask.astype(bool), a.data.shape)
    out = np.where(keep, a.data, a.data.dtype.type(value))

    def backward(g):
        _accum(a, np.where(keep, g, 0.0))

    return _emit(out, (a,), backward)


# ---------------------------------------------------------------------------
# sequence kernels (shape-normalizing wrappers over the selected backend)


def _as_blc(x: np.ndarray):
    """View 1-D/2-D input as (batch, length, channels); report what was added."""
    if x.ndim == 2:
        return x[None], "2d"
    if x.ndim == 3:
        return x, "3d"
    raise DimensionError(f"expected (L, C) or (B, L, C), got shape {x.shape}")


def conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """'Same' zero-padded stride-1 convolution along the sequence axis.

    x: (B, L, Cin) or (L, Cin); w: (K, Cin, Cout) with odd K; b: (Cout,).
    """
    xd, mode = _as_blc(x.data)
    K, Cin, Cout = w.data.shape
    if K % 2 == 0:
        raise DimensionError(f"conv1d kernel width must be odd, got {K}")
    if xd.shape[2] != Cin:
        raise DimensionError(f"conv1d channels mismatch: input {xd.shape} vs filters {w.data.shape}")
    xd = np.ascontiguousarray(xd)
    out = kernels.conv1d_same(xd, w.data, b.data)

    def backward(g):
        g3 = np.ascontiguousarray(g[None] if mode == "2d" else g)
        gx, gw, gb = kernels.conv1d_same_backward(xd, w.data, g3)
        _accum(x, gx[0] if mode == "2d" else gx)
        _accum(w, gw)
        _accum(b, gb)

    return _emit(out[0] if mode == "2d" else out, (x, w, b), backward)


def maxpool1d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pool along the sequence axis; ties route to the lowest index."""
    xd, mode = _as_blc(x.data)
    B, L, C = xd.shape
    if L % size:
        raise LengthError(f"maxpool1d length {L} not divisible by window {size}")
    out, arg = kernels.maxpool1d(np.ascontiguousarray(xd), size)

    def backward(g):
        g3 = np.ascontiguousarray(g[None] if mode == "2d" else g)
        gx = kernels.maxpool1d_backward(arg, g3, size, L)
        _accum(x, gx[0] if mode == "2d" else gx)

    return _emit(out[0] if mode == "2d" else out, (x,), backward)


def avgpool1d(x: Tensor, size: int = 4) -> Tensor:
    """Non-overlapping mean pool along the sequence axis."""
    xd, mode = _as_blc(x.data)
    B, L, C = xd.shape
    if L % size:
        raise LengthError(f"avgpool1d length {L} not divisible by window {size}")
    out = kernels.avgpool1d(np.ascontiguousarray(xd), size)

    def backward(g):
        g3 = np.ascontiguousarray(g[None] if mode == "2d" else g)
        gx = kernels.avgpool1d_backward(g3, size, L)
        _accum(x, gx[0] if mode == "2d" else gx)

    return _emit(out[0] if mode == "2d" else out, (x,), backward)


def maxpool2d(x: Tensor, size: int = 4) -> Tensor:
    """Window max over the trailing two axes (size x size, same stride)."""
    xd = x.data
    if xd.ndim < 2:
        raise DimensionError(f"maxpool2d needs >=2-d input, got shape {xd.shape}")
    lead = xd.shape[:-2]
    R, C = xd.shape[-2:]
    if R % size or C % size:
        raise LengthError(f"maxpool2d extents {R}x{C} not divisible by window {size}")
    x3 = np.ascontiguousarray(xd.reshape(-1, R, C))
    out, arg = kernels.maxpool2d(x3, size)

    def backward(g):
        g3 = np.ascontiguousarray(g.reshape(-1, R // size, C // size))
        gx = kernels.maxpool2d_backward(arg, g3, size, R, C)
        _accum(x, gx.reshape(xd.shape))

    return _emit(out.reshape(lead + (R // size, C // size)), (x,), backward)


def upsample1d(x: Tensor, factor: int = 2) -> Tensor:
    """Nearest-neighbor upsampling along the sequence axis; gradient sums over copies."""
    xd, mode = _as_blc(x.data)
    out = kernels.upsample1d(np.ascontiguousarray(xd), factor)

    def backward(g):
        g3 = np.ascontiguousarray(g[None] if mode == "2d" else g)
        gx = kernels.upsample1d_backward(g3, factor)
        _accum(x, gx[0] if mode == "2d" else gx)

    return _emit(out[0] if mode == "2d" else out, (x,), backward)
