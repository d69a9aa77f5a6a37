"""Reverse-mode autodiff on numpy-backed tensors.

A Tensor wraps a C-contiguous numpy array. Applying a primitive while a
Tape is active records the application; backward() replays the tape in
reverse and accumulates gradients into ``.grad`` buffers. The module also
carries the finite-difference oracle used by every gradient test and an
allocation meter that tracks bytes held by live Tensors (the scaling
bench reads peaks from it and can impose a synthetic cap).
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    ContractError,
    DimensionError,
    MemoryCapExceededError,
    NumericDomainError,
    UnsupportedPrimitiveError,
)

__all__ = [
    "Tensor",
    "Tape",
    "tensor",
    "constant",
    "parameter",
    "primitive_forward",
    "backward",
    "zero_grads",
    "finite_difference_gradient",
    "gradient_check",
    "record",
    "active_tape",
    "pause_recording",
    "checked_mode",
    "set_checked",
    "default_dtype",
    "set_default_dtype",
    "meter",
]


# --------------------------------------------------------------------------
# global mode switches
# --------------------------------------------------------------------------

class _Mode:
    __slots__ = ("checked", "dtype")

    def __init__(self):
        self.checked = True
        self.dtype = np.float64


_MODE = _Mode()


def set_checked(flag: bool) -> None:
    """Toggle per-primitive non-finite detection."""
    _MODE.checked = bool(flag)


@contextlib.contextmanager
def checked_mode(flag: bool):
    old = _MODE.checked
    _MODE.checked = bool(flag)
    try:
        yield
    finally:
        _MODE.checked = old


def set_default_dtype(dtype) -> None:
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ContractError(f"unsupported dtype {dt}; float32/float64 only")
    _MODE.dtype = dt.type


@contextlib.contextmanager
def default_dtype(dtype):
    old = _MODE.dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _MODE.dtype = old


# --------------------------------------------------------------------------
# allocation meter
# --------------------------------------------------------------------------

class MemoryMeter:
    """Counts bytes owned by live Tensors (data + materialized grads).

    peak_bytes is a high-water mark since the last reset. An optional cap
    turns over-limit allocation into MemoryCapExceededError, which is how
    the bench emulates OOM deterministically.
    """

    __slots__ = ("live_bytes", "peak_bytes", "cap_bytes")

    def __init__(self):
        self.live_bytes = 0
        self.peak_bytes = 0
        self.cap_bytes: int | None = None

    def allocate(self, n: int) -> None:
        self.live_bytes += n
        if self.live_bytes > self.peak_bytes:
            self.peak_bytes = self.live_bytes
        if self.cap_bytes is not None and self.live_bytes > self.cap_bytes:
            raise MemoryCapExceededError(n, self.live_bytes, self.cap_bytes)

    def release(self, n: int) -> None:
        self.live_bytes -= n

    def reset_peak(self) -> None:
        self.peak_bytes = self.live_bytes

    def set_cap(self, cap: int | None) -> None:
        self.cap_bytes = cap


meter = MemoryMeter()


# --------------------------------------------------------------------------
# Tensor
# --------------------------------------------------------------------------

class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_counted", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else _MODE.dtype)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._counted = arr.nbytes
        meter.allocate(arr.nbytes)

    def __del__(self):
        try:
            meter.release(self._counted)
        except Exception:
            pass  # interpreter teardown

    # -- grad buffer management (all grad mutation flows through these) ----

    def _grad_buffer(self) -> np.ndarray:
        if self.grad is None:
            g = np.zeros_like(self.data)
            self.grad = g
            self._counted += g.nbytes
            meter.allocate(g.nbytes)
        return self.grad

    def clear_grad(self) -> None:
        if self.grad is not None:
            n = self.grad.nbytes
            self.grad = None
            self._counted -= n
            meter.release(n)

    # -- conveniences ------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.item())

    def __repr__(self):
        head = np.array2string(self.data, precision=4, threshold=6)
        return f"Tensor({head}, requires_grad={self.requires_grad})"

    # operator sugar; scalars are lifted to constants of the same dtype
    def __add__(self, other):
        return add(self, _lift(other, self))

    def __radd__(self, other):
        return add(_lift(other, self), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, _lift(other, self))

    def __rmul__(self, other):
        return mul(_lift(other, self), self)

    def __truediv__(self, other):
        return div(self, _lift(other, self))

    def __rtruediv__(self, other):
        return div(_lift(other, self), self)

    def __matmul__(self, other):
        return matmul(self, _lift(other, self))

    def __neg__(self):
        return neg(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def flatten(self):
        return reshape(self, (-1,))

    def sum(self, axis=None, keepdims=False):
        return sum_reduce(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_reduce(self, axis=axis, keepdims=keepdims)

    def transpose(self, axes=None):
        return transpose(self, axes=axes)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


def parameter(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype), requires_grad=False,
                  dtype=like.data.dtype)


# --------------------------------------------------------------------------
# tape
# --------------------------------------------------------------------------

class _Entry:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of primitive applications.

    Topological by construction: an op's inputs were recorded (or are
    leaves) before its output, so one reverse sweep visits every node
    after all its consumers.
    """

    __slots__ = ("entries",)

    def __init__(self):
        self.entries: list[_Entry] = []

    def __len__(self):
        return len(self.entries)


_TAPE_STACK: list[Tape | None] = []


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


@contextlib.contextmanager
def record():
    """Activate a fresh tape. Nested recording is a caller bug."""
    if active_tape() is not None:
        raise ContractError("a tape is already recording; nesting is not allowed")
    t = Tape()
    _TAPE_STACK.append(t)
    try:
        yield t
    finally:
        _TAPE_STACK.pop()


@contextlib.contextmanager
def pause_recording():
    """Suspend the active tape (e.g. mid-training validation)."""
    _TAPE_STACK.append(None)
    try:
        yield
    finally:
        _TAPE_STACK.pop()


def backward(tape: Tape, loss: Tensor) -> None:
    """Reverse sweep seeding d(loss)/d(loss)=1.

    Leaf grads accumulate across calls until zero_grads; grads of tape
    intermediates are reset per call so a repeated backward adds exactly
    one more d(loss) to every leaf.
    """
    if loss.data.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    produced = {id(e.output) for e in tape.entries}
    for e in tape.entries:
        e.output.clear_grad()
    if id(loss) not in produced and not loss.requires_grad:
        raise ContractError("loss does not depend on any recorded tensor")
    loss._grad_buffer()[...] = 1.0
    for e in reversed(tape.entries):
        g = e.output.grad
        if g is None:
            continue
        e.backward_fn(g)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.clear_grad()


def _acc(t: Tensor, g: np.ndarray) -> None:
    # accumulate into t.grad; shape must already match exactly
    if not t.requires_grad:
        return
    buf = t._grad_buffer()
    buf += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape` (reverses numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# --------------------------------------------------------------------------
# primitive machinery
# --------------------------------------------------------------------------

_PRIMITIVES: dict[str, Callable] = {}
_UNCHECKED_OUTPUT = {"masked_fill"}  # validates its own kept entries


def _primitive(op_id: str):
    def deco(fn):
        _PRIMITIVES[op_id] = fn
        return fn
    return deco


def _apply(op_id: str, inputs: Sequence[Tensor], attrs: dict) -> Tensor:
    rule = _PRIMITIVES.get(op_id)
    if rule is None:
        raise UnsupportedPrimitiveError(f"no primitive registered for op id '{op_id}'")
    for t in inputs:
        if not isinstance(t, Tensor):
            raise ContractError(f"{op_id}: inputs must be Tensors, got {type(t).__name__}")
    # checked mode is the non-finite detector; numpy warnings would be noise
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        out_data, backward_fn = rule(inputs, attrs or {})
    if _MODE.checked and op_id not in _UNCHECKED_OUTPUT:
        if not np.all(np.isfinite(out_data)):
            raise NumericDomainError(f"{op_id} produced a non-finite value in checked mode")
    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.entries.append(_Entry(tuple(inputs), out, backward_fn))
    return out


def primitive_forward(op_id: str, inputs: Sequence[Tensor], attrs: dict | None = None) -> Tensor:
    """Uniform dispatch entry; unknown op ids raise UnsupportedPrimitiveError."""
    return _apply(op_id, inputs, attrs or {})


# --------------------------------------------------------------------------
# elementwise arithmetic
# --------------------------------------------------------------------------

@_primitive("add")
def _p_add(inputs, attrs):
    a, b = inputs
    out = a.data + b.data

    def bwd(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(g, b.data.shape))
    return out, bwd


@_primitive("sub")
def _p_sub(inputs, attrs):
    a, b = inputs
    out = a.data - b.data

    def bwd(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(-g, b.data.shape))
    return out, bwd


@_primitive("mul")
def _p_mul(inputs, attrs):
    a, b = inputs
    out = a.data * b.data

    def bwd(g):
        _acc(a, _unbroadcast(g * b.data, a.data.shape))
        _acc(b, _unbroadcast(g * a.data, b.data.shape))
    return out, bwd


@_primitive("div")
def _p_div(inputs, attrs):
    a, b = inputs
    out = a.data / b.data

    def bwd(g):
        _acc(a, _unbroadcast(g / b.data, a.data.shape))
        _acc(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))
    return out, bwd


@_primitive("neg")
def _p_neg(inputs, attrs):
    (a,) = inputs
    out = -a.data

    def bwd(g):
        _acc(a, -g)
    return out, bwd


def add(a: Tensor, b: Tensor) -> Tensor:
    return _apply("add", (a, b), {})


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _apply("sub", (a, b), {})


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _apply("mul", (a, b), {})


def div(a: Tensor, b: Tensor) -> Tensor:
    return _apply("div", (a, b), {})


def neg(a: Tensor) -> Tensor:
    return _apply("neg", (a,), {})


# --------------------------------------------------------------------------
# matmul / transpose
# --------------------------------------------------------------------------

@_primitive("matmul")
def _p_matmul(inputs, attrs):
    a, b = inputs
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(
            f"matmul shapes {a.data.shape} x {b.data.shape} are incompatible"
        ) from exc

    a1, b1 = a.data.ndim == 1, b.data.ndim == 1

    def bwd(g):
        ad = a.data[None, :] if a1 else a.data
        bd = b.data[:, None] if b1 else b.data
        ge = g
        if b1:
            ge = ge[..., None]
        if a1:
            ge = ge[..., None, :]
        ga = np.matmul(ge, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), ge)
        if a1:
            ga = ga.reshape((-1, ad.shape[-1])).sum(axis=0)
        else:
            ga = _unbroadcast(ga, a.data.shape)
        if b1:
            gb = gb.reshape((-1, bd.shape[-2], 1)).sum(axis=0)[:, 0]
        else:
            gb = _unbroadcast(gb, b.data.shape)
        _acc(a, ga)
        _acc(b, gb)
    return out, bwd


@_primitive("transpose")
def _p_transpose(inputs, attrs):
    (a,) = inputs
    axes = attrs.get("axes")
    if axes is None:
        if a.data.ndim < 2:
            raise DimensionError("transpose default needs rank >= 2")
        axes = tuple(range(a.data.ndim - 2)) + (a.data.ndim - 1, a.data.ndim - 2)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.data.ndim)):
        raise DimensionError(f"bad transpose axes {axes} for rank {a.data.ndim}")
    out = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def bwd(g):
        _acc(a, np.transpose(g, inv))
    return out, bwd


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return _apply("matmul", (a, b), {})


def transpose(a: Tensor, axes=None) -> Tensor:
    return _apply("transpose", (a,), {"axes": axes})


# --------------------------------------------------------------------------
# nonlinearities
# --------------------------------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    # piecewise form avoids overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@_primitive("exp")
def _p_exp(inputs, attrs):
    (a,) = inputs
    out = np.exp(a.data)

    def bwd(g):
        _acc(a, g * out)
    return out, bwd


@_primitive("tanh")
def _p_tanh(inputs, attrs):
    (a,) = inputs
    out = np.tanh(a.data)

    def bwd(g):
        _acc(a, g * (1.0 - out * out))
    return out, bwd


@_primitive("sigmoid")
def _p_sigmoid(inputs, attrs):
    (a,) = inputs
    out = _sigmoid(a.data)

    def bwd(g):
        _acc(a, g * out * (1.0 - out))
    return out, bwd


@_primitive("softplus")
def _p_softplus(inputs, attrs):
    (a,) = inputs
    x = a.data
    # identity branch above 30 keeps exp() in range
    out = np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))

    def bwd(g):
        _acc(a, g * _sigmoid(x))
    return out, bwd


@_primitive("silu")
def _p_silu(inputs, attrs):
    (a,) = inputs
    s = _sigmoid(a.data)
    out = a.data * s

    def bwd(g):
        _acc(a, g * (s * (1.0 + a.data * (1.0 - s))))
    return out, bwd


@_primitive("relu")
def _p_relu(inputs, attrs):
    (a,) = inputs
    pos = a.data > 0.0
    out = np.where(pos, a.data, 0.0)

    def bwd(g):
        _acc(a, np.where(pos, g, 0.0))
    return out, bwd


def exp(a: Tensor) -> Tensor:
    return _apply("exp", (a,), {})


def tanh(a: Tensor) -> Tensor:
    return _apply("tanh", (a,), {})


def sigmoid(a: Tensor) -> Tensor:
    return _apply("sigmoid", (a,), {})


def softplus(a: Tensor) -> Tensor:
    return _apply("softplus", (a,), {})


def silu(a: Tensor) -> Tensor:
    return _apply("silu", (a,), {})


def relu(a: Tensor) -> Tensor:
    return _apply("relu", (a,), {})


# --------------------------------------------------------------------------
# softmax / layer norm
# --------------------------------------------------------------------------

@_primitive("softmax")
def _p_softmax(inputs, attrs):
    (a,) = inputs
    x = a.data
    m = np.max(x, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)  # rows that are all -inf would poison exp
    e = np.exp(x - m)
    z = e.sum(axis=-1, keepdims=True)
    if np.any(z == 0.0):
        raise NumericDomainError("softmax saw a fully masked row")
    out = e / z

    def bwd(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        _acc(a, out * (g - dot))
    return out, bwd


@_primitive("layer_norm")
def _p_layer_norm(inputs, attrs):
    a, gamma, beta = inputs
    eps = float(attrs.get("eps", 1e-5))
    d = a.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise DimensionError("layer_norm scale/shift must match the last axis")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bwd(g):
        gg = g * gamma.data
        m1 = gg.mean(axis=-1, keepdims=True)
        m2 = (gg * xhat).mean(axis=-1, keepdims=True)
        _acc(a, inv * (gg - m1 - xhat * m2))
        red = tuple(range(g.ndim - 1))
        _acc(gamma, (g * xhat).sum(axis=red))
        _acc(beta, g.sum(axis=red))
    return out, bwd


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis with max subtraction."""
    return _apply("softmax", (a,), {})


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    return _apply("layer_norm", (a, gamma, beta), {"eps": eps})


# --------------------------------------------------------------------------
# depthwise causal conv
# --------------------------------------------------------------------------

@_primitive("conv1d_causal")
def _p_conv1d_causal(inputs, attrs):
    a, kern = inputs
    x = a.data
    w = kern.data
    if x.ndim < 2:
        raise DimensionError("conv1d_causal input must be (..., time, channels)")
    t_len, c = x.shape[-2], x.shape[-1]
    if w.ndim != 2 or w.shape[0] != c:
        raise DimensionError(
            f"kernel must be (channels={c}, width), got {w.shape}"
        )
    k = w.shape[1]
    pad = [(0, 0)] * (x.ndim - 2) + [(k - 1, 0), (0, 0)]
    xp = np.pad(x, pad)
    out = np.zeros_like(x)
    for j in range(k):
        # tap j reads x[t - (k-1) + j]; left zero padding keeps it causal
        out += w[:, j] * xp[..., j:j + t_len, :]

    def bwd(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w)
        for j in range(k):
            gxp[..., j:j + t_len, :] += g * w[:, j]
            gw[:, j] = (g * xp[..., j:j + t_len, :]).reshape(-1, c).sum(axis=0)
        _acc(a, gxp[..., k - 1:, :])
        _acc(kern, gw)
    return out, bwd


def conv1d_causal(a: Tensor, kernel: Tensor) -> Tensor:
    """Per-channel causal convolution; time is axis -2, channels axis -1."""
    return _apply("conv1d_causal", (a, kernel), {})


# --------------------------------------------------------------------------
# shape ops
# --------------------------------------------------------------------------

@_primitive("reshape")
def _p_reshape(inputs, attrs):
    (a,) = inputs
    shape = tuple(attrs["shape"])
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.data.shape} to {shape}") from exc
    out = np.ascontiguousarray(out)
    orig = a.data.shape

    def bwd(g):
        _acc(a, g.reshape(orig))
    return out, bwd


@_primitive("concat")
def _p_concat(inputs, attrs):
    axis = int(attrs.get("axis", 0))
    if not inputs:
        raise ContractError("concat needs at least one input")
    try:
        out = np.concatenate([t.data for t in inputs], axis=axis)
    except ValueError as exc:
        raise DimensionError("concat operand shapes are incompatible") from exc
    sizes = [t.data.shape[axis] for t in inputs]

    def bwd(g):
        start = 0
        for t, n in zip(inputs, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + n)
            _acc(t, g[tuple(sl)])
            start += n
    return out, bwd


@_primitive("slice")
def _p_slice(inputs, attrs):
    (a,) = inputs
    axis = int(attrs["axis"])
    start, stop = int(attrs["start"]), int(attrs["stop"])
    n = a.data.shape[axis]
    if not (0 <= start <= stop <= n):
        raise DimensionError(f"slice [{start}:{stop}] out of range for axis size {n}")
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    out = a.data[sl].copy()  # no view aliasing

    def bwd(g):
        if a.requires_grad:
            a._grad_buffer()[sl] += g
    return out, bwd


@_primitive("masked_fill")
def _p_masked_fill(inputs, attrs):
    (a,) = inputs
    mask = np.asarray(attrs["mask"], dtype=bool)
    value = float(attrs["value"])
    try:
        out = np.where(mask, np.asarray(value, dtype=a.data.dtype), a.data)
    except ValueError as exc:
        raise DimensionError(
            f"mask shape {mask.shape} does not broadcast with {a.data.shape}"
        ) from exc
    if _MODE.checked:
        keep = ~np.broadcast_to(mask, out.shape)
        if not np.all(np.isfinite(out[keep])):
            raise NumericDomainError("masked_fill kept a non-finite value")
    keep_f = ~mask

    def bwd(g):
        _acc(a, _unbroadcast(np.where(keep_f, g, 0.0), a.data.shape))
    return out, bwd


@_primitive("where")
def _p_where(inputs, attrs):
    a, b = inputs
    cond = np.asarray(attrs["cond"], dtype=bool)
    out = np.where(cond, a.data, b.data)

    def bwd(g):
        _acc(a, _unbroadcast(np.where(cond, g, 0.0), a.data.shape))
        _acc(b, _unbroadcast(np.where(cond, 0.0, g), b.data.shape))
    return out, bwd


@_primitive("sum")
def _p_sum(inputs, attrs):
    (a,) = inputs
    axis = attrs.get("axis")
    keepdims = bool(attrs.get("keepdims", False))
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.data.shape

    def bwd(g):
        ge = g
        if axis is not None and not keepdims:
            ge = np.expand_dims(g, axis)
        _acc(a, np.broadcast_to(ge, shape).copy() if np.ndim(ge) else
             np.full(shape, ge, dtype=a.data.dtype))
    return out, bwd


@_primitive("mean")
def _p_mean(inputs, attrs):
    (a,) = inputs
    axis = attrs.get("axis")
    keepdims = bool(attrs.get("keepdims", False))
    out = a.data.mean(axis=axis, keepdims=keepdims)
    shape = a.data.shape
    if axis is None:
        count = a.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.data.shape[ax] for ax in axis]))
    else:
        count = a.data.shape[axis]

    def bwd(g):
        ge = g
        if axis is not None and not keepdims:
            ge = np.expand_dims(g, axis)
        scaled = ge / count
        _acc(a, np.broadcast_to(scaled, shape).copy() if np.ndim(scaled) else
             np.full(shape, scaled, dtype=a.data.dtype))
    return out, bwd


def reshape(a: Tensor, shape) -> Tensor:
    return _apply("reshape", (a,), {"shape": tuple(shape)})


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return _apply("concat", tuple(tensors), {"axis": axis})


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Copying slice along one axis (no view aliasing)."""
    return _apply("slice", (a,), {"axis": axis, "start": start, "stop": stop})


def masked_fill(a: Tensor, mask, value: float) -> Tensor:
    """Set entries where mask is True to `value` (used for -inf attention masks)."""
    return _apply("masked_fill", (a,), {"mask": mask, "value": value})


def where(cond, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise select on a constant boolean condition."""
    return _apply("where", (a, b), {"cond": cond})


def sum_reduce(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return _apply("sum", (a,), {"axis": axis, "keepdims": keepdims})


def mean_reduce(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return _apply("mean", (a,), {"axis": axis, "keepdims": keepdims})


# --------------------------------------------------------------------------
# finite differences
# --------------------------------------------------------------------------

def finite_difference_gradient(f: Callable[[], Tensor | float], x: Tensor,
                               h: float = 1e-5) -> np.ndarray:
    """Central-difference d f / d x, perturbing one entry at a time.

    f is re-evaluated 2*x.size times with recording suspended; x.data is
    restored bit-exactly afterwards.
    """
    if h <= 0:
        raise ContractError("finite difference step must be positive")
    grad = np.zeros_like(x.data, dtype=np.float64)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    with pause_recording():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = _scalar(f())
            flat[i] = orig - h
            fm = _scalar(f())
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def _scalar(v) -> float:
    if isinstance(v, Tensor):
        return float(v.data)
    return float(v)


def gradient_check(f: Callable[[], Tensor], wrt: Sequence[Tensor],
                   h: float = 1e-5) -> float:
    """Max norm-relative error between tape gradients and central differences.

    Returns max over `wrt` of ||g_tape - g_fd|| / max(||g_tape||, ||g_fd||, 1e-12).
    """
    zero_grads(wrt)
    with record() as tape:
        loss = f()
    backward(tape, loss)
    worst = 0.0
    for p in wrt:
        g_fd = finite_difference_gradient(f, p, h=h)
        g_an = p.grad if p.grad is not None else np.zeros_like(p.data)
        denom = max(float(np.linalg.norm(g_an)), float(np.linalg.norm(g_fd)), 1e-12)
        rel = float(np.linalg.norm(np.asarray(g_an, dtype=np.float64) - g_fd)) / denom
        worst = max(worst, rel)
    return worst
