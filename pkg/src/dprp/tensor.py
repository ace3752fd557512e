"""Dense tensors with tape-based reverse-mode differentiation.

Operations executed while a :class:`GradTape` is active are appended to it
when at least one operand is tracked (a parameter or something computed from
one). :func:`backward` then replays the tape in reverse order.

Precision is an engine-wide setting: 32-bit for training, 64-bit for the
oracle and property tests.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, NumericError, UsageError

_DTYPES = {32: np.float32, 64: np.float64}
_dtype = np.float32
_tapes: list["GradTape"] = []
_alloc_hooks: list[Callable[[str, tuple], None]] = []


def get_dtype():
    return _dtype


def set_precision(bits: int) -> None:
    global _dtype
    if bits not in _DTYPES:
        raise UsageError(f"precision must be 32 or 64, got {bits}")
    _dtype = _DTYPES[bits]


@contextlib.contextmanager
def precision(bits: int):
    """Temporarily switch the engine precision."""
    old = _dtype
    set_precision(bits)
    try:
        yield
    finally:
        globals()["_dtype"] = old


@contextlib.contextmanager
def alloc_audit(hook: Callable[[str, tuple], None]):
    """Call ``hook(op_name, shape)`` for every tensor produced inside the block."""
    _alloc_hooks.append(hook)
    try:
        yield
    finally:
        _alloc_hooks.remove(hook)


def _check_finite(op: str, data: np.ndarray) -> None:
    if not np.isfinite(data).all():
        raise NumericError(f"non-finite value produced by '{op}' (shape {data.shape})")


class Tensor:
    """An n-d array of the engine dtype plus autograd bookkeeping."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=_dtype)
        _check_finite(name or "tensor", arr)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self.grad: np.ndarray | None = None
        self._tracked = requires_grad

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = False
        t.name = None
        t.grad = None
        t._tracked = False
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, dtype={self.data.dtype})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self) -> "Tensor":
        return tsum(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=_dtype))


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


# --------------------------------------------------------------------------
# Tape
# --------------------------------------------------------------------------


@dataclass
class TapeEntry:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class GradTape:
    """Ordered record of differentiable operations. Single-owner; not thread-safe."""

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def __enter__(self) -> "GradTape":
        _tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tapes.remove(self)

    def __len__(self) -> int:
        return len(self.entries)


def current_tape() -> GradTape | None:
    return _tapes[-1] if _tapes else None


def _result(op: str, data: np.ndarray, inputs: tuple, backward_fn) -> Tensor:
    data = np.asarray(data, dtype=_dtype)
    _check_finite(op, data)
    for hook in _alloc_hooks:
        hook(op, data.shape)
    out = Tensor._wrap(data)
    tape = current_tape()
    if tape is not None and any(t._tracked for t in inputs):
        out._tracked = True
        tape.entries.append(TapeEntry(op, inputs, out, backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(loss: Tensor, tape: GradTape, params: Iterable[Tensor] | None = None) -> dict:
    """Reverse sweep over ``tape``; returns ``{parameter: gradient}``.

    Every parameter recorded on the tape, plus any listed in ``params``,
    gets an entry (zeros when unreached). ``param.grad`` is set as well.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for entry in reversed(tape.entries):
        g = grads.pop(id(entry.output), None)
        if g is None:
            continue
        for t, gi in zip(entry.inputs, entry.backward(g)):
            if gi is None or not t._tracked:
                continue
            gi = _unbroadcast(np.asarray(gi, dtype=t.data.dtype), t.shape)
            key = id(t)
            grads[key] = grads[key] + gi if key in grads else gi
            if t.requires_grad:
                leaves[key] = t
    if loss.requires_grad:
        leaves[id(loss)] = loss
    for p in params or ():
        leaves.setdefault(id(p), p)
    result = {}
    for key, t in leaves.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(t.data)
        t.grad = g
        result[t] = g
    return result


# --------------------------------------------------------------------------
# Primitives
# --------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _result("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if np.any(bd == 0):
        raise NumericError("division by zero in 'div'")
    out = ad / bd
    return _result("div", out, (a, b), lambda g: (g / bd, -g * out / bd))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result("scale", a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _result("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result("relu", np.where(mask, a.data, 0), (a,), lambda g: (g * mask,))


maximum_zero = relu


def tabs(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return _result("abs", np.abs(a.data), (a,), lambda g: (g * sign,))


def tsum(a: Tensor) -> Tensor:
    shape = a.shape
    return _result("sum", np.sum(a.data), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return _result("mean", np.mean(a.data), (a,), lambda g: (np.full(shape, g / n, dtype=a.data.dtype),))


def l2_norm(a: Tensor) -> Tensor:
    """Euclidean (Frobenius for matrices) norm; subgradient 0 at the origin."""
    ad = a.data
    nrm = np.sqrt(np.sum(ad * ad))

    def _back(g):
        if nrm == 0:
            return (np.zeros_like(ad),)
        return (g * ad / nrm,)

    return _result("l2_norm", nrm, (a,), _back)


frobenius_norm = l2_norm


def reshape(a: Tensor, shape: tuple) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {src} to {shape}") from exc
    return _result("reshape", out, (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes: tuple | None = None) -> Tensor:
    if axes is None:
        if a.ndim != 2:
            raise DimensionError(f"transpose without axes needs a matrix, got {a.shape}")
        axes = (1, 0)
    inv = tuple(np.argsort(axes))
    return _result(
        "transpose", np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inv),)
    )


def take(a: Tensor, idx) -> Tensor:
    """Basic indexing / slicing with a scatter backward."""
    shape, dtype = a.shape, a.data.dtype

    def _back(g):
        full = np.zeros(shape, dtype=dtype)
        full[idx] += g
        return (full,)

    return _result("take", np.array(a.data[idx]), (a,), _back)
