"""Dense 2-D arrays with a tape-based reverse-mode differentiation engine.

Every value is a float64 numpy array of rank 2 (scalars are 1x1). Operations on
:class:`Var` objects that belong to a :class:`Tape` are recorded in creation
order; :meth:`Tape.backward` walks that list once in reverse.

The primitive set is small on purpose: matmul, add (with row-vector bias
broadcast), sub, Hadamard product, scale, square, sum, abs, the sigmoid family
f/f'/f'', sin/cos, the two structural ops ``columns`` and ``hstack`` that the
candidate library needs, and a fused squared-distance sum used by the losses. Each has one hand-written vector-Jacobian product.
"""

from __future__ import annotations

import weakref
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "Tape",
    "Var",
    "as_array2",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "square",
    "sum_all",
    "sum_sq_diff",
    "absolute",
    "sigmoid_family",
    "sigmoid_deriv",
    "sin",
    "cos",
    "columns",
    "hstack",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


def as_array2(value, name: str = "array") -> np.ndarray:
    """Coerce ``value`` to a C-contiguous float64 matrix (scalars become 1x1)."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def sigmoid_deriv(x: np.ndarray, order: int) -> np.ndarray:
    """Elementwise k-th derivative of the logistic function for k in 0..3."""
    s = 0.5 * (1.0 + np.tanh(0.5 * x))  # overflow-free logistic
    if order == 0:
        return s
    ds = s * (1.0 - s)
    if order == 1:
        return ds
    if order == 2:
        return ds * (1.0 - 2.0 * s)
    if order == 3:
        return ds * (1.0 - 6.0 * ds)
    raise ValueError(f"sigmoid derivative order must be 0..3, got {order}")


VJP = Callable[[np.ndarray], np.ndarray]


class Var:
    """A node holding a forward value and, when traced, how to pull gradients back."""

    __slots__ = ("value", "_tape", "parents", "requires_grad", "name")

    def __init__(self, value, tape: "Tape | None" = None, parents=(), name=None):
        self.value = value if isinstance(value, np.ndarray) and value.dtype == np.float64 and value.ndim == 2 else as_array2(value)
        # weak, so tape -> node -> tape is not a cycle and batches are freed promptly
        self._tape = None if tape is None else weakref.ref(tape)
        self.parents: tuple[tuple[Var, VJP], ...] = tuple(parents)
        self.requires_grad = tape is not None
        self.name = name

    @property
    def tape(self) -> "Tape | None":
        return None if self._tape is None else self._tape()

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Var{tag}(shape={self.shape}, traced={self.requires_grad})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Ordered record of traced operations plus the named parameters they depend on."""

    def __init__(self, check_finite: bool = True):
        self.nodes: list[Var] = []
        self.params: dict[str, Var] = {}
        self.check_finite = check_finite

    def param(self, name: str, value) -> Var:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already on tape")
        v = Var(as_array2(value, name), tape=self, name=name)
        self.params[name] = v
        self.nodes.append(v)
        return v

    def _record(self, value: np.ndarray, parents) -> Var:
        if self.check_finite and not np.all(np.isfinite(value)):
            raise FloatingPointError("non-finite value produced on tape")
        v = Var(value, tape=self, parents=parents)
        self.nodes.append(v)
        return v

    def backward(self, loss: Var) -> dict[str, np.ndarray]:
        """Gradient of the scalar ``loss`` with respect to every parameter on the tape.

        Parameters that do not influence ``loss`` get a zero array of their shape.
        """
        if loss.shape != (1, 1):
            raise ValueError(f"backward needs a scalar (1x1) loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {}
        if loss.requires_grad:
            if loss.tape is not self:
                raise ValueError("loss was recorded on a different tape")
            grads[id(loss)] = np.ones((1, 1))
            for node in reversed(self.nodes):
                g = grads.get(id(node))
                if g is None:
                    continue
                for parent, vjp in node.parents:
                    contrib = vjp(g)
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + contrib
                    else:
                        grads[key] = contrib
        return {
            name: grads.get(id(p), np.zeros_like(p.value)).copy()
            for name, p in self.params.items()
        }


def _lift(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _tape_of(*xs: Var) -> Tape | None:
    tape = None
    for x in xs:
        if x.requires_grad:
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ValueError("operands belong to different tapes")
    if tape is None and any(x.requires_grad for x in xs):
        raise ValueError("operand belongs to a tape that no longer exists")
    return tape


def _emit(value: np.ndarray, inputs: Sequence[tuple[Var, VJP]]) -> Var:
    traced = [(v, f) for v, f in inputs if v.requires_grad]
    tape = _tape_of(*(v for v, _ in inputs))
    if tape is None:
        return Var(value)
    return tape._record(value, traced)


def matmul(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} x {b.shape}")
    av, bv = a.value, b.value
    return _emit(av @ bv, [(a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)])


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.sum(axis=0, keepdims=True)


def _check_add_shapes(a: Var, b: Var, op: str) -> tuple[int, int]:
    if a.shape == b.shape:
        return a.shape
    if b.shape[0] == 1 and b.shape[1] == a.shape[1]:
        return a.shape
    if a.shape[0] == 1 and a.shape[1] == b.shape[1]:
        return b.shape
    raise DimensionError(f"{op}: {a.shape} and {b.shape} (only row-vector broadcast allowed)")


def add(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    _check_add_shapes(a, b, "add")
    sa, sb = a.shape, b.shape
    return _emit(a.value + b.value, [(a, lambda g: _unbroadcast(g, sa)), (b, lambda g: _unbroadcast(g, sb))])


def sub(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    _check_add_shapes(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _emit(a.value - b.value, [(a, lambda g: _unbroadcast(g, sa)), (b, lambda g: -_unbroadcast(g, sb))])


def mul(a, b) -> Var:
    """Hadamard product of equal-shape operands."""
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape:
        raise DimensionError(f"hadamard: {a.shape} and {b.shape}")
    av, bv = a.value, b.value
    return _emit(av * bv, [(a, lambda g: g * bv), (b, lambda g: g * av)])


def scale(a, c: float) -> Var:
    a = _lift(a)
    c = float(c)
    return _emit(c * a.value, [(a, lambda g: c * g)])


def square(a) -> Var:
    a = _lift(a)
    av = a.value
    return _emit(av * av, [(a, lambda g: 2.0 * av * g)])


def sum_all(a) -> Var:
    a = _lift(a)
    shape = a.shape
    return _emit(np.array([[a.value.sum()]]), [(a, lambda g: np.broadcast_to(g, shape))])


def sum_sq_diff(a, b) -> Var:
    """``sum((a - b)^2)`` as one node; cheaper than sub/square/sum on wide arrays."""
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape:
        raise DimensionError(f"sum_sq_diff: {a.shape} and {b.shape}")
    r = a.value - b.value
    out = np.array([[np.einsum("ij,ij->", r, r)]])
    return _emit(out, [(a, lambda g: (2.0 * g[0, 0]) * r), (b, lambda g: (-2.0 * g[0, 0]) * r)])


def absolute(a) -> Var:
    """Elementwise |x|; the subgradient at 0 is taken as 0."""
    a = _lift(a)
    sgn = np.sign(a.value)
    return _emit(np.abs(a.value), [(a, lambda g: g * sgn)])


def sigmoid_family(x, order: int = 0) -> Var:
    """Elementwise logistic f (order 0), f' (order 1) or f'' (order 2)."""
    if order not in (0, 1, 2):
        raise ValueError(f"order must be 0, 1 or 2, got {order}")
    x = _lift(x)
    xv = x.value
    out = sigmoid_deriv(xv, order)
    return _emit(out, [(x, lambda g: g * sigmoid_deriv(xv, order + 1))])


def sin(a) -> Var:
    a = _lift(a)
    av = a.value
    return _emit(np.sin(av), [(a, lambda g: g * np.cos(av))])


def cos(a) -> Var:
    a = _lift(a)
    av = a.value
    return _emit(np.cos(av), [(a, lambda g: -g * np.sin(av))])


def columns(a, idx: Iterable[int]) -> Var:
    """Select columns ``idx`` (in order) of ``a``."""
    a = _lift(a)
    idx = np.asarray(list(idx), dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
        raise DimensionError(f"column index out of range for shape {a.shape}")
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, (slice(None), idx), g)
        return out

    return _emit(a.value[:, idx], [(a, vjp)])


def hstack(parts: Sequence) -> Var:
    parts = [_lift(p) for p in parts]
    if not parts:
        raise DimensionError("hstack of nothing")
    rows = parts[0].shape[0]
    if any(p.shape[0] != rows for p in parts):
        raise DimensionError(f"hstack: row counts differ {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    inputs = []
    for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
        inputs.append((p, lambda g, lo=lo, hi=hi: g[:, lo:hi]))
    return _emit(np.hstack([p.value for p in parts]), inputs)
