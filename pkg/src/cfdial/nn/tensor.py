"""Reverse-mode autodiff over dense float64 arrays.

Define-by-run tape in the micrograd style: every operation returns a new
Tensor that remembers its parents and a closure that routes the incoming
gradient back to them.  Shapes are validated when the graph is built so a
mismatch fails at construction time, not three epochs into a run.  The
only implicit broadcast is adding a bias row vector to a matrix; all
other elementwise ops require exact shape equality.

All public operations check that their result is finite and raise
``NonFiniteError`` otherwise, so NaN/inf poisoning surfaces at the op
that produced it.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "tensor",
    "concat_cols",
    "slice_cols",
    "scale_rows",
    "softmax_rows",
    "backward",
]


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested operation."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or infinity."""


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op} produced a non-finite value")


class Tensor:
    """Node in the computation graph.

    ``data`` is a numpy float64 array (any rank; most ops want 2-D).
    ``grad`` is filled in by :func:`backward` for nodes with
    ``requires_grad`` and starts as None.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self._parents = tuple(_parents)
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accum(self, g: np.ndarray) -> None:
        # gradient slots accumulate across uses of the same node
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    # convenience: chainable method forms used throughout the models
    def tanh(self) -> "Tensor":
        return tanh(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def square(self) -> "Tensor":
        return square(self)

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self) -> "Tensor":
        return tmean(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    """Wrap raw data as a leaf node, verifying finiteness up front."""
    t = Tensor(data, requires_grad=requires_grad)
    _check_finite(t.data, "tensor")
    return t


def _binary_elementwise_check(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts matrix + row-vector bias (m,n)+(n,)."""
    bias_add = a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]
    if not bias_add:
        _binary_elementwise_check(a, b, "add")
    out_data = a.data + b.data
    _check_finite(out_data, "add")

    def _bwd(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(g.sum(axis=0) if bias_add else g)

    return Tensor(out_data, _parents=(a, b), _backward=_bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_elementwise_check(a, b, "sub")
    out_data = a.data - b.data
    _check_finite(out_data, "sub")

    def _bwd(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(-g)

    return Tensor(out_data, _parents=(a, b), _backward=_bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_elementwise_check(a, b, "mul")
    out_data = a.data * b.data
    _check_finite(out_data, "mul")

    def _bwd(g):
        if a.requires_grad:
            a._accum(g * b.data)
        if b.requires_grad:
            b._accum(g * a.data)

    return Tensor(out_data, _parents=(a, b), _backward=_bwd)


def neg(a: Tensor) -> Tensor:
    def _bwd(g):
        if a.requires_grad:
            a._accum(-g)

    return Tensor(-a.data, _parents=(a,), _backward=_bwd)


def smul(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant (no gradient for c)."""
    c = float(c)
    out_data = a.data * c
    _check_finite(out_data, "smul")

    def _bwd(g):
        if a.requires_grad:
            a._accum(g * c)

    return Tensor(out_data, _parents=(a,), _backward=_bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dims {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data
    _check_finite(out_data, "matmul")

    def _bwd(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return Tensor(out_data, _parents=(a, b), _backward=_bwd)


def scale_rows(x: Tensor, w: Tensor) -> Tensor:
    """Scale each row of x (m,n) by the matching scalar in w (m,1)."""
    if x.data.ndim != 2 or w.data.shape != (x.data.shape[0], 1):
        raise ShapeError(f"scale_rows: x {x.data.shape}, w {w.data.shape}")
    out_data = x.data * w.data
    _check_finite(out_data, "scale_rows")

    def _bwd(g):
        if x.requires_grad:
            x._accum(g * w.data)
        if w.requires_grad:
            w._accum((g * x.data).sum(axis=1, keepdims=True))

    return Tensor(out_data, _parents=(x, w), _backward=_bwd)


# -- nonlinearities -------------------------------------------------------


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def _bwd(g):
        if a.requires_grad:
            a._accum(g * (1.0 - out_data * out_data))

    return Tensor(out_data, _parents=(a,), _backward=_bwd)


def sigmoid(a: Tensor) -> Tensor:
    # stable in both tails
    out_data = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                        np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

    def _bwd(g):
        if a.requires_grad:
            a._accum(g * out_data * (1.0 - out_data))

    return Tensor(out_data, _parents=(a,), _backward=_bwd)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    out_data = np.where(a.data > 0, a.data, slope * a.data)

    def _bwd(g):
        if a.requires_grad:
            a._accum(g * np.where(a.data > 0, 1.0, slope))

    return Tensor(out_data, _parents=(a,), _backward=_bwd)


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), computed as logaddexp(0, x) so large x cannot overflow."""
    out_data = np.logaddexp(0.0, a.data)
    sig = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                   np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

    def _bwd(g):
        if a.requires_grad:
            a._accum(g * sig)

    return Tensor(out_data, _parents=(a,), _backward=_bwd)


def square(a: Tensor) -> Tensor:
    out_data = a.data * a.data
    _check_finite(out_data, "square")

    def _bwd(g):
        if a.requires_grad:
            a._accum(g * 2.0 * a.data)

    return Tensor(out_data, _parents=(a,), _backward=_bwd)


# -- reductions -----------------------------------------------------------


def tsum(a: Tensor) -> Tensor:
    out_data = a.data.sum()
    _check_finite(out_data, "sum")

    def _bwd(g):
        if a.requires_grad:
            a._accum(np.broadcast_to(g, a.data.shape).copy())

    return Tensor(out_data, _parents=(a,), _backward=_bwd)


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    if n == 0:
        raise ShapeError("mean of an empty tensor")
    out_data = a.data.mean()
    _check_finite(out_data, "mean")

    def _bwd(g):
        if a.requires_grad:
            a._accum(np.broadcast_to(g / n, a.data.shape).copy())

    return Tensor(out_data, _parents=(a,), _backward=_bwd)


# -- structural ops -------------------------------------------------------


def concat_cols(parts) -> Tensor:
    """Concatenate 2-D tensors along columns; rows must agree."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_cols of nothing")
    rows = parts[0].data.shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[0] != rows:
            raise ShapeError(f"concat_cols: bad part shape {p.data.shape}, want ({rows}, *)")
    out_data = np.concatenate([p.data for p in parts], axis=1)
    widths = [p.data.shape[1] for p in parts]

    def _bwd(g):
        off = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                p._accum(g[:, off:off + w])
            off += w

    return Tensor(out_data, _parents=tuple(parts), _backward=_bwd)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("slice_cols expects 2-D input")
    if not (0 <= start <= stop <= a.data.shape[1]):
        raise ShapeError(f"slice_cols: [{start}:{stop}] outside width {a.data.shape[1]}")
    out_data = a.data[:, start:stop].copy()

    def _bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, start:stop] = g
            a._accum(full)

    return Tensor(out_data, _parents=(a,), _backward=_bwd)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction for stability."""
    if a.data.ndim != 2:
        raise ShapeError("softmax_rows expects 2-D input")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=1, keepdims=True)

    def _bwd(g):
        if a.requires_grad:
            # dL/dx = (g - sum(g*y, axis=1)) * y, rowwise
            dot = (g * out_data).sum(axis=1, keepdims=True)
            a._accum((g - dot) * out_data)

    return Tensor(out_data, _parents=(a,), _backward=_bwd)


# -- backward pass --------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Run reverse-mode accumulation from a scalar loss.

    Gradients add into ``.grad`` of every reachable node with
    ``requires_grad``; call ``ParamSet.zero_grad`` (or set ``grad = None``)
    between steps.
    """
    if loss.data.shape != ():
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.data.shape}")

    # iterative topological order; recursion depth would scale with graph size
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))

    loss._accum(np.ones(()))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
