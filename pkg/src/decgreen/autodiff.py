"""Reverse-mode differentiation over numpy arrays plus second-order spatial jets.

Two layers live here:

* :class:`Var` is a node of a reverse-mode graph.  Every op records a
  vector-Jacobian product for each parent, and :func:`backward` sweeps the
  graph once in a fixed topological order.
* :class:`Jet2` carries a field together with its input gradient and input
  Hessian with respect to a 2-D point.  Each jet component is itself a
  :class:`Var`, so parameter gradients of anything built from jets (for
  instance a squared Laplacian residual) come out of a single backward sweep.

All arithmetic is float64.  Jet components may be batched: a component of
shape ``(N, w)`` holds ``N`` points and ``w`` channels, and constant
components broadcast (the seed gradient of an input coordinate is stored as a
``(1, d)`` row).
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Var",
    "Jet2",
    "NonFiniteError",
    "as_var",
    "backward",
    "no_grad",
    "matmul",
    "relu_pow",
    "transpose",
    "reshape",
    "vsum",
    "jet_var",
    "jet_const",
    "jet_arith",
    "relu_k_jet",
    "seed_points",
    "param_gradient",
]

_GRAD_ENABLED = True


class NonFiniteError(ArithmeticError):
    """Raised when a loss handed to the backward sweep is NaN or infinite."""


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording graph edges (pure value computation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Var:
    """A float64 array that remembers how it was computed."""

    __slots__ = ("value", "grad", "parents", "requires_grad", "__weakref__")
    __array_ufunc__ = None  # make ndarray (op) Var defer to Var's reflected ops

    def __init__(self, value, parents=(), requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents: tuple = parents
        self.requires_grad = requires_grad or bool(parents)

    def __repr__(self) -> str:
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Var":
        return Var(self.value)

    # operator sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def sum(self, axis=None):
        return vsum(self, axis)

    @property
    def T(self):
        return transpose(self)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _node(value: np.ndarray, edges: Sequence[tuple[Var, Callable]]) -> Var:
    if not _GRAD_ENABLED:
        return Var(value)
    kept = tuple((p, f) for p, f in edges if p.requires_grad)
    return Var(value, kept)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    sa, sb = a.value.shape, b.value.shape
    return _node(
        a.value + b.value,
        ((a, lambda g: _unbroadcast(g, sa)), (b, lambda g: _unbroadcast(g, sb))),
    )


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    sa, sb = a.value.shape, b.value.shape
    return _node(
        a.value - b.value,
        ((a, lambda g: _unbroadcast(g, sa)), (b, lambda g: -_unbroadcast(g, sb))),
    )


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    return _node(
        av * bv,
        (
            (a, lambda g: _unbroadcast(g * bv, av.shape)),
            (b, lambda g: _unbroadcast(g * av, bv.shape)),
        ),
    )


def matmul(a, b) -> Var:
    """Matrix product for 1-D and 2-D operands (numpy semantics)."""
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    if av.ndim > 2 or bv.ndim > 2:
        raise ValueError("matmul supports 1-D and 2-D operands only")

    def grad_a(g):
        if bv.ndim == 1:
            return np.multiply.outer(g, bv) if av.ndim == 2 else g * bv
        if av.ndim == 1:
            return bv @ g
        return g @ bv.T

    def grad_b(g):
        if av.ndim == 1:
            return np.multiply.outer(av, g) if bv.ndim == 2 else g * av
        if bv.ndim == 1:
            return av.T @ g
        return av.T @ g

    return _node(av @ bv, ((a, grad_a), (b, grad_b)))


def vsum(a, axis=None) -> Var:
    a = as_var(a)
    shape = a.value.shape

    def grad(g):
        g = np.asarray(g)
        if axis is not None:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return _node(a.value.sum(axis=axis), ((a, grad),))


def transpose(a) -> Var:
    a = as_var(a)
    return _node(a.value.T, ((a, lambda g: g.T),))


def reshape(a, shape) -> Var:
    a = as_var(a)
    old = a.value.shape
    return _node(a.value.reshape(shape), ((a, lambda g: g.reshape(old)),))


def _relu_pow_value(z: np.ndarray, k: int) -> np.ndarray:
    if k == 0:
        return (z > 0).astype(np.float64)
    r = np.maximum(z, 0.0)
    if k == 1:
        return r
    return r**k


def relu_pow(a, k: int, coef: float = 1.0) -> Var:
    """``coef * max(0, a)**k`` with ``max(0, a)**0`` read as the step ``a > 0``.

    Negative ``k`` is the zero function; this lets the ReLU-K derivative
    ladder terminate cleanly (every derivative is zero at ``a <= 0``).
    """
    a = as_var(a)
    z = a.value
    if k < 0 or coef == 0.0:
        return _node(np.zeros_like(z), ())
    val = coef * _relu_pow_value(z, k)
    if k == 0:
        return _node(val, ())
    return _node(val, ((a, lambda g: g * (coef * k) * _relu_pow_value(z, k - 1)),))


def _toposort(root: Var) -> list[Var]:
    order: list[Var] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in reversed(node.parents):
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Var, seed=None) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every grad-requiring leaf.

    ``seed`` is the upstream gradient; it defaults to ones, which for a scalar
    root is the usual dL/dL = 1.  Leaves accumulate, so several backward
    sweeps into the same parameters add up.
    """
    if not root.requires_grad:
        return
    if seed is None:
        if not np.all(np.isfinite(root.value)):
            raise NonFiniteError("backward called on a non-finite value")
        seed = np.ones_like(root.value)
    grads: dict[int, np.ndarray] = {id(root): np.asarray(seed, dtype=np.float64)}
    for node in reversed(_toposort(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = contrib


# ---------------------------------------------------------------------------
# second-order jets in two spatial variables


@dataclass(frozen=True)
class Jet2:
    """Value, input gradient and (symmetric) input Hessian of a field.

    The Hessian is stored once as ``hxx, hxy, hyy`` so ``hess[0][1] ==
    hess[1][0]`` holds by construction.
    """

    value: Var
    gx: Var
    gy: Var
    hxx: Var
    hxy: Var
    hyy: Var

    def components(self) -> tuple[Var, ...]:
        return (self.value, self.gx, self.gy, self.hxx, self.hxy, self.hyy)

    def map(self, fn: Callable[[Var], Var]) -> "Jet2":
        return Jet2(*(fn(c) for c in self.components()))

    @property
    def grad(self) -> np.ndarray:
        """Gradient stacked on a trailing axis of length 2."""
        shape = np.broadcast_shapes(self.value.shape, self.gx.shape, self.gy.shape)
        return np.stack(
            [np.broadcast_to(self.gx.value, shape), np.broadcast_to(self.gy.value, shape)],
            axis=-1,
        )

    @property
    def hess(self) -> np.ndarray:
        """Hessian as a trailing ``(2, 2)`` block."""
        shape = np.broadcast_shapes(
            self.value.shape, self.hxx.shape, self.hxy.shape, self.hyy.shape
        )
        xx, xy, yy = (np.broadcast_to(c.value, shape) for c in (self.hxx, self.hxy, self.hyy))
        return np.stack([np.stack([xx, xy], -1), np.stack([xy, yy], -1)], -2)

    @property
    def laplacian(self) -> Var:
        return self.hxx + self.hyy

    def __add__(self, other):
        return jet_arith(self, _as_jet(other), "add")

    __radd__ = __add__

    def __sub__(self, other):
        return jet_arith(self, _as_jet(other), "sub")

    def __rsub__(self, other):
        return jet_arith(_as_jet(other), self, "sub")

    def __mul__(self, other):
        if isinstance(other, Jet2):
            return jet_arith(self, other, "mul")
        return self.scale(other)

    __rmul__ = __mul__

    def __neg__(self):
        return self.scale(-1.0)

    def scale(self, c) -> "Jet2":
        """Multiply by a spatially constant factor (may be a trainable Var)."""
        return self.map(lambda comp: comp * c)


def jet_const(value) -> Jet2:
    """A field independent of the point: zero gradient and Hessian."""
    v = as_var(value)
    zero = Var(np.zeros_like(v.value))
    return Jet2(v, zero, zero, zero, zero, zero)


def _as_jet(x) -> Jet2:
    return x if isinstance(x, Jet2) else jet_const(x)


def jet_var(p: Sequence[float], axis: int) -> Jet2:
    """Seed the coordinate ``p[axis]`` as an independent variable."""
    if axis not in (0, 1):
        raise ValueError(f"axis must be 0 or 1, got {axis!r}")
    if len(p) != 2:
        raise ValueError("jet_var expects a 2-D point")
    zero = Var(0.0)
    one = Var(1.0)
    return Jet2(
        Var(float(p[axis])),
        one if axis == 0 else zero,
        one if axis == 1 else zero,
        zero,
        zero,
        zero,
    )


def seed_points(points, n_extra: int = 0, extra=None) -> Jet2:
    """Batched input jet for ``points`` of shape ``(N, 2)``.

    The result has components of width ``2 + n_extra``; the extra columns are
    passive inputs (e.g. the quadrature point ``x'`` of a MOD-Net kernel) with
    zero spatial derivatives.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected points of shape (N, 2), got {pts.shape}")
    if n_extra:
        extra = np.asarray(extra, dtype=np.float64)
        value = np.concatenate([pts, extra], axis=1)
    else:
        value = pts
    width = 2 + n_extra
    ex = np.zeros((1, width))
    ex[0, 0] = 1.0
    ey = np.zeros((1, width))
    ey[0, 1] = 1.0
    zero = Var(np.zeros((1, width)))
    return Jet2(Var(value), Var(ex), Var(ey), zero, zero, zero)


def jet_arith(a: Jet2, b: Jet2, op: str) -> Jet2:
    """Sum, difference or product of two jets by the exact calculus rules."""
    if op == "add":
        return Jet2(*(x + y for x, y in zip(a.components(), b.components())))
    if op == "sub":
        return Jet2(*(x - y for x, y in zip(a.components(), b.components())))
    if op == "mul":
        value = a.value * b.value
        gx = a.gx * b.value + a.value * b.gx
        gy = a.gy * b.value + a.value * b.gy
        hxx = a.hxx * b.value + b.hxx * a.value + 2.0 * (a.gx * b.gx)
        hyy = a.hyy * b.value + b.hyy * a.value + 2.0 * (a.gy * b.gy)
        hxy = a.hxy * b.value + b.hxy * a.value + a.gx * b.gy + b.gx * a.gy
        return Jet2(value, gx, gy, hxx, hxy, hyy)
    raise ValueError(f"unknown jet op {op!r}")


def relu_k_jet(a: Jet2, k: int) -> Jet2:
    """Apply ``max(0, v)**k`` by the chain rule.

    Every derivative is taken as zero where ``v <= 0``; at ``v == 0`` this is
    the continuous extension from the left.
    """
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise ValueError(f"ReLU-K power must be a positive integer, got {k!r}")
    f0 = relu_pow(a.value, k)
    f1 = relu_pow(a.value, k - 1, float(k))
    f2 = relu_pow(a.value, k - 2, float(k * (k - 1)))
    gx = f1 * a.gx
    gy = f1 * a.gy
    hxx = f2 * (a.gx * a.gx) + f1 * a.hxx
    hyy = f2 * (a.gy * a.gy) + f1 * a.hyy
    hxy = f2 * (a.gx * a.gy) + f1 * a.hxy
    return Jet2(f0, gx, gy, hxx, hxy, hyy)


# ---------------------------------------------------------------------------


def param_gradient(loss: Var, nets: Iterable) -> list[list[np.ndarray]]:
    """Exact d(loss)/d(parameter) for every parameter of every network.

    Gradients previously accumulated on the parameters are discarded.  A net
    the loss does not depend on receives zero arrays.
    """
    nets = list(nets)
    loss = as_var(loss)
    if loss.value.size != 1:
        raise ValueError("param_gradient expects a scalar loss")
    if not math.isfinite(float(loss.value)):
        raise NonFiniteError(f"loss is not finite: {float(loss.value)!r}")
    for net in nets:
        net.zero_grad()
    backward(loss)
    return [net.gradients() for net in nets]
