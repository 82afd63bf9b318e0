"""Fully connected ReLU-K networks that run on plain arrays or on jets."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autodiff import Jet2, Var, as_var, matmul, no_grad, relu_k_jet, relu_pow, reshape, seed_points
from .sampling import Stream


class LayerSpec(tuple):
    """Layer widths written ``[in, h, ..., h, out]``."""

    def __new__(cls, widths: Sequence[int]):
        widths = tuple(int(w) for w in widths)
        if len(widths) < 2:
            raise ValueError(f"layer spec needs at least [in, out], got {list(widths)}")
        if any(w < 1 for w in widths):
            raise ValueError(f"layer widths must be >= 1, got {list(widths)}")
        return super().__new__(cls, widths)

    @property
    def n_in(self) -> int:
        return self[0]

    @property
    def n_out(self) -> int:
        return self[-1]

    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self[:-1], self[1:]))


class Mlp:
    """Affine/ReLU-K chain with a linear output layer.

    Parameters are leaf :class:`Var` objects, ordered ``W0, b0, W1, b1, ...``
    with ``W`` of shape ``(fan_in, fan_out)`` so a batch ``X @ W + b`` maps
    rows to rows.  ``eval_count`` counts input rows pushed through the net.
    """

    def __init__(self, spec: Sequence[int], k: int = 3, seed: int = 0, name: str = "net"):
        if not isinstance(k, (int, np.integer)) or k < 1:
            raise ValueError(f"ReLU-K power must be a positive integer, got {k!r}")
        self.spec = LayerSpec(spec)
        self.k = int(k)
        self.seed = int(seed)
        self.name = name
        self.eval_count = 0
        self.weights: list[Var] = []
        self.biases: list[Var] = []
        stream = Stream(seed, f"mlp/{name}")
        for fan_in, fan_out in zip(self.spec[:-1], self.spec[1:]):
            # U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases alike;
            # zero biases let stacked cubics decay to exactly nothing
            bound = 1.0 / np.sqrt(fan_in)
            w = (2.0 * stream.uniform(fan_in * fan_out) - 1.0) * bound
            b = (2.0 * stream.uniform(fan_out) - 1.0) * bound
            self.weights.append(Var(w.reshape(fan_in, fan_out), requires_grad=True))
            self.biases.append(Var(b, requires_grad=True))

    def __repr__(self) -> str:
        return f"Mlp({list(self.spec)}, k={self.k}, name={self.name!r})"

    @property
    def params(self) -> list[Var]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @property
    def n_params(self) -> int:
        return sum(p.value.size for p in self.params)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.value.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {flat.size}")
        i = 0
        for p in self.params:
            n = p.value.size
            p.value = flat[i : i + n].reshape(p.value.shape).copy()
            i += n

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def gradients(self) -> list[np.ndarray]:
        return [np.zeros_like(p.value) if p.grad is None else p.grad for p in self.params]

    def __call__(self, x):
        """Forward a Var/array batch ``(N, in)`` or a batched :class:`Jet2`."""
        if isinstance(x, Jet2):
            n_in = x.value.shape[-1]
            rows = x.value.shape[0] if x.value.ndim == 2 else 1
        else:
            x = as_var(x)
            n_in = x.value.shape[-1]
            rows = x.value.shape[0] if x.value.ndim == 2 else 1
        if n_in != self.spec.n_in:
            raise ValueError(f"{self.name}: input width {n_in} != spec {self.spec.n_in}")
        self.eval_count += rows
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if isinstance(h, Jet2):
                h = Jet2(
                    matmul(h.value, w) + b,
                    matmul(h.gx, w),
                    matmul(h.gy, w),
                    matmul(h.hxx, w),
                    matmul(h.hxy, w),
                    matmul(h.hyy, w),
                )
                if i < last:
                    h = relu_k_jet(h, self.k)
            else:
                h = matmul(h, w) + b
                if i < last:
                    h = relu_pow(h, self.k)
        return h


def mlp_new(spec: Sequence[int], k: int = 3, seed: int = 0, name: str = "net") -> Mlp:
    return Mlp(spec, k=k, seed=seed, name=name)


def mlp_forward(net: Mlp, x) -> np.ndarray:
    """Plain evaluation; ``x`` is a single input vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if x.shape[-1] != net.spec.n_in:
        raise ValueError(f"input width {x.shape[-1]} != spec {net.spec.n_in}")
    with no_grad():
        out = net(np.atleast_2d(x)).value
    return out[0] if single else out


def mlp_forward_jet(net: Mlp, x) -> Jet2:
    """Jets of every output with respect to a 2-D input.

    A single point gives components of shape ``(out,)``; a batch ``(N, 2)``
    gives ``(N, out)``.
    """
    if net.spec.n_in != 2:
        raise ValueError(f"jet evaluation needs a 2-D input layer, spec is {list(net.spec)}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    jet = net(seed_points(np.atleast_2d(x)))
    if single:
        jet = jet.map(lambda c: c if c.value.ndim < 2 else _row0(c))
    return jet


def _row0(c: Var) -> Var:
    return reshape(c, c.value.shape[1:])
