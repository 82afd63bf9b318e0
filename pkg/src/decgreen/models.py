"""Solution parameterizations u(x; g).

Five model kinds share one calling convention: build per-source contexts once
(``Model.contexts``), then evaluate fields at query points as jets or plain
values.  The factorized kinds evaluate H only while building contexts, which
is where their saving over MOD-Net comes from.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Jet2, Var, matmul, no_grad, reshape, seed_points, transpose, vsum
from .nn import LayerSpec, Mlp

KINDS = ("pinn", "modnet", "modnet_nl", "decgreen", "decgreen_nl")

NET_ROLES = {
    "pinn": ("net",),
    "modnet": ("G",),
    "modnet_nl": ("G", "F2"),
    "decgreen": ("F", "H"),
    "decgreen_nl": ("F", "H", "O"),
}


@dataclass
class HCache:
    """Quadrature-side factor of a DecGreenNet.

    ``M`` is ``R x P`` with column ``i`` equal to ``H(y_i) * g(y_i)`` and ``c``
    is its row sum.
    """

    M: Var
    c: Var

    @property
    def R(self) -> int:
        return self.M.value.shape[0]

    @property
    def P(self) -> int:
        return self.M.value.shape[1]


def _h_outputs(H: Mlp, samples) -> Var:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise ValueError("hcache needs at least one quadrature sample")
    return H(samples)


def _cache_from_outputs(hout: Var, gvals) -> HCache:
    gvals = np.asarray(gvals, dtype=np.float64)
    if gvals.shape != (hout.value.shape[0],):
        raise ValueError(f"{gvals.shape[0] if gvals.ndim else 0} source values for {hout.value.shape[0]} samples")
    M = transpose(hout * gvals[:, None])
    return HCache(M, vsum(M, axis=1))


def hcache_build(H: Mlp, samples, gvals) -> HCache:
    samples = np.asarray(samples, dtype=np.float64)
    gvals = np.asarray(gvals, dtype=np.float64)
    if len(samples) == 0 or len(gvals) != len(samples):
        raise ValueError("hcache needs P >= 1 samples with one source value each")
    return _cache_from_outputs(_h_outputs(H, samples), gvals)


# -- helpers shared by the evaluators -----------------------------------------


def _as_points(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != 2:
        raise ValueError(f"query points must be 2-D, got shape {x.shape}")
    return x, single


def _lift(obj, fn):
    return obj.map(fn) if isinstance(obj, Jet2) else fn(obj)


def _full(c: Var, shape) -> Var:
    return c if c.value.shape == tuple(shape) else c + np.zeros(shape)


def _finish(out, n: int, single: bool):
    """Flatten a ``(N, 1)`` / ``(N,)`` field to ``(N,)`` or a scalar."""
    shape = () if single else (n,)

    def fix(c: Var) -> Var:
        c = _full(c, (n,) + c.value.shape[1:]) if c.value.ndim else _full(c, (n,))
        return reshape(c, shape)

    return _lift(out, fix)


def _inputs(x: np.ndarray, jet: bool):
    return seed_points(x) if jet else Var(x)


def _check_width(net: Mlp, width: int, what: str) -> None:
    if net.spec.n_in != width:
        raise ValueError(f"{what}: {net.name} input width {net.spec.n_in} != {width}")


# -- the five evaluators ------------------------------------------------------


def decgreen_eval(F: Mlp, cache: HCache, x, jet: bool = True):
    """``u(x) = F(x) . c``; spatial derivatives flow only through F."""
    if F.spec.n_out != cache.R:
        raise ValueError(f"rank mismatch: F outputs {F.spec.n_out}, cache has R={cache.R}")
    pts, single = _as_points(x)
    feats = F(_inputs(pts, jet))
    return _finish(_lift(feats, lambda comp: matmul(comp, cache.c)), len(pts), single)


def _decgreen_nl_from_features(feats, O: Mlp, cache: HCache, n: int, single: bool):
    inner = _lift(feats, lambda comp: matmul(comp, cache.M))
    return _finish(O(inner), n, single)


def decgreen_nl_eval(F: Mlp, O: Mlp, cache: HCache, x, jet: bool = True):
    """``u(x) = O(F(x)^T M)``; O sees the P-vector of per-sample products."""
    if F.spec.n_out != cache.R:
        raise ValueError(f"rank mismatch: F outputs {F.spec.n_out}, cache has R={cache.R}")
    _check_width(O, cache.P, "decgreen_nl")
    pts, single = _as_points(x)
    return _decgreen_nl_from_features(F(_inputs(pts, jet)), O, cache, len(pts), single)


def _kernel_sum(G: Mlp, samples: np.ndarray, gvals: np.ndarray, pts: np.ndarray, jet: bool):
    """``sum_i G(x, y_i) g(y_i)`` for every row of ``pts``; shape ``(N, out)``."""
    _check_width(G, 4, "modnet")
    samples = np.asarray(samples, dtype=np.float64)
    gvals = np.asarray(gvals, dtype=np.float64)
    if len(samples) == 0 or gvals.shape != (len(samples),):
        raise ValueError("modnet needs P >= 1 samples with one source value each")
    n, p, m = len(pts), len(samples), G.spec.n_out
    xs = np.repeat(pts, p, axis=0)
    ys = np.tile(samples, (n, 1))
    inp = seed_points(xs, 2, ys) if jet else Var(np.concatenate([xs, ys], axis=1))
    out = G(inp)
    weights = gvals[None, :, None]

    def contract(comp: Var) -> Var:
        comp = reshape(_full(comp, (n * p, m)), (n, p, m))
        return vsum(comp * weights, axis=1)

    return _lift(out, contract)


def modnet_eval(G: Mlp, samples, gvals, x, jet: bool = True):
    """Monte-Carlo Green's integral with a kernel net on the pair ``(x, x')``."""
    if G.spec.n_out != 1:
        raise ValueError(f"modnet kernel must be scalar, G outputs {G.spec.n_out}")
    pts, single = _as_points(x)
    return _finish(_kernel_sum(G, samples, gvals, pts, jet), len(pts), single)


def modnet_nl_eval(G: Mlp, F2: Mlp, samples, gvals, x, jet: bool = True):
    if F2.spec.n_in != G.spec.n_out:
        raise ValueError(f"F2 input width {F2.spec.n_in} != G output width {G.spec.n_out}")
    pts, single = _as_points(x)
    return _finish(F2(_kernel_sum(G, samples, gvals, pts, jet)), len(pts), single)


def pinn_eval(net: Mlp, x, jet: bool = True):
    _check_width(net, 2, "pinn")
    pts, single = _as_points(x)
    return _finish(net(_inputs(pts, jet)), len(pts), single)


# -- configuration and the model object ---------------------------------------


@dataclass
class ModelConfig:
    """Architecture of one model.

    ``nets`` maps each role (``F``, ``H``, ``O``, ``G``, ``F2``, ``net``) to a
    layer spec; ``P`` is the quadrature size (ignored by PINNs).
    """

    kind: str
    nets: dict[str, list[int]]
    P: int = 100
    k: int = 3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; choose from {list(KINDS)}")
        roles = NET_ROLES[self.kind]
        if set(self.nets) != set(roles):
            raise ValueError(f"{self.kind} needs networks {list(roles)}, got {sorted(self.nets)}")
        self.nets = {r: list(LayerSpec(self.nets[r])) for r in roles}
        self.P = int(self.P)
        self.k = int(self.k)
        if self.k < 1:
            raise ValueError("activation power k must be >= 1")
        if self.kind != "pinn" and self.P < 1:
            raise ValueError("P must be >= 1")
        s = self.nets
        if self.kind == "pinn":
            self._io("net", 2, 1)
        elif self.kind == "modnet":
            self._io("G", 4, 1)
        elif self.kind == "modnet_nl":
            self._io("G", 4, None)
            self._io("F2", s["G"][-1], 1)
        else:
            self._io("F", 2, None)
            self._io("H", 2, s["F"][-1])
            if self.kind == "decgreen_nl":
                self._io("O", self.P, 1)

    def _io(self, role: str, n_in, n_out) -> None:
        spec = self.nets[role]
        if n_in is not None and spec[0] != n_in:
            raise ValueError(f"{self.kind}: {role} input width must be {n_in}, got {spec[0]}")
        if n_out is not None and spec[-1] != n_out:
            raise ValueError(f"{self.kind}: {role} output width must be {n_out}, got {spec[-1]}")

    @property
    def R(self) -> int | None:
        return self.nets["F"][-1] if self.kind.startswith("decgreen") else None

    @property
    def uses_quadrature(self) -> bool:
        return self.kind != "pinn"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "nets": {r: list(v) for r, v in self.nets.items()}, "P": self.P, "k": self.k}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(kind=d["kind"], nets=dict(d["nets"]), P=d.get("P", 100), k=d.get("k", 3))


@dataclass
class Context:
    """Everything a model needs to evaluate u(.; g) for one source."""

    a: float | None
    gvals: np.ndarray
    cache: HCache | None = None


@dataclass
class Model:
    config: ModelConfig
    seed: int
    quadrature: np.ndarray | None = None
    nets: dict[str, Mlp] = field(default_factory=dict)

    def __post_init__(self):
        if not self.nets:
            self.nets = {
                role: Mlp(spec, k=self.config.k, seed=self.seed, name=role)
                for role, spec in self.config.nets.items()
            }
        if self.config.uses_quadrature:
            if self.quadrature is None:
                raise ValueError(f"{self.config.kind} needs a quadrature set")
            self.quadrature = np.asarray(self.quadrature, dtype=np.float64)
            if self.quadrature.shape != (self.config.P, 2):
                raise ValueError(
                    f"quadrature shape {self.quadrature.shape} != ({self.config.P}, 2)"
                )

    @property
    def kind(self) -> str:
        return self.config.kind

    @property
    def net_list(self) -> list[Mlp]:
        return [self.nets[r] for r in NET_ROLES[self.kind]]

    def eval_counts(self) -> dict[str, int]:
        return {r: n.eval_count for r, n in self.nets.items()}

    def reset_counts(self) -> None:
        for n in self.nets.values():
            n.eval_count = 0

    def contexts(self, problem, params: Sequence[float]) -> list[Context]:
        """One context per source parameter; H runs once for all of them."""
        params = list(params)
        if self.kind == "pinn":
            return [Context(a, np.empty(0)) for a in params]
        gvals = [problem.source(self.quadrature, a) for a in params]
        if self.kind.startswith("decgreen"):
            hout = _h_outputs(self.nets["H"], self.quadrature)
            return [Context(a, g, _cache_from_outputs(hout, g)) for a, g in zip(params, gvals)]
        return [Context(a, g) for a, g in zip(params, gvals)]

    def field(self, ctx: Context, x, jet: bool = True):
        return self.fields([ctx], x, jet)[0]

    def fields(self, ctxs: Sequence[Context], x, jet: bool = True) -> list:
        """Evaluate u(x; g) for several contexts at the same points."""
        n = self.nets
        kind = self.kind
        if kind == "pinn":
            out = pinn_eval(n["net"], x, jet)
            return [out for _ in ctxs]
        if kind == "decgreen":
            if len(ctxs) == 1:
                return [decgreen_eval(n["F"], ctxs[0].cache, x, jet)]
            pts, single = _as_points(x)
            feats = n["F"](_inputs(pts, jet))
            return [
                _finish(_lift(feats, lambda comp, c=ctx.cache.c: matmul(comp, c)), len(pts), single)
                for ctx in ctxs
            ]
        if kind == "decgreen_nl":
            if len(ctxs) == 1:
                return [decgreen_nl_eval(n["F"], n["O"], ctxs[0].cache, x, jet)]
            pts, single = _as_points(x)
            feats = n["F"](_inputs(pts, jet))
            return [
                _decgreen_nl_from_features(feats, n["O"], ctx.cache, len(pts), single)
                for ctx in ctxs
            ]
        if kind == "modnet":
            return [modnet_eval(n["G"], self.quadrature, ctx.gvals, x, jet) for ctx in ctxs]
        return [modnet_nl_eval(n["G"], n["F2"], self.quadrature, ctx.gvals, x, jet) for ctx in ctxs]

    def predict(self, problem, a, points) -> np.ndarray:
        """Plain values of u(points; g_a) with no graph recorded."""
        with no_grad():
            ctx = self.contexts(problem, [a])[0]
            return self.field(ctx, np.atleast_2d(points), jet=False).value


def build_model(config: ModelConfig, seed: int, quadrature=None) -> Model:
    return Model(config, seed, quadrature)
