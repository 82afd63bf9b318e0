"""Residual objective, Adam, the training loop and test metrics."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .autodiff import NonFiniteError, Var, backward, no_grad, vsum
from .models import Context, HCache, Model, ModelConfig, build_model
from .pde import Problem, get_problem
from .sampling import SampleSet, grid, make_sample_set

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"training diverged at step {step}: loss={value!r}")
        self.step = step
        self.value = value


@dataclass
class TrainConfig:
    problem: str
    model: ModelConfig
    params: list[float] = field(default_factory=lambda: [15.0])
    lambda1: float = 1.0
    lambda2: float = 1.0
    lr: float = 1e-3
    steps: int = 20000
    seed: int = 0
    n_interior: int = 1000
    n_boundary: int = 400
    share_collocation: bool = False
    eval_resolution: int = 101
    log_every: int = 1
    early_stop_loss: float = 1e-6
    eval_every: int = 0
    target_test_mse: float | None = None
    chunk_rows: int = 4096

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        self.params = [float(a) for a in self.params]
        if not self.params:
            raise ValueError("params: need at least one source parameter")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1/lambda2 must be >= 0")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if int(self.steps) < 1:
            raise ValueError("steps must be >= 1")
        if int(self.n_interior) < 1 or int(self.n_boundary) < 1:
            raise ValueError("n_interior/n_boundary must be >= 1")
        if int(self.eval_resolution) < 2:
            raise ValueError("eval_resolution must be >= 2")
        if self.model.kind == "pinn" and len(self.params) > 1:
            raise ValueError("a PINN learns one instance; give a single source parameter")
        get_problem(self.problem)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d


# -- optimizer ----------------------------------------------------------------


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Var]) -> "AdamState":
        return cls([np.zeros_like(p.value) for p in params], [np.zeros_like(p.value) for p in params])


def adam_step(params: Sequence[Var], grads: Sequence[np.ndarray], state: AdamState, lr: float) -> None:
    """In-place Adam update with bias correction and no weight decay."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter/gradient/state counts differ")
    for p, g, m in zip(params, grads, state.m):
        if g.shape != p.value.shape or m.shape != p.value.shape:
            raise ValueError(f"shape mismatch: param {p.value.shape}, grad {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        p.value = p.value - lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + state.eps)


# -- the objective ------------------------------------------------------------


@dataclass
class LossTerms:
    residual: float
    boundary: float
    total: float


def _chunks(n: int, size: int) -> Iterator[slice]:
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


def _groups(arrays: Sequence[np.ndarray]) -> list[list[int]]:
    """Indices of parameterizations that share one collocation array."""
    groups: list[list[int]] = []
    for k, arr in enumerate(arrays):
        for g in groups:
            if arrays[g[0]] is arr:
                g.append(k)
                break
        else:
            groups.append([k])
    return groups


def _rows_per_point(model: Model) -> int:
    return model.config.P if model.kind.startswith("modnet") else 1


def _loss_pieces(
    model: Model,
    problem: Problem,
    samples: SampleSet,
    ctxs: Sequence[Context],
    lambda1: float,
    lambda2: float,
    chunk_points: int | None,
) -> Iterator[tuple[Var, float, float]]:
    """Yield ``(weighted_term, residual_part, boundary_part)`` per chunk.

    The weighted terms sum to the objective; the parts sum to the averaged
    residual and boundary means.  Order is fixed, so sums are reproducible.
    """
    K = len(ctxs)
    for which in ("interior", "boundary"):
        sets = getattr(samples, which)
        jet = which == "interior"
        weight = lambda1 if jet else lambda2
        for group in _groups(sets):
            pts_all = sets[group[0]]
            n = len(pts_all)
            if n == 0:
                raise ValueError(f"empty {which} collocation set")
            size = chunk_points or n
            for sl in _chunks(n, size):
                pts = pts_all[sl]
                outs = model.fields([ctxs[k] for k in group], pts, jet=jet)
                term = None
                part = 0.0
                for k, u in zip(group, outs):
                    a = ctxs[k].a
                    if jet:
                        r = problem.operator(u, pts) - problem.source(pts, a)
                    else:
                        r = u - problem.phi(pts, a)
                    sq = vsum(r * r)
                    part += float(sq.value) / (K * n)
                    scaled = sq * (weight / (K * n))
                    term = scaled if term is None else term + scaled
                yield term, (part if jet else 0.0), (0.0 if jet else part)


def loss(model: Model, problem: Problem, samples: SampleSet, cfg: TrainConfig) -> tuple[Var, LossTerms]:
    """Whole objective as a single differentiable scalar.

    Builds one graph over every collocation point; :func:`loss_and_grad` is
    the memory-bounded equivalent used for training.
    """
    ctxs = model.contexts(problem, cfg.params)
    total = None
    res = bnd = 0.0
    for term, r, b in _loss_pieces(model, problem, samples, ctxs, cfg.lambda1, cfg.lambda2, None):
        total = term if total is None else total + term
        res += r
        bnd += b
    value = float(total.value)
    if not math.isfinite(value):
        raise NonFiniteError(f"non-finite loss {value!r}")
    return total, LossTerms(res, bnd, cfg.lambda1 * res + cfg.lambda2 * bnd)


def loss_and_grad(
    model: Model, problem: Problem, samples: SampleSet, cfg: TrainConfig
) -> tuple[LossTerms, list[list[np.ndarray]]]:
    """Objective value and exact parameter gradients, chunked over points.

    For factorized models the H-cache is built once; chunks backpropagate into
    a detached copy of ``M`` and the accumulated cotangent is pushed through H
    in one final sweep.
    """
    nets = model.net_list
    for net in nets:
        net.zero_grad()
    ctxs = model.contexts(problem, cfg.params)
    leaf_ctxs = ctxs
    if model.kind.startswith("decgreen"):
        leaf_ctxs = []
        for ctx in ctxs:
            M = Var(ctx.cache.M.value, requires_grad=True)
            leaf_ctxs.append(Context(ctx.a, ctx.gvals, HCache(M, vsum(M, axis=1))))
    chunk_points = max(1, cfg.chunk_rows // _rows_per_point(model))
    res = bnd = 0.0
    for term, r, b in _loss_pieces(
        model, problem, samples, leaf_ctxs, cfg.lambda1, cfg.lambda2, chunk_points
    ):
        value = float(term.value)
        if not math.isfinite(value):
            raise NonFiniteError(f"non-finite loss term {value!r}")
        backward(term)
        res += r
        bnd += b
    if leaf_ctxs is not ctxs:
        pullback = None
        for ctx, leaf in zip(ctxs, leaf_ctxs):
            if leaf.cache.M.grad is None:
                continue
            piece = vsum(ctx.cache.M * leaf.cache.M.grad)
            pullback = piece if pullback is None else pullback + piece
        if pullback is not None:
            backward(pullback)
    terms = LossTerms(res, bnd, cfg.lambda1 * res + cfg.lambda2 * bnd)
    return terms, [net.gradients() for net in nets]


# -- evaluation -----------------------------------------------------------------


def predict(model: Model, problem: Problem, a, points, chunk_rows: int = 65536) -> np.ndarray:
    """Values of the learned field at ``points`` for source parameter ``a``."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    size = max(1, chunk_rows // _rows_per_point(model))
    with no_grad():
        ctx = model.contexts(problem, [a])[0]
        parts = [model.field(ctx, points[sl], jet=False).value for sl in _chunks(len(points), size)]
    return np.concatenate(parts)


def evaluate(model: Model, problem: Problem, a, resolution: int = 101) -> float:
    """Mean squared error against the analytic solution on a uniform grid."""
    pts = grid(problem.domain, resolution)
    err = predict(model, problem, a, pts) - problem.exact(pts, a)
    return float(np.mean(err * err))


@dataclass
class FieldReport:
    points: np.ndarray
    u_exact: np.ndarray
    u_pred: np.ndarray
    mse: float
    rel_l2: float
    extrapolation: bool
    a: float

    @property
    def abs_error(self) -> np.ndarray:
        return np.abs(self.u_exact - self.u_pred)


def field_report(model: Model, problem: Problem, a, resolution: int, trained: Sequence[float] = ()) -> FieldReport:
    pts = grid(problem.domain, resolution)
    exact = problem.exact(pts, a)
    pred = predict(model, problem, a, pts)
    err = pred - exact
    denom = float(np.linalg.norm(exact))
    rel = float(np.linalg.norm(err)) / denom if denom > 0 else float(np.linalg.norm(err))
    outside = bool(trained) and not (min(trained) <= a <= max(trained))
    return FieldReport(pts, exact, pred, float(np.mean(err * err)), rel, outside, float(a))


def interpolate_eval(model: Model, problem: Problem, trained: Sequence[float], a_new: float, resolution: int = 101) -> FieldReport:
    """Evaluate an operator-trained model at an unseen source parameter.

    The quadrature set stays frozen; only the cache is rebuilt for the new
    source.  Parameters outside the trained range are flagged, not refused.
    """
    if len(trained) < 2:
        raise ValueError("interpolation needs a model trained on several source parameters")
    report = field_report(model, problem, a_new, resolution, trained)
    if report.extrapolation:
        log.warning("a=%g lies outside the trained range [%g, %g]", a_new, min(trained), max(trained))
    return report


# -- the loop -------------------------------------------------------------------


@dataclass
class Metrics:
    records: list[dict] = field(default_factory=list)
    test_loss: float | None = None
    test_checks: list[dict] = field(default_factory=list)
    wall_clock: float = 0.0
    steps_run: int = 0
    stop_reason: str = ""
    counters_per_step: dict = field(default_factory=dict)


def setup(cfg: TrainConfig) -> tuple[Problem, SampleSet, Model]:
    problem = get_problem(cfg.problem)
    samples = make_sample_set(
        problem.domain,
        cfg.model.P,
        cfg.n_interior,
        cfg.n_boundary,
        len(cfg.params),
        cfg.seed,
        cfg.share_collocation,
    )
    quad = samples.quadrature if cfg.model.uses_quadrature else None
    return problem, samples, build_model(cfg.model, cfg.seed, quad)


def train(
    cfg: TrainConfig,
    on_record: Callable[[dict], None] | None = None,
    clock: Callable[[], float] = time.perf_counter,
) -> tuple[Model, Metrics]:
    """Full-batch Adam on the residual objective.

    Stops after ``cfg.steps`` steps, when the training loss falls below
    ``early_stop_loss``, or when a periodic test check meets
    ``target_test_mse``.  A non-finite loss raises :class:`DivergenceError`.
    """
    problem, samples, model = setup(cfg)
    nets = model.net_list
    params = [p for net in nets for p in net.params]
    state = AdamState.for_params(params)
    metrics = Metrics()
    t0 = clock()
    metrics.stop_reason = "max_steps"
    for step in range(cfg.steps):
        model.reset_counts()
        try:
            terms, grads = loss_and_grad(model, problem, samples, cfg)
        except NonFiniteError:
            raise DivergenceError(step, float("nan")) from None
        counts = model.eval_counts()
        if step == 0:
            metrics.counters_per_step = dict(counts)
        flat = [g for net_grads in grads for g in net_grads]
        try:
            adam_step(params, flat, state, cfg.lr)
        except NonFiniteError:
            raise DivergenceError(step, terms.total) from None
        metrics.steps_run = step + 1
        rec = {
            "step": step,
            "residual": terms.residual,
            "boundary": terms.boundary,
            "total": terms.total,
            "elapsed": clock() - t0,
            "evals": counts,
        }
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            metrics.records.append(rec)
            if on_record:
                on_record(rec)
        if terms.total < cfg.early_stop_loss:
            metrics.stop_reason = "early_stop_loss"
            break
        if cfg.eval_every and (step + 1) % cfg.eval_every == 0:
            mse = float(np.mean([evaluate(model, problem, a, cfg.eval_resolution) for a in cfg.params]))
            metrics.test_checks.append({"step": step + 1, "test_mse": mse})
            log.info("step %d: train loss %.3e, test mse %.3e", step + 1, terms.total, mse)
            if cfg.target_test_mse is not None and mse <= cfg.target_test_mse:
                metrics.stop_reason = "target_test_mse"
                break
    metrics.wall_clock = clock() - t0
    metrics.test_loss = float(
        np.mean([evaluate(model, problem, a, cfg.eval_resolution) for a in cfg.params])
    )
    return model, metrics
