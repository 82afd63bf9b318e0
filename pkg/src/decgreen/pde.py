"""Problem definitions: operators on jets, source families, boundary data."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Jet2, Var
from .sampling import Rectangle

# -- Poisson on the unit square: -Laplace(u) = g, u = 0 on the boundary ------


def poisson_operator(j: Jet2, p=None) -> Var:
    return -(j.hxx + j.hyy)


def poisson_source(p, a: float) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    x, y = p[..., 0], p[..., 1]
    return -a * (x * x - x + y * y - y)


def poisson_exact(p, a: float) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    x, y = p[..., 0], p[..., 1]
    return 0.5 * a * x * (x - 1.0) * y * (y - 1.0)


# -- linear reaction-diffusion on [-1, 1]^2 ----------------------------------


def rd_operator(j: Jet2, p) -> Var:
    """``-div((1 + 2x^2) grad u) + (1 + y^2) u`` with the divergence expanded."""
    p = np.asarray(p, dtype=np.float64)
    x, y = p[..., 0], p[..., 1]
    return -(1.0 + 2.0 * x * x) * (j.hxx + j.hyy) - 4.0 * x * j.gx + (1.0 + y * y) * j.value


def rd_exact(p, a=None) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    x, y = p[..., 0], p[..., 1]
    return np.exp(-(x * x + 2.0 * y * y + 1.0))


def rd_source(p, a=None) -> np.ndarray:
    """Manufactured right-hand side: ``rd_operator`` applied to ``rd_exact``."""
    p = np.asarray(p, dtype=np.float64)
    x, y = p[..., 0], p[..., 1]
    lap_factor = 4.0 * x * x + 16.0 * y * y - 6.0
    return rd_exact(p) * (-(1.0 + 2.0 * x * x) * lap_factor + 8.0 * x * x + 1.0 + y * y)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Problem:
    name: str
    domain: Rectangle
    operator: Callable[[Jet2, np.ndarray], Var]
    source: Callable[..., np.ndarray]
    exact: Callable[..., np.ndarray]
    phi: Callable[..., np.ndarray]
    parametric: bool
    default_params: tuple[float, ...]

    def boundary_value(self, p, a=None, tol: float = 1e-12) -> np.ndarray:
        """Dirichlet data; every point must lie on the boundary within ``tol``."""
        pts = np.asarray(p, dtype=np.float64)
        if not np.all(self.domain.on_boundary(pts, tol)):
            raise ValueError(f"{self.name}: point(s) not on the boundary")
        return self.phi(pts, a)


def _zero_phi(p, a=None) -> np.ndarray:
    return np.zeros(np.asarray(p).shape[:-1])


POISSON2D = Problem(
    name="poisson2d",
    domain=Rectangle((0.0, 0.0), (1.0, 1.0)),
    operator=poisson_operator,
    source=poisson_source,
    exact=poisson_exact,
    phi=_zero_phi,
    parametric=True,
    default_params=(15.0,),
)

REACTION_DIFFUSION = Problem(
    name="reaction_diffusion",
    domain=Rectangle((-1.0, -1.0), (1.0, 1.0)),
    operator=rd_operator,
    source=rd_source,
    exact=rd_exact,
    phi=rd_exact,
    parametric=False,
    default_params=(0.0,),
)

PROBLEMS = {p.name: p for p in (POISSON2D, REACTION_DIFFUSION)}


def get_problem(name: str) -> Problem:
    try:
        return PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None


def boundary_value(problem: Problem, p, a=None) -> np.ndarray:
    return problem.boundary_value(p, a)
