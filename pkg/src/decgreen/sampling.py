"""Seeded point sets: quadrature samples, collocation points and plotting grids.

Random numbers come from a counter-based SplitMix64 stream so the same seed
yields byte-identical points on every platform and numpy version:

    key      = mix(seed XOR fnv1a64(label))
    raw[i]   = mix(key + (i + 1) * 0x9E3779B97F4A7C15)       (mod 2**64)
    mix(z)   : z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
               z ^= z >> 27; z *= 0x94D049BB133111EB
               z ^= z >> 31
    uniform  = ((raw >> 11) + 0.5) * 2**-53                  in (0, 1)

Labels separate independent streams drawn from one seed (e.g. the interior
points of parameterization 3 versus the quadrature set).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = z ^ (z >> np.uint64(30))
        z = z * _M1
        z = z ^ (z >> np.uint64(27))
        z = z * _M2
        z = z ^ (z >> np.uint64(31))
    return z


def _fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & _MASK
    return h


class Stream:
    """Deterministic stream of 64-bit words keyed by ``(seed, label)``."""

    def __init__(self, seed: int, label: str = ""):
        self.seed = int(seed)
        self.label = label
        k = np.array([(self.seed & _MASK) ^ _fnv1a64(label)], dtype=np.uint64)
        self._key = _mix(k)[0]
        self._pos = 0

    def raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._pos + 1, self._pos + n + 1, dtype=np.uint64)
        self._pos += n
        with np.errstate(over="ignore"):
            return _mix(self._key + idx * _GOLDEN)

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in the open interval (0, 1)."""
        r = (self.raw(n) >> np.uint64(11)).astype(np.float64)
        return (r + 0.5) * 2.0**-53


@dataclass(frozen=True)
class Rectangle:
    lo: tuple[float, float]
    hi: tuple[float, float]

    def __post_init__(self):
        if not all(h > l for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"degenerate rectangle {self.lo} .. {self.hi}")

    @property
    def area(self) -> float:
        return (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])

    def contains(self, pts, strict: bool = True) -> np.ndarray:
        pts = np.asarray(pts)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        if strict:
            return np.all((pts > lo) & (pts < hi), axis=-1)
        return np.all((pts >= lo) & (pts <= hi), axis=-1)

    def on_boundary(self, pts, tol: float = 1e-12) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        inside = np.all((pts >= lo - tol) & (pts <= hi + tol), axis=-1)
        touches = np.any((np.abs(pts - lo) <= tol) | (np.abs(pts - hi) <= tol), axis=-1)
        return inside & touches


UNIT_SQUARE = Rectangle((0.0, 0.0), (1.0, 1.0))


def _check_count(n: int) -> int:
    if int(n) < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    return int(n)


def sample_interior(domain: Rectangle, n: int, seed: int, label: str = "interior") -> np.ndarray:
    """i.i.d. uniform points strictly inside ``domain``, shape ``(n, 2)``."""
    n = _check_count(n)
    u = Stream(seed, label).uniform(2 * n).reshape(n, 2)
    lo, hi = np.asarray(domain.lo), np.asarray(domain.hi)
    pts = lo + (hi - lo) * u
    # rounding may land on the closed edge for tiny u; pull back one ulp
    pts = np.where(pts <= lo, np.nextafter(lo, hi), pts)
    pts = np.where(pts >= hi, np.nextafter(hi, lo), pts)
    return pts


def sample_boundary(domain: Rectangle, n: int, seed: int, label: str = "boundary") -> np.ndarray:
    """Points uniform over the perimeter by arc length, shape ``(n, 2)``.

    Edges are walked counter-clockwise from the lower-left corner: bottom,
    right, top, left.
    """
    n = _check_count(n)
    (x0, y0), (x1, y1) = domain.lo, domain.hi
    w, h = x1 - x0, y1 - y0
    t = Stream(seed, label).uniform(n) * (2.0 * (w + h))
    pts = np.empty((n, 2))
    e0 = t < w
    e1 = (t >= w) & (t < w + h)
    e2 = (t >= w + h) & (t < 2 * w + h)
    e3 = t >= 2 * w + h
    pts[e0] = np.column_stack([x0 + t[e0], np.full(e0.sum(), y0)])
    pts[e1] = np.column_stack([np.full(e1.sum(), x1), y0 + (t[e1] - w)])
    pts[e2] = np.column_stack([x1 - (t[e2] - w - h), np.full(e2.sum(), y1)])
    pts[e3] = np.column_stack([np.full(e3.sum(), x0), y1 - (t[e3] - 2 * w - h)])
    return np.clip(pts, [x0, y0], [x1, y1])


def grid(domain: Rectangle, resolution: int) -> np.ndarray:
    """Tensor grid including the boundary, row-major with x as the slow axis."""
    if int(resolution) < 2:
        raise ValueError(f"grid resolution must be >= 2, got {resolution}")
    xs = np.linspace(domain.lo[0], domain.hi[0], resolution)
    ys = np.linspace(domain.lo[1], domain.hi[1], resolution)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


@dataclass
class SampleSet:
    """Frozen quadrature set S_Omega plus per-parameterization collocation sets."""

    quadrature: np.ndarray
    interior: list[np.ndarray]
    boundary: list[np.ndarray]
    seed: int
    shared: bool = field(default=False)

    @property
    def n_params(self) -> int:
        return len(self.interior)


def make_sample_set(
    domain: Rectangle,
    n_quadrature: int,
    n_interior: int,
    n_boundary: int,
    n_params: int,
    seed: int,
    shared: bool = False,
) -> SampleSet:
    """Draw every point set of a run from one seed.

    With ``shared`` all parameterizations reuse the collocation points of the
    first one, which lets factorized models evaluate F once per step.
    """
    quad = sample_interior(domain, n_quadrature, seed, "quadrature")
    interior, boundary = [], []
    for k in range(n_params):
        if shared and k > 0:
            interior.append(interior[0])
            boundary.append(boundary[0])
            continue
        interior.append(sample_interior(domain, n_interior, seed, f"interior/{k}"))
        boundary.append(sample_boundary(domain, n_boundary, seed, f"boundary/{k}"))
    return SampleSet(quad, interior, boundary, seed, shared)
