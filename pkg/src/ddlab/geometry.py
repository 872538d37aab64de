"""Sharp domains, their oriented distance functions and boundary quadrature.

All evaluators broadcast over numpy arrays, so ``signed_distance(dom, (x, y))``
works for scalars as well as for whole quadrature batches.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SingularPoint

_SINGULAR_TOL = 1e-12


class Band(enum.Enum):
    INSIDE = "inside"
    BAND = "band"
    OUTSIDE = "outside"


@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigError(f"disk radius must be positive, got {self.radius}")

    @property
    def kind(self) -> str:
        return "disk"

    @property
    def perimeter(self) -> float:
        return 2.0 * math.pi * self.radius

    @property
    def area(self) -> float:
        return math.pi * self.radius**2

    def bbox(self):
        cx, cy = self.center
        r = self.radius
        return (cx - r, cy - r), (cx + r, cy + r)

    def distance(self, x, y):
        return np.hypot(x - self.center[0], y - self.center[1]) - self.radius

    def gradient(self, x, y):
        dx = np.asarray(x - self.center[0], dtype=float)
        dy = np.asarray(y - self.center[1], dtype=float)
        r = np.hypot(dx, dy)
        singular = r < _SINGULAR_TOL
        # the centre gets an arbitrary unit vector; callers wanting strictness
        # go through distance_gradient()
        r = np.where(singular, 1.0, r)
        gx = np.where(singular, 1.0, dx / r)
        gy = np.where(singular, 0.0, dy / r)
        return gx, gy, singular

    def max_eps(self) -> float:
        return self.radius

    def boundary_nodes(self, order: int):
        n = 4 * order
        theta = 2.0 * math.pi * np.arange(n) / n
        x = self.center[0] + self.radius * np.cos(theta)
        y = self.center[1] + self.radius * np.sin(theta)
        w = np.full(n, self.perimeter / n)
        return x, y, w


@dataclass(frozen=True)
class Rectangle:
    min: tuple[float, float]
    max: tuple[float, float]

    def __post_init__(self):
        if not (self.min[0] < self.max[0] and self.min[1] < self.max[1]):
            raise ConfigError(f"rectangle needs min < max componentwise, got {self.min}, {self.max}")

    @property
    def kind(self) -> str:
        return "rectangle"

    @property
    def _half(self):
        return 0.5 * (self.max[0] - self.min[0]), 0.5 * (self.max[1] - self.min[1])

    @property
    def _center(self):
        return 0.5 * (self.max[0] + self.min[0]), 0.5 * (self.max[1] + self.min[1])

    @property
    def perimeter(self) -> float:
        hx, hy = self._half
        return 4.0 * (hx + hy)

    @property
    def area(self) -> float:
        hx, hy = self._half
        return 4.0 * hx * hy

    def bbox(self):
        return self.min, self.max

    def distance(self, x, y):
        (cx, cy), (hx, hy) = self._center, self._half
        qx = np.abs(x - cx) - hx
        qy = np.abs(y - cy) - hy
        outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
        inside = np.minimum(np.maximum(qx, qy), 0.0)
        return outside + inside

    def gradient(self, x, y):
        (cx, cy), (hx, hy) = self._center, self._half
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        sx = np.where(x >= cx, 1.0, -1.0)
        sy = np.where(y >= cy, 1.0, -1.0)
        qx = np.abs(x - cx) - hx
        qy = np.abs(y - cy) - hy
        px, py = np.maximum(qx, 0.0), np.maximum(qy, 0.0)
        out = (qx > 0) | (qy > 0)
        r = np.hypot(px, py)
        r = np.where(r > 0, r, 1.0)
        # inside: the nearest edge wins, ties (the medial axis) go to x
        x_wins = qx >= qy
        gx = np.where(out, sx * px / r, np.where(x_wins, sx, 0.0))
        gy = np.where(out, sy * py / r, np.where(x_wins, 0.0, sy))
        on_ridge = ~out & (np.abs(qx - qy) < _SINGULAR_TOL)
        on_axis = ~out & ((x_wins & (np.abs(x - cx) < _SINGULAR_TOL))
                          | (~x_wins & (np.abs(y - cy) < _SINGULAR_TOL)))
        return gx, gy, on_ridge | on_axis

    def max_eps(self) -> float:
        return min(self._half)

    def boundary_nodes(self, order: int):
        t, wt = np.polynomial.legendre.leggauss(order)
        s = 0.5 * (t + 1.0)
        (x0, y0), (x1, y1) = self.min, self.max
        lx, ly = x1 - x0, y1 - y0
        xs = np.concatenate([x0 + lx * s, np.full(order, x1), x1 - lx * s, np.full(order, x0)])
        ys = np.concatenate([np.full(order, y0), y0 + ly * s, np.full(order, y1), y1 - ly * s])
        ws = np.concatenate([0.5 * lx * wt, 0.5 * ly * wt, 0.5 * lx * wt, 0.5 * ly * wt])
        return xs, ys, ws


SharpDomain = Disk | Rectangle


@dataclass(frozen=True)
class ComputationalBox:
    min: tuple[float, float]
    max: tuple[float, float]

    def __post_init__(self):
        if not (self.min[0] < self.max[0] and self.min[1] < self.max[1]):
            raise ConfigError(f"box needs min < max componentwise, got {self.min}, {self.max}")

    @property
    def extent(self):
        return self.max[0] - self.min[0], self.max[1] - self.min[1]

    @property
    def area(self) -> float:
        lx, ly = self.extent
        return lx * ly

    def contains(self, domain: SharpDomain, margin: float = 0.0) -> bool:
        (a0, a1), (b0, b1) = domain.bbox()
        return (a0 - margin > self.min[0] and a1 - margin > self.min[1]
                and b0 + margin < self.max[0] and b1 + margin < self.max[1])


def box_around(domain: SharpDomain, margin: float, quantum: float = 0.125) -> ComputationalBox:
    """Bounding box of ``domain`` grown by ``margin`` and snapped outward to ``quantum``.

    Snapping keeps the box extents multiples of ``quantum`` so that dyadic mesh
    sizes produce nested structured meshes.
    """
    (a0, a1), (b0, b1) = domain.bbox()
    lo = (math.floor((a0 - margin) / quantum - 1e-9) * quantum,
          math.floor((a1 - margin) / quantum - 1e-9) * quantum)
    hi = (math.ceil((b0 + margin) / quantum + 1e-9) * quantum,
          math.ceil((b1 + margin) / quantum + 1e-9) * quantum)
    return ComputationalBox(lo, hi)


def check_eps(domain: SharpDomain, eps: float) -> None:
    """Reject interface widths whose band would reach the singular set of d_D."""
    if not eps > 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    limit = domain.max_eps()
    if isinstance(domain, Disk):
        ok = eps < limit
    else:
        ok = eps <= limit
    if not ok:
        raise ConfigError(f"eps={eps} too large for {domain.kind} (limit {limit:g})")


def signed_distance(domain: SharpDomain, p):
    """Oriented distance d_D(p): negative inside, zero on the boundary, positive outside."""
    x, y = p
    return domain.distance(np.asarray(x, dtype=float), np.asarray(y, dtype=float))


def distance_gradient(domain: SharpDomain, p):
    """Unit gradient of d_D at ``p``; raises SingularPoint on the medial axis."""
    gx, gy, singular = domain.gradient(np.asarray(p[0], dtype=float), np.asarray(p[1], dtype=float))
    if np.any(singular):
        raise SingularPoint(f"gradient of the distance function undefined at {p}")
    if np.ndim(gx) == 0:
        return float(gx), float(gy)
    return gx, gy


def normal_field(domain: SharpDomain, x, y):
    """Extension of the outward normal, ``grad d_D`` with ties broken arbitrarily.

    Only meant for evaluating boundary data on whole point sets, where the
    medial axis is a null set.
    """
    gx, gy, _ = domain.gradient(x, y)
    return gx, gy


def band_classify(domain: SharpDomain, p, eps: float):
    if not eps > 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    d = signed_distance(domain, p)
    if np.ndim(d) == 0:
        if d <= -eps:
            return Band.INSIDE
        if d >= eps:
            return Band.OUTSIDE
        return Band.BAND
    out = np.full(np.shape(d), Band.BAND, dtype=object)
    out[d <= -eps] = Band.INSIDE
    out[d >= eps] = Band.OUTSIDE
    return out


def boundary_quadrature(domain: SharpDomain, order: int):
    """Nodes and weights for integrals over the boundary of ``domain``.

    Disks use ``4*order`` equispaced angles (trapezoidal rule, spectral for
    smooth periodic integrands); rectangles use ``order`` Gauss-Legendre
    points per edge. Returns ``(x, y, w)`` arrays.
    """
    if order < 1:
        raise ConfigError("boundary quadrature order must be >= 1")
    return domain.boundary_nodes(order)
