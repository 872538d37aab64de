"""Diffuse volume/surface integrals, sharp references and their error studies."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, NonFiniteSample, NonPositiveError
from .geometry import SharpDomain, box_around, boundary_quadrature, check_eps
from .meshing import (DEFAULT_MAX_VERTICES, DEFAULT_QUADRATURE, ElementQuadrature, TriMesh,
                      build_structured_mesh, diffuse_batches, max_h_for_cap, sharp_batches)
from .phasefield import PhaseField, Profile, s_eval


@dataclass(frozen=True)
class ScalarField:
    """A pointwise evaluator ``f(x, y)`` plus a smoothness tag.

    ``kind`` is ``"smooth"`` or ``"singular"``; singular fields record the
    exponent ``mu`` and the ``pole`` of ``|x - pole|**-mu``.
    """

    evaluate: Callable
    kind: str = "smooth"
    mu: float | None = None
    pole: tuple[float, float] | None = None

    def __call__(self, x, y):
        return self.evaluate(x, y)


def constant(value: float) -> ScalarField:
    return ScalarField(lambda x, y: np.full(np.shape(x), float(value)))


def singular_field(mu: float, pole) -> ScalarField:
    px, py = pole
    return ScalarField(lambda x, y: np.hypot(x - px, y - py) ** (-mu),
                       kind="singular", mu=mu, pole=(px, py))


def _sample(h, x, y):
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.broadcast_to(np.asarray(h(x, y), dtype=float), np.shape(x))
    if not np.all(np.isfinite(vals)):
        bad = np.flatnonzero(~np.isfinite(vals.ravel()))[0]
        raise NonFiniteSample(
            f"non-finite integrand at ({np.ravel(x)[bad]:.17g}, {np.ravel(y)[bad]:.17g})")
    return vals


def diffuse_volume_integral(h, pf: PhaseField, mesh: TriMesh,
                            quad: ElementQuadrature = DEFAULT_QUADRATURE) -> float:
    """Quadrature value of the integral of h * omega over the box."""
    total = 0.0
    for b in diffuse_batches(mesh, quad, pf):
        om = pf.omega_from_distance(pf.domain.distance(b.x, b.y))
        total += float(np.sum(b.w * om * _sample(h, b.x, b.y)))
    return total


def diffuse_surface_integral(h, pf: PhaseField, mesh: TriMesh,
                             quad: ElementQuadrature = DEFAULT_QUADRATURE) -> float:
    """Quadrature value of the integral of h * |grad omega| over the box."""
    total = 0.0
    for b in diffuse_batches(mesh, quad, pf):
        gm = pf.grad_magnitude_from_distance(pf.domain.distance(b.x, b.y))
        mask = gm > 0
        if not mask.any():
            continue
        total += float(np.sum(b.w[mask] * gm[mask] * _sample(h, b.x[mask], b.y[mask])))
    return total


def sharp_volume_integral(h, domain: SharpDomain, mesh: TriMesh,
                          quad: ElementQuadrature = DEFAULT_QUADRATURE,
                          depth: int | None = None) -> float:
    total = 0.0
    for b in sharp_batches(mesh, quad, domain, depth=depth):
        if b.inside is None:
            total += float(np.sum(b.w * _sample(h, b.x, b.y)))
        else:
            m = b.inside
            total += float(np.sum(b.w[m] * _sample(h, b.x[m], b.y[m])))
    return total


def sharp_surface_integral(g, domain: SharpDomain, order: int = 64) -> float:
    x, y, w = boundary_quadrature(domain, order)
    return float(np.sum(w * _sample(g, x, y)))


def eoc(errors: Sequence[float]) -> list[float]:
    """Pairwise experimental orders log2(e_k / e_{k+1})."""
    e = np.asarray(errors, dtype=float)
    if np.any(~(e > 0)):
        raise NonPositiveError(f"EOC needs strictly positive errors, got {list(errors)}")
    return [float(v) for v in np.log2(e[:-1] / e[1:])]


@dataclass(frozen=True)
class MeshPolicy:
    """Mesh size ``h = gamma * eps**power``, coarsened if the vertex cap demands it."""

    gamma: float = 0.5
    power: float = 2.0
    max_vertices: int = DEFAULT_MAX_VERTICES

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"mesh gamma must lie in (0, 1], got {self.gamma}", key="mesh.gamma")

    def size(self, eps: float) -> float:
        return self.gamma * eps**self.power

    def mesh(self, box, eps: float) -> TriMesh:
        h = max(self.size(eps), max_h_for_cap(box, self.max_vertices))
        return build_structured_mesh(box, h, self.max_vertices)


@dataclass
class IntegralErrorRow:
    eps: float
    diffuse_value: float
    sharp_value: float
    h: float

    @property
    def error(self) -> float:
        return abs(self.diffuse_value - self.sharp_value)


@dataclass
class IntegralStudy:
    kind: str
    rows: list[IntegralErrorRow]

    @property
    def errors(self) -> list[float]:
        return [r.error for r in self.rows]

    @property
    def eoc(self) -> list[float]:
        return eoc(self.errors)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["eps", "diffuse", "sharp", "error", "eoc"])
        rates = [""] + [f"{r:.6f}" for r in self.eoc] if len(self.rows) > 1 else [""]
        for row, rate in zip(self.rows, rates):
            w.writerow([repr(row.eps), f"{row.diffuse_value:.15e}", f"{row.sharp_value:.15e}",
                        f"{row.error:.15e}", rate])
        return buf.getvalue()


def check_eps_list(eps_list, domain: SharpDomain | None = None, min_len: int = 1):
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < min_len:
        raise ConfigError(f"eps_list needs at least {min_len} entries", key="eps_list")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigError(f"eps_list must be strictly decreasing, got {eps_list}", key="eps_list")
    if domain is not None:
        for e in eps_list:
            check_eps(domain, e)
    return eps_list


def _study(kind, field, profile, domain, eps_list, policy, quad, box, boundary_order):
    eps_list = check_eps_list(eps_list, domain, min_len=3)
    policy = policy or MeshPolicy()
    box = box or box_around(domain, eps_list[0])
    rows = []
    sharp = None
    # the sharp value does not depend on eps; compute it once on the finest mesh
    for eps in reversed(eps_list):
        mesh = policy.mesh(box, eps)
        pf = PhaseField(profile, eps, domain)
        if kind == "volume":
            if sharp is None:
                sharp = sharp_volume_integral(field, domain, mesh, quad)
            diffuse = diffuse_volume_integral(field, pf, mesh, quad)
        else:
            if sharp is None:
                sharp = sharp_surface_integral(field, domain, boundary_order)
            diffuse = diffuse_surface_integral(field, pf, mesh, quad)
        rows.append(IntegralErrorRow(eps, diffuse, sharp, mesh.h))
    return IntegralStudy(kind, rows[::-1])


def volume_error_study(h, profile: Profile, domain: SharpDomain, eps_list,
                       mesh_policy: MeshPolicy | None = None,
                       quad: ElementQuadrature = DEFAULT_QUADRATURE, box=None) -> IntegralStudy:
    """Diffuse minus sharp volume integrals for a decreasing list of widths."""
    return _study("volume", h, profile, domain, eps_list, mesh_policy, quad, box, None)


def surface_error_study(g, profile: Profile, domain: SharpDomain, eps_list,
                        mesh_policy: MeshPolicy | None = None,
                        quad: ElementQuadrature = DEFAULT_QUADRATURE, box=None,
                        boundary_order: int = 64) -> IntegralStudy:
    return _study("surface", g, profile, domain, eps_list, mesh_policy, quad, box, boundary_order)


def profile_moment(profile: Profile) -> float:
    """m = integral of s*S(s) over (-1, 1), by Gauss-Legendre on the smooth part."""
    t, w = np.polynomial.legendre.leggauss(64)
    return float(np.sum(w * t * s_eval(profile, t)))


def disk_volume_excess(profile: Profile, radius: float, eps: float) -> float:
    """Closed form of (diffuse - sharp) volume of a disk with h = 1."""
    return math.pi * eps**2 * (1.0 - profile_moment(profile))
