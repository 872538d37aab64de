"""Convergence studies for the benchmark cases A-E and their file output.

A study solves the diffuse problem for a decreasing list of interface
widths and measures errors on the sharp domain D, either against a
manufactured closed-form solution or, for the singular-load case, against
the solution at half the smallest width (self-convergence).
"""
from __future__ import annotations

import copy
import csv
import datetime as _dt
import hashlib
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import toml

from .analysis import RESTRICTED, NormKind, restricted_errors
from .errors import ConfigError, DDLabError, ResourceLimit
from .fem import (Coefficients, DirichletPenalty, FEFunction, Neumann, Robin, assemble,
                  galerkin_residual, solve_cg)
from .geometry import Disk, Rectangle, box_around, normal_field
from .integrals import check_eps_list, eoc, sharp_volume_integral, singular_field
from .meshing import DEFAULT_MAX_VERTICES, ElementQuadrature, build_structured_mesh
from .phasefield import PhaseField, get_profile

CASE_IDS = ("A", "B", "C", "D", "E", "CustomRobin", "CustomDirichlet", "CustomNeumann")
DISK_RADIUS = math.sqrt(0.5)

# rates predicted for each case, used for the reference slope in plot files
EXPECTED_RATES = {
    "A": {"L2_D": 2.0, "W12_D": 1.5, "W11_D": 2.0, "W1inf_D": 1.0},
    "B": {"L2_D": 2.0, "W12_D": 1.0, "W11_D": 2.0, "W1inf_D": 1.0},
    "E": {"L2_D": 2.0, "W12_D": 1.5, "W11_D": 2.0, "W1inf_D": 1.0},
}


class StudyAborted(DDLabError):
    """A row failed; ``partial`` holds the rows finished before it."""

    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = partial


# -- manufactured solutions -------------------------------------------------

@dataclass(frozen=True)
class ManufacturedSolution:
    """Closed-form u with gradient and Hessian ``(uxx, uxy, uyy)``."""

    name: str
    value: Callable
    gradient: Callable
    hessian: Callable

    def __call__(self, x, y):
        gx, gy = self.gradient(x, y)
        return self.value(x, y), gx, gy


def trig_solution(shift: float = 0.0) -> ManufacturedSolution:
    """u = sin(pi x) cos(pi y) + shift."""
    p = math.pi

    def value(x, y):
        return np.sin(p * x) * np.cos(p * y) + shift

    def gradient(x, y):
        return p * np.cos(p * x) * np.cos(p * y), -p * np.sin(p * x) * np.sin(p * y)

    def hessian(x, y):
        s = np.sin(p * x) * np.cos(p * y)
        return -p * p * s, -p * p * np.cos(p * x) * np.sin(p * y), -p * p * s

    return ManufacturedSolution("trig", value, gradient, hessian)


def constant_solution(value: float = 1.0) -> ManufacturedSolution:
    z = lambda x, y: np.zeros(np.shape(x))  # noqa: E731
    return ManufacturedSolution("constant", lambda x, y: np.full(np.shape(x), float(value)),
                                lambda x, y: (z(x, y), z(x, y)),
                                lambda x, y: (z(x, y), z(x, y), z(x, y)))


def poly_solution() -> ManufacturedSolution:
    """u = x^2 - x y + 2 y^2 + x."""
    def value(x, y):
        return x * x - x * y + 2 * y * y + x

    def gradient(x, y):
        return 2 * x - y + 1, -x + 4 * y

    def hessian(x, y):
        one = np.ones(np.shape(x))
        return 2 * one, -one, 4 * one

    return ManufacturedSolution("poly", value, gradient, hessian)


SOLUTIONS = {"trig": trig_solution, "constant": constant_solution, "poly": poly_solution}


@dataclass
class ManufacturedProblem:
    """Coefficients of a diffuse problem plus the exact solution on D (or None)."""

    coeffs: Coefficients
    reference: Callable | None


def _project(domain, x, y):
    d = domain.distance(x, y)
    nx, ny = normal_field(domain, x, y)
    return x - d * nx, y - d * ny, nx, ny, d


def _data_from_flux(domain, value, flux, div_flux, c, b, extension):
    """f = -div(flux) + c u and g = n . flux + b u, extended outside D as requested.

    ``extension="smooth"`` evaluates the closed forms everywhere.
    ``extension="normal"`` keeps only the data on the closure of D: g is
    constant along normal lines through the whole band and f is constant
    along normals outside D.
    """
    if extension not in ("normal", "smooth"):
        raise ConfigError(f"unknown data extension {extension!r}", key="case.extension")

    def f_closed(x, y):
        return -div_flux(x, y) + c * value(x, y)

    def g_at(px, py, nx, ny):
        fx, fy = flux(px, py)
        return nx * fx + ny * fy + b * value(px, py)

    if extension == "smooth":
        def f(x, y):
            return f_closed(x, y)

        def g(x, y):
            nx, ny = normal_field(domain, x, y)
            return g_at(x, y, nx, ny)
    else:
        def f(x, y):
            px, py, _, _, d = _project(domain, x, y)
            out = f_closed(x, y)
            outside = d > 0
            if np.any(outside):
                out = np.where(outside, f_closed(np.where(outside, px, x), np.where(outside, py, y)),
                               out)
            return out

        def g(x, y):
            px, py, nx, ny, _ = _project(domain, x, y)
            return g_at(px, py, nx, ny)
    return f, g


def _constant_tensor(A):
    A = np.asarray(A, dtype=float)
    if A.ndim == 0:
        A = float(A) * np.eye(2)
    if A.shape != (2, 2) or not np.allclose(A, A.T):
        raise ConfigError(f"A must be a number or a symmetric 2x2 matrix, got {A.tolist()}",
                          key="case.A")
    return A


def manufactured_robin_case(u_star: ManufacturedSolution, domain, A=1.0, c: float = 1.0,
                            b: float = 1.0, extension: str = "normal") -> ManufacturedProblem:
    """Robin data making ``u_star`` the exact solution on D; A is a constant tensor.

    Pass ``b=0`` for the Neumann kind.
    """
    At = _constant_tensor(A)

    def flux(x, y):
        gx, gy = u_star.gradient(x, y)
        return At[0, 0] * gx + At[0, 1] * gy, At[1, 0] * gx + At[1, 1] * gy

    def div_flux(x, y):
        hxx, hxy, hyy = u_star.hessian(x, y)
        return At[0, 0] * hxx + (At[0, 1] + At[1, 0]) * hxy + At[1, 1] * hyy

    f, g = _data_from_flux(domain, u_star.value, flux, div_flux, c, b, extension)
    Acoef = float(At[0, 0]) if np.allclose(At, At[0, 0] * np.eye(2)) else \
        (lambda x, y: np.broadcast_to(At, np.shape(x) + (2, 2)))
    return ManufacturedProblem(Coefficients(A=Acoef, c=c, f=f, g=g, b=b), u_star)


def manufactured_dirichlet_case(u_star: ManufacturedSolution, domain, A=1.0, c: float = 1.0,
                                extension: str = "normal") -> ManufacturedProblem:
    """Penalty data with Dirichlet datum g = u_star on the boundary."""
    prob = manufactured_robin_case(u_star, domain, A, c, 0.0, extension)
    if extension == "smooth":
        g = u_star.value
    else:
        def g(x, y):
            px, py, _, _, _ = _project(domain, x, y)
            return u_star.value(px, py)
    prob.coeffs.g = g
    return prob


def radial_two_layer_case(domain: Disk, k1: float = 1.0, k2: float = 10.0, r1: float | None = None,
                          c: float = 1.0, b: float = 1.0, extension: str = "normal"):
    """Piecewise constant diffusion k1 (r < r1), k2 (r >= r1) with a radial exact solution.

    u = r^2/k1 inside the layer and r^2/k2 + r1^2 (1/k1 - 1/k2) outside, so u
    and the flux k u' = 2 r are continuous and -div(k grad u) = -4.
    """
    if not isinstance(domain, Disk):
        raise ConfigError("the two-layer case needs a disk domain", key="case.domain")
    if not (k1 > 0 and k2 > 0):
        raise ConfigError(f"layer coefficients must be positive, got {k1}, {k2}", key="case.k1")
    r1 = 0.9 * domain.radius if r1 is None else float(r1)
    if not 0 < r1 < domain.radius:
        raise ConfigError(f"layer radius must lie in (0, R), got {r1}", key="case.r1_factor")
    cx, cy = domain.center
    jump = r1 * r1 * (1.0 / k1 - 1.0 / k2)

    def radius2(x, y):
        return (x - cx) ** 2 + (y - cy) ** 2

    def k(x, y):
        return np.where(radius2(x, y) < r1 * r1, k1, k2)

    def value(x, y):
        r2 = radius2(x, y)
        return np.where(r2 < r1 * r1, r2 / k1, r2 / k2 + jump)

    def gradient(x, y):
        kk = k(x, y)
        return 2 * (x - cx) / kk, 2 * (y - cy) / kk

    def flux(x, y):
        return 2 * (x - cx), 2 * (y - cy)

    def div_flux(x, y):
        return np.full(np.shape(x), 4.0)

    f, g = _data_from_flux(domain, value, flux, div_flux, c, b, extension)
    ref = ManufacturedSolution("two_layer", value, gradient, None)
    return ManufacturedProblem(Coefficients(A=k, c=c, f=f, g=g, b=b), ref)


def singular_load_case(domain, mu: float, angle: float = 1.0) -> ManufacturedProblem:
    """f = |x - y0|^-mu with y0 on the boundary at polar angle ``angle``; g = 0, b = 1."""
    if not 0 <= mu < 2:
        raise ConfigError(f"mu must lie in [0, 2) for an integrable load, got {mu}", key="case.mu")
    pole = boundary_point(domain, angle)
    return ManufacturedProblem(Coefficients(A=1.0, c=1.0, f=singular_field(mu, pole), g=0.0, b=1.0),
                               None)


def boundary_point(domain, angle: float):
    """Point of the boundary hit by the ray from the domain centre at ``angle``."""
    (x0, y0), (x1, y1) = domain.bbox()
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    dx, dy = math.cos(angle), math.sin(angle)
    if isinstance(domain, Disk):
        return cx + domain.radius * dx, cy + domain.radius * dy
    tx = (0.5 * (x1 - x0)) / abs(dx) if dx else math.inf
    ty = (0.5 * (y1 - y0)) / abs(dy) if dy else math.inf
    t = min(tx, ty)
    return cx + t * dx, cy + t * dy


# -- configuration -------------------------------------------------------------

DEFAULTS = {
    "case": {"id": "A", "eps": [0.5, 0.25, 0.125, 0.0625], "domain": "", "radius": DISK_RADIUS,
             "extension": "normal", "reference": "", "solution": "trig", "A": 1.0, "c": 1.0,
             "b": 1.0, "sigma": [0.75, 1.0], "mu": [0.25, 0.5, 0.75, 1.0], "angle": 1.0,
             "k1": 1.0, "k2": 10.0, "r1_factor": 0.9},
    "phasefield": {"profile": "linear"},
    "mesh": {"gamma": 0.5, "max_vertices": DEFAULT_MAX_VERTICES, "band_depth": 2,
             "interface_depth": 4},
    "solver": {"tol": 1e-10, "max_iter": 0, "initial_guess": "zero"},
    "output": {"dir": "out", "formats": ["csv", "json", "plotdata"],
               "norms": [k.value for k in RESTRICTED]},
}


@dataclass
class CaseConfig:
    """Resolved study configuration; ``sections`` mirrors the TOML layout."""

    sections: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_dict(cls, data: dict) -> "CaseConfig":
        merged = copy.deepcopy(DEFAULTS)
        for section, values in data.items():
            if section not in merged:
                raise ConfigError(f"unknown config section [{section}]", key=section)
            if not isinstance(values, dict):
                raise ConfigError(f"[{section}] must be a table", key=section)
            for k, v in values.items():
                if k not in merged[section]:
                    raise ConfigError(f"unknown config key {section}.{k}", key=f"{section}.{k}")
                merged[section][k] = v
        return cls(merged)

    @classmethod
    def load(cls, path) -> "CaseConfig":
        try:
            data = toml.load(str(path))
        except toml.TomlDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}", key="config") from exc
        return cls.from_dict(data)

    def override(self, section: str, key: str, value) -> "CaseConfig":
        data = copy.deepcopy(self.sections)
        data[section][key] = value
        return CaseConfig(data)

    def to_toml(self) -> str:
        return toml.dumps(self.sections)

    def digest(self) -> str:
        blob = json.dumps(self.sections, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    # typed views
    @property
    def case_id(self) -> str:
        return self.sections["case"]["id"]

    @property
    def eps_list(self) -> list[float]:
        return [float(e) for e in self.sections["case"]["eps"]]

    @property
    def domain(self):
        kind = self.sections["case"]["domain"] or ("square" if self.case_id == "E" else "disk")
        if kind == "disk":
            return Disk((0.0, 0.0), float(self.sections["case"]["radius"]))
        if kind == "square":
            return Rectangle((0.0, 0.0), (1.0, 1.0))
        raise ConfigError(f"unknown domain {kind!r} (disk | square)", key="case.domain")

    @property
    def reference(self) -> str:
        ref = self.sections["case"]["reference"]
        return ref or ("self" if self.case_id == "C" else "manufactured")

    @property
    def profile(self):
        return get_profile(self.sections["phasefield"]["profile"])

    @property
    def quadrature(self) -> ElementQuadrature:
        m = self.sections["mesh"]
        return ElementQuadrature(band_depth=int(m["band_depth"]),
                                 interface_depth=int(m["interface_depth"]))

    @property
    def norms(self) -> list[NormKind]:
        return [NormKind(n) for n in self.sections["output"]["norms"]]

    def mesh_size(self, eps: float) -> float:
        return float(self.sections["mesh"]["gamma"]) * eps * eps

    def validate(self):
        s = self.sections
        if self.case_id not in CASE_IDS:
            raise ConfigError(f"unknown case {self.case_id!r}; choose from {', '.join(CASE_IDS)}",
                              key="case.id")
        check_eps_list(self.eps_list, self.domain, min_len=1)
        gamma = float(s["mesh"]["gamma"])
        # the longest triangle edge is sqrt(2) * gamma * eps^2 and must stay below eps^2
        if not 0 < gamma < 1 / math.sqrt(2):
            raise ConfigError(f"mesh.gamma must lie in (0, 1/sqrt(2)) so that h_max < eps^2, "
                              f"got {gamma}", key="mesh.gamma")
        if int(s["mesh"]["max_vertices"]) < 4:
            raise ConfigError("mesh.max_vertices too small", key="mesh.max_vertices")
        for key in ("band_depth", "interface_depth"):
            if not 0 <= int(s["mesh"][key]) <= 6:
                raise ConfigError(f"mesh.{key} must lie in [0, 6]", key=f"mesh.{key}")
        if not float(s["solver"]["tol"]) > 0:
            raise ConfigError("solver.tol must be positive", key="solver.tol")
        if int(s["solver"]["max_iter"]) < 0:
            raise ConfigError("solver.max_iter must be >= 0 (0 = automatic)", key="solver.max_iter")
        if s["solver"]["initial_guess"] not in ("zero", "reference"):
            raise ConfigError("solver.initial_guess must be zero | reference",
                              key="solver.initial_guess")
        if self.reference not in ("manufactured", "self"):
            raise ConfigError(f"unknown reference {self.reference!r} (manufactured | self)",
                              key="case.reference")
        if self.case_id == "C" and self.reference != "self":
            raise ConfigError("case C has no closed-form solution; reference must be self",
                              key="case.reference")
        if s["case"]["extension"] not in ("normal", "smooth"):
            raise ConfigError("case.extension must be normal | smooth", key="case.extension")
        if s["case"]["solution"] not in SOLUTIONS:
            raise ConfigError(f"unknown solution {s['case']['solution']!r}", key="case.solution")
        for fmt in s["output"]["formats"]:
            if fmt not in ("csv", "json", "plotdata"):
                raise ConfigError(f"unknown output format {fmt!r}", key="output.formats")
        for n in s["output"]["norms"]:
            if n not in {k.value for k in RESTRICTED}:
                raise ConfigError(f"unknown norm {n!r}", key="output.norms")
        for sigma in s["case"]["sigma"]:
            if not float(sigma) > 0:
                raise ConfigError("penalty exponents must be positive", key="case.sigma")
        for mu in s["case"]["mu"]:
            if not 0 <= float(mu) < 2:
                raise ConfigError("mu must lie in [0, 2)", key="case.mu")
        self.profile  # raises on unknown names
        return self

    def variants(self):
        """(label, problem builder, bc) triples; most cases have exactly one."""
        c = self.sections["case"]
        dom = self.domain
        ext = c["extension"]
        cid = self.case_id
        u = SOLUTIONS[c["solution"]]()
        if cid in ("A", "E"):
            yield "", (lambda: manufactured_robin_case(trig_solution(), dom, extension=ext)), Robin()
        elif cid == "B":
            k1, k2 = float(c["k1"]), float(c["k2"])
            r1 = float(c["r1_factor"]) * dom.radius

            def build():
                return radial_two_layer_case(dom, k1, k2, r1, extension=ext)
            yield "", build, Robin()
        elif cid == "C":
            for mu in c["mu"]:
                yield f"mu={float(mu):g}", \
                    (lambda mu=float(mu): singular_load_case(dom, mu, float(c["angle"]))), Robin()
        elif cid == "D":
            for sigma in c["sigma"]:
                yield f"sigma={float(sigma):g}", \
                    (lambda: manufactured_dirichlet_case(trig_solution(), dom, extension=ext)), \
                    DirichletPenalty(float(sigma))
        elif cid == "CustomRobin":
            yield "", (lambda: manufactured_robin_case(u, dom, c["A"], float(c["c"]), float(c["b"]),
                                                       ext)), Robin()
        elif cid == "CustomDirichlet":
            yield f"sigma={float(c['sigma'][0]):g}", \
                (lambda: manufactured_dirichlet_case(u, dom, c["A"], float(c["c"]), ext)), \
                DirichletPenalty(float(c["sigma"][0]))
        else:
            yield "", (lambda: manufactured_robin_case(u, dom, c["A"], float(c["c"]), 0.0, ext)), \
                Neumann()

    def expected_rates(self, variant: str = "") -> dict:
        cid = self.case_id
        if cid == "D" or variant.startswith("sigma="):
            sigma = float(variant.split("=")[1]) if variant else 1.0
            return {"L2_D": sigma, "W12_D": sigma, "W11_D": sigma, "W1inf_D": sigma / 2}
        if cid == "C" and variant.startswith("mu="):
            mu = float(variant.split("=")[1])
            return {"W12_D": 5 / 6 - mu / 2}
        return EXPECTED_RATES.get(cid, EXPECTED_RATES["A"])


# -- results -------------------------------------------------------------------

@dataclass
class StudyRow:
    eps: float
    errors: dict            # norm name -> relative error
    dofs: int = 0
    iterations: int = 0
    h: float = 0.0
    variant: str = ""
    residual: float = 0.0   # max Galerkin residual over the test functions
    residual_scale: float = 1.0
    seconds: float = 0.0
    skipped: bool = False


@dataclass
class StudyResult:
    case: str
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    expected: dict = field(default_factory=dict)   # variant -> norm -> rate

    def variants(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.variant not in seen:
                seen.append(r.variant)
        return seen

    def series(self, variant: str = "") -> list[StudyRow]:
        return [r for r in self.rows if r.variant == variant and not r.skipped]

    def errors(self, norm, variant: str = "") -> list[float]:
        norm = NormKind(norm).value
        return [r.errors[norm] for r in self.series(variant)]

    def eoc(self, norm, variant: str = "") -> list[float]:
        e = self.errors(norm, variant)
        return eoc(e) if len(e) > 1 else []

    def label(self, variant: str) -> str:
        return f"{self.case}[{variant}]" if variant else self.case


def _initial_guess(cfg, problem, mesh):
    if cfg.sections["solver"]["initial_guess"] != "reference" or problem.reference is None:
        return None
    v, _, _ = problem.reference(mesh.vertices[:, 0], mesh.vertices[:, 1])
    return np.asarray(v, dtype=float)


def _solve(cfg, problem, bc, eps, box):
    h = cfg.mesh_size(eps)
    mesh = build_structured_mesh(box, h, int(cfg.sections["mesh"]["max_vertices"]))
    if not mesh.diameter < eps * eps:
        raise AssertionError(f"mesh guard violated: h_max={mesh.diameter} >= eps^2={eps * eps}")
    pf = PhaseField(cfg.profile, eps, cfg.domain)
    system = assemble(mesh, cfg.quadrature, pf, problem.coeffs, bc)
    max_iter = int(cfg.sections["solver"]["max_iter"]) or None
    u = solve_cg(system, float(cfg.sections["solver"]["tol"]), max_iter,
                 _initial_guess(cfg, problem, mesh))
    res, scale = galerkin_residual(system, u)
    return mesh, system, u, res, scale


def _neumann_shift(u, ref, domain, mesh, quad):
    """Constant aligning u with the reference in the mean over D."""
    diff = sharp_volume_integral(lambda x, y: ref(x, y)[0] - u(x, y), domain, mesh, quad)
    return diff / sharp_volume_integral(lambda x, y: np.ones(np.shape(x)), domain, mesh, quad)


def run_case(config: CaseConfig) -> StudyResult:
    """Run every variant of the configured case over its eps list."""
    if config.reference == "self":
        return run_case_c(config)
    return _run_manufactured(config)


def _new_result(config):
    return StudyResult(config.case_id, metadata={
        "config_hash": config.digest(), "started": _dt.datetime.now().isoformat(timespec="seconds"),
        "profile": config.profile.name, "domain": config.domain.kind,
        "reference": config.reference})


def _run_manufactured(config: CaseConfig) -> StudyResult:
    eps_list = config.eps_list
    domain = config.domain
    norms = config.norms
    quad = config.quadrature
    result = _new_result(config)
    for label, build, bc in config.variants():
        problem = build()
        result.expected[label] = config.expected_rates(label)
        for eps in eps_list:
            t0 = time.perf_counter()
            try:
                # rows need not share a mesh, so each gets the smallest box holding its band
                mesh, system, u, res, scale = _solve(config, problem, bc, eps,
                                                     box_around(domain, eps))
            except ResourceLimit:
                result.rows.append(StudyRow(eps, {}, h=config.mesh_size(eps), variant=label,
                                            skipped=True))
                continue
            except DDLabError as exc:
                raise StudyAborted(f"eps={eps}: {exc}", result) from exc
            if isinstance(bc, Neumann):
                shift = _neumann_shift(u, problem.reference, domain, mesh, quad)
                u = FEFunction(mesh, u.values + shift, u.iterations, u.residual, u.multiplier)
            errs = restricted_errors(u, problem.reference, domain, mesh, norms, quad)
            result.rows.append(StudyRow(eps, {k.value: v for k, v in errs.items()}, system.n_dofs,
                                        u.iterations, mesh.diameter, label, res, scale,
                                        time.perf_counter() - t0))
    result.metadata["finished"] = _dt.datetime.now().isoformat(timespec="seconds")
    return result


def run_case_b(config: CaseConfig) -> StudyResult:
    """Two-layer radial diffusion; same protocol as :func:`run_case`."""
    if config.case_id != "B":
        config = config.override("case", "id", "B")
    return _run_manufactured(config)


def run_case_c(config: CaseConfig) -> StudyResult:
    """Self-convergence study for singular loads.

    The reference is the diffuse solution at half the smallest width on the
    correspondingly finer mesh; coarse solutions are interpolated onto it
    (the structured meshes are nested). This measures self-convergence,
    which overestimates rates slightly when the reference is close.
    """
    eps_list = config.eps_list
    domain = config.domain
    box = box_around(domain, eps_list[0])
    norms = [n for n in config.norms]
    quad = config.quadrature
    result = _new_result(config)
    eps_ref = eps_list[-1] / 2
    for label, build, bc in config.variants():
        problem = build()
        result.expected[label] = config.expected_rates(label)
        try:
            fine_mesh, _, u_ref, _, _ = _solve(config, problem, bc, eps_ref, box)
        except DDLabError as exc:
            raise StudyAborted(f"reference eps={eps_ref}: {exc}", result) from exc
        result.metadata.setdefault("reference_eps", eps_ref)
        fx, fy = fine_mesh.vertices[:, 0], fine_mesh.vertices[:, 1]
        for eps in eps_list:
            t0 = time.perf_counter()
            try:
                mesh, system, u, res, scale = _solve(config, problem, bc, eps, box)
            except DDLabError as exc:
                raise StudyAborted(f"eps={eps}: {exc}", result) from exc
            on_fine = FEFunction(fine_mesh, mesh.interpolate(u.values, fx, fy))
            errs = restricted_errors(on_fine, u_ref, domain, fine_mesh, norms, quad)
            result.rows.append(StudyRow(eps, {k.value: v for k, v in errs.items()}, system.n_dofs,
                                        u.iterations, mesh.diameter, label, res, scale,
                                        time.perf_counter() - t0))
        del u_ref, fine_mesh
    result.metadata["finished"] = _dt.datetime.now().isoformat(timespec="seconds")
    return result


def rates_nonincreasing(result: StudyResult, norm="W12_D", slack: float = 0.1) -> bool:
    """True if the final-pair rate never grows by more than ``slack`` along the variants."""
    rates = [result.eoc(norm, v)[-1] for v in result.variants()]
    return all(b <= a + slack for a, b in zip(rates, rates[1:]))


# -- output --------------------------------------------------------------------

def results_csv(result: StudyResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["case", "eps", "norm", "error", "eoc", "dofs", "iters"])
    for variant in result.variants():
        rows = result.series(variant)
        if not rows:
            continue
        for norm in rows[0].errors:
            rates = [""] + [f"{r:.4f}" for r in result.eoc(norm, variant)]
            for row, rate in zip(rows, rates):
                w.writerow([result.label(variant), repr(row.eps), norm, f"{row.errors[norm]:.10e}",
                            rate, row.dofs, row.iterations])
    return buf.getvalue()


def results_json(result: StudyResult) -> str:
    rows = []
    for r in result.rows:
        entry = {"variant": r.variant, "eps": r.eps, "h_max": r.h, "skipped": r.skipped}
        if not r.skipped:
            rates = {}
            series = result.series(r.variant)
            k = series.index(r)
            for norm in r.errors:
                rates[norm] = result.eoc(norm, r.variant)[k - 1] if k else None
            entry.update(errors=r.errors, eoc=rates, dofs=r.dofs, iterations=r.iterations,
                         galerkin_residual=r.residual, residual_scale=r.residual_scale,
                         seconds=round(r.seconds, 3))
        rows.append(entry)
    return json.dumps({"case": result.case, "metadata": result.metadata, "rows": rows,
                       "expected_rates": result.expected}, indent=2)


def plot_data(result: StudyResult, norm) -> str:
    """Gnuplot blocks: measured (log2(1/eps), log2(error)) then the reference slope line."""
    norm = NormKind(norm).value
    out = []
    for variant in result.variants():
        rows = [r for r in result.series(variant) if norm in r.errors]
        if not rows:
            continue
        xs = [math.log2(1.0 / r.eps) for r in rows]
        ys = [math.log2(r.errors[norm]) for r in rows]
        out.append(f"# {result.label(variant)} {norm}: log2(1/eps) log2(error)")
        out += [f"{x:.6f} {y:.6f}" for x, y in zip(xs, ys)]
        out.append("")
        rate = result.expected.get(variant, {}).get(norm)
        if rate is not None:
            out.append(f"# reference slope {rate:g} anchored at the largest eps")
            out += [f"{x:.6f} {ys[0] - rate * (x - xs[0]):.6f}" for x in xs]
            out.append("")
        out.append("")
    return "\n".join(out)


def emit_results(result: StudyResult, directory, formats=("csv", "json", "plotdata"),
                 config: CaseConfig | None = None) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, text):
        path = directory / name
        path.write_text(text)
        written.append(path)

    if "csv" in formats:
        put("results.csv", results_csv(result))
    if "json" in formats:
        put("results.json", results_json(result))
    if "plotdata" in formats:
        norms = []
        for r in result.rows:
            norms += [n for n in r.errors if n not in norms]
        for n in norms:
            put(f"plot_{n}.dat", plot_data(result, n))
    if config is not None:
        put("config.resolved.toml", config.to_toml())
    return written


def output_directory(config: CaseConfig, now: _dt.datetime | None = None) -> Path:
    """out/<case>/<timestamp>, with a numeric suffix if that already exists."""
    stamp = (now or _dt.datetime.now()).strftime("%Y%m%dT%H%M%S")
    base = Path(config.sections["output"]["dir"]) / config.case_id / stamp
    path, n = base, 1
    while path.exists():
        path = base.with_name(f"{stamp}-{n}")
        n += 1
    return path
