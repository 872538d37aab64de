"""P1 assembly and solution of the diffuse Robin, penalised Dirichlet and Neumann problems."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.io
import scipy.sparse as sp
from scipy.linalg.blas import daxpy

from .errors import ConfigError, EllipticityViolation, EmptySystem, NoConvergence
from .meshing import DEFAULT_QUADRATURE, ElementQuadrature, TriMesh, diffuse_batches
from .phasefield import PhaseField

INACTIVE_WEIGHT = 1e-14


# -- boundary condition kinds ---------------------------------------------

@dataclass(frozen=True)
class Robin:
    name = "robin"


@dataclass(frozen=True)
class DirichletPenalty:
    """Dirichlet data imposed through the penalty 1/beta with beta = eps**sigma."""

    sigma: float = 1.0
    name = "dirichlet"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError(f"penalty exponent sigma must be positive, got {self.sigma}",
                              key="case.sigma")

    def beta(self, eps: float) -> float:
        return eps**self.sigma


@dataclass(frozen=True)
class Neumann:
    name = "neumann"


BCKind = Robin | DirichletPenalty | Neumann


def _as_field(v):
    if callable(v):
        return v
    value = float(v)
    return lambda x, y: np.full(np.shape(x), value)


@dataclass
class Coefficients:
    """Data of -div(A grad u) + c u = f with boundary datum g and Robin coefficient b.

    Each entry is a number or a callable ``(x, y) -> array``. ``A`` may
    return an array shaped like ``x`` (isotropic) or ``x.shape + (2, 2)``.
    """

    A: Callable | float = 1.0
    c: Callable | float = 1.0
    f: Callable | float = 0.0
    g: Callable | float = 0.0
    b: Callable | float = 1.0

    def fields(self):
        return {k: _as_field(getattr(self, k)) for k in "Acfgb"}


@dataclass
class AssembledSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    active: np.ndarray                # mesh vertex index of every system row
    mesh: TriMesh = field(repr=False)
    constraint: np.ndarray | None = None   # weighted-mean row (Neumann)
    kappa: float = 1.0
    n_points: int = 0

    @property
    def n_dofs(self) -> int:
        return self.active.size

    def bordered_matrix(self) -> sp.csr_matrix:
        """The symmetric saddle-point matrix [[K, m], [m^T, 0]] of a Neumann system."""
        if self.constraint is None:
            return self.matrix
        m = sp.csr_matrix(self.constraint[:, None])
        return sp.bmat([[self.matrix, m], [m.T, None]], format="csr")

    def lift(self, x):
        vals = np.zeros(self.mesh.n_vertices)
        vals[self.active] = x
        return vals


@dataclass
class FEFunction:
    mesh: TriMesh = field(repr=False)
    values: np.ndarray = field(repr=False)
    iterations: int = 0
    residual: float = 0.0
    multiplier: float = 0.0

    def __call__(self, x, y):
        return self.mesh.interpolate(self.values, x, y)


def _element_blocks(batch, pf, fields, bc, beta):
    d = pf.domain.distance(batch.x, batch.y)
    om = pf.omega_from_distance(d)
    gm = pf.grad_magnitude_from_distance(d)
    x, y, w, bary, G = batch.x, batch.y, batch.w, batch.bary, batch.grads
    wo, wg = w * om, w * gm

    A = np.asarray(fields["A"](x, y), dtype=float)
    if A.ndim == x.ndim:
        kmin = float(A.min()) if A.size else 1.0
        kmax = float(A.max()) if A.size else 1.0
        abar = np.einsum("eq,eq->e", wo, A)
        K = abar[:, None, None] * np.einsum("eia,eja->eij", G, G)
    else:
        ev = np.linalg.eigvalsh(A.reshape(-1, 2, 2)) if A.size else np.ones((1, 2))
        kmin, kmax = float(ev.min()), float(ev.max())
        abar = np.einsum("eq,eqab->eab", wo, A)
        K = np.einsum("eia,eab,ejb->eij", G, abar, G)
    if not kmin > 0:
        raise EllipticityViolation(f"diffusion tensor not positive definite (min eigenvalue {kmin:g})")

    c = np.asarray(fields["c"](x, y), dtype=float)
    if np.any(c < 0):
        raise ConfigError("reaction coefficient c must be nonnegative", key="case.c")
    M = np.einsum("eq,qi,qj->eij", wo * c, bary, bary)
    F = np.einsum("eq,qi->ei", wo * fields["f"](x, y), bary)

    g = fields["g"](x, y)
    if isinstance(bc, Neumann):
        B = None
    elif isinstance(bc, DirichletPenalty):
        B = np.einsum("eq,qi,qj->eij", wg / beta, bary, bary)
        g = g / beta
    else:
        b = np.asarray(fields["b"](x, y), dtype=float)
        if np.any((gm > 0) & ~(b > 0)):
            raise ConfigError("Robin coefficient b must be positive in the band; "
                              "use the Neumann kind for b = 0", key="case.b")
        B = np.einsum("eq,qi,qj->eij", wg * b, bary, bary)
    F = F + np.einsum("eq,qi->ei", wg * g, bary)

    local = K + M if B is None else K + M + B
    # symmetrise so that (i, j) and (j, i) are bitwise identical
    local = 0.5 * (local + local.transpose(0, 2, 1))
    mean = np.einsum("eq,qi->ei", wo, bary)
    weight = (wo + wg).sum(axis=1)
    return local, F, mean, weight, (kmin, kmax)


class _TripletBuffer:
    """COO triplets folded into a CSR sum whenever the buffer grows large."""

    def __init__(self, n, limit=1 << 25):
        self.n, self.limit = n, limit
        self.rows, self.cols, self.vals = [], [], []
        self.size = 0
        self.total = sp.csr_matrix((n, n))

    def add(self, tri, local):
        idx = tri.astype(np.int32, copy=False)
        self.rows.append(np.repeat(idx, 3, axis=1).ravel())
        self.cols.append(np.tile(idx, (1, 3)).ravel())
        self.vals.append(local.ravel())
        self.size += local.size
        if self.size >= self.limit:
            self.fold()

    def fold(self):
        if not self.vals:
            return
        part = sp.coo_matrix((np.concatenate(self.vals),
                              (np.concatenate(self.rows), np.concatenate(self.cols))),
                             shape=(self.n, self.n)).tocsr()
        self.rows, self.cols, self.vals = [], [], []
        self.size = 0
        self.total = self.total + part

    def matrix(self):
        self.fold()
        self.total.sum_duplicates()
        return self.total


def assemble(mesh: TriMesh, quad: ElementQuadrature, pf: PhaseField, coeffs: Coefficients,
             bc: BCKind) -> AssembledSystem:
    """Assemble the diffuse bilinear form and load restricted to active vertices."""
    fields = coeffs.fields()
    beta = bc.beta(pf.eps) if isinstance(bc, DirichletPenalty) else None
    nv = mesh.n_vertices
    triplets = _TripletBuffer(nv)
    rhs = np.zeros(nv)
    mean = np.zeros(nv)
    vweight = np.zeros(nv)
    kmin, kmax = math.inf, 0.0
    n_points = 0
    for batch in diffuse_batches(mesh, quad, pf):
        local, F, m, weight, (lo, hi) = _element_blocks(batch, pf, fields, bc, beta)
        kmin, kmax = min(kmin, lo), max(kmax, hi)
        tri = mesh.triangles[batch.elements]
        triplets.add(tri, local)
        np.add.at(rhs, tri, F)
        np.add.at(mean, tri, m)
        np.maximum.at(vweight, tri, weight[:, None])
        n_points += batch.x.size

    active = np.flatnonzero(vweight >= INACTIVE_WEIGHT)
    if active.size == 0:
        raise EmptySystem("no vertex carries phase-field weight; is the band inside the box?")
    full = triplets.matrix()
    matrix = full[active][:, active].tocsr()
    del full
    kappa = max(kmax, 1.0 / kmin) if np.isfinite(kmin) else 1.0
    constraint = mean[active] if isinstance(bc, Neumann) else None
    return AssembledSystem(matrix, rhs[active], active, mesh, constraint, kappa, n_points)


# -- solvers ----------------------------------------------------------------

def pcg(A, b, x0=None, tol=1e-10, max_iter=None):
    """Jacobi-preconditioned conjugate gradients for an SPD (or consistent SPSD) matrix.

    Returns ``(x, iterations, relative_residual)``; raises NoConvergence
    when the relative residual ``|b - A x| / |b|`` does not reach ``tol``.
    """
    n = b.size
    if max_iter is None:
        max_iter = max(100, int(50 * math.sqrt(n)))
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return np.zeros(n), 0, 0.0
    diag = A.diagonal()
    inv_diag = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
    r = b - A @ x
    target2 = (tol * bnorm) ** 2
    target = tol * bnorm
    z = np.empty(n)
    it = 0
    while True:
        np.multiply(inv_diag, r, out=z)
        p = z.copy()
        rz = r @ z
        # in-place BLAS updates; on large meshes these passes cost more than the matvec
        while r @ r > target2 and it < max_iter:
            Ap = A @ p
            alpha = rz / (p @ Ap)
            daxpy(p, x, a=alpha)
            daxpy(Ap, r, a=-alpha)
            np.multiply(inv_diag, r, out=z)
            rz_new = r @ z
            p *= rz_new / rz
            p += z
            rz = rz_new
            it += 1
        # guard against drift of the recursive residual
        r = b - A @ x
        res = np.linalg.norm(r)
        if res <= target:
            return x, it, res / bnorm
        if it >= max_iter:
            raise NoConvergence(f"PCG stopped after {it} iterations with relative residual "
                                f"{res / bnorm:.3e}", iterations=it, residual=res / bnorm)


def _neumann_solve(system, tol, max_iter, x0):
    K, F, m = system.matrix, system.rhs, system.constraint
    ones = np.ones(K.shape[0])
    kernel = np.linalg.norm(K @ ones) <= 1e-10 * max(1.0, abs(K).sum() / K.shape[0]) * math.sqrt(K.shape[0])
    if kernel:
        lam = ones @ F / (ones @ m)
        x, it, _ = pcg(K, F - lam * m, x0, tol, max_iter)
        x -= (m @ x) / (m @ ones) * ones
    else:
        y1, it1, _ = pcg(K, F, x0, tol, max_iter)
        y2, it2, _ = pcg(K, m, None, tol, max_iter)
        lam = (m @ y1) / (m @ y2)
        x = y1 - lam * y2
        it = it1 + it2
    r = np.concatenate([F - K @ x - lam * m, [-(m @ x)]])
    return x, it, np.linalg.norm(r) / np.linalg.norm(F), lam


def solve_cg(system: AssembledSystem, tol: float = 1e-10, max_iter: int | None = None,
             x0=None) -> FEFunction:
    """Solve the assembled system; ``x0`` is an optional initial guess on all mesh vertices."""
    guess = None if x0 is None else np.asarray(x0, dtype=float)[system.active]
    if system.constraint is None:
        x, it, res = pcg(system.matrix, system.rhs, guess, tol, max_iter)
        lam = 0.0
    else:
        x, it, res, lam = _neumann_solve(system, tol, max_iter, guess)
    return FEFunction(system.mesh, system.lift(x), it, res, lam)


def galerkin_residual(system: AssembledSystem, u: FEFunction):
    """Max over active basis functions of |a(u, phi_i) - l(phi_i)| and the scale |l|."""
    x = u.values[system.active]
    r = system.rhs - system.matrix @ x
    if system.constraint is not None:
        r = r - u.multiplier * system.constraint
    return float(np.abs(r).max()), float(np.linalg.norm(system.rhs))


def solve_diffuse_problem(mesh: TriMesh, pf: PhaseField, coeffs: Coefficients, bc: BCKind,
                          quad: ElementQuadrature = DEFAULT_QUADRATURE, tol: float = 1e-10,
                          max_iter: int | None = None, x0=None):
    """Assemble and solve; returns ``(FEFunction, AssembledSystem)``."""
    system = assemble(mesh, quad, pf, coeffs, bc)
    return solve_cg(system, tol, max_iter, x0), system


def weighted_mean(system: AssembledSystem, u: FEFunction) -> float:
    """Integral of u * omega (Neumann systems only)."""
    return float(system.constraint @ u.values[system.active])


def write_solution_csv(u: FEFunction, path) -> None:
    with open(path, "w") as fh:
        fh.write("vertex_index,x,y,value\n")
        for i, ((x, y), v) in enumerate(zip(u.mesh.vertices, u.values)):
            fh.write(f"{i},{x!r},{y!r},{v!r}\n")


def write_system(system: AssembledSystem, path) -> None:
    scipy.io.mmwrite(str(path), system.matrix, comment="diffuse system, rows = active vertices")
