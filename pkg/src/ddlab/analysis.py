"""Error norms on D, weighted norms on D_eps and discrete functional-inequality constants."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import ConfigError, NoConvergence, ZeroReference
from .fem import Coefficients, FEFunction, Neumann, Robin, assemble, pcg
from .geometry import SharpDomain
from .meshing import DEFAULT_QUADRATURE, ElementQuadrature, TriMesh, diffuse_batches, sharp_batches
from .phasefield import PhaseField


class NormKind(str, enum.Enum):
    L2_D = "L2_D"
    W12_D = "W12_D"
    W11_D = "W11_D"
    W1inf_D = "W1inf_D"
    L2_weighted = "L2_weighted"
    W12_weighted = "W12_weighted"


RESTRICTED = (NormKind.L2_D, NormKind.W12_D, NormKind.W11_D, NormKind.W1inf_D)


def _fe_on_batch(u: FEFunction, batch):
    nodal = u.values[u.mesh.triangles[batch.elements]]       # (n, 3)
    val = nodal @ batch.bary.T
    grad = np.einsum("ei,eia->ea", nodal, batch.grads)
    return val, grad[:, None, 0], grad[:, None, 1]


def _ref_on_batch(u_ref, batch, x, y):
    if isinstance(u_ref, FEFunction):
        v, gx, gy = _fe_on_batch(u_ref, batch)
        return v, gx, gy
    return u_ref(x, y)


class _Accumulator:
    def __init__(self):
        self.l2 = self.h1 = self.l1 = 0.0
        self.sup = 0.0

    def add(self, w, v, gx, gy):
        g2 = gx * gx + gy * gy
        self.l2 += float(np.sum(w * v * v))
        self.h1 += float(np.sum(w * (v * v + g2)))
        self.l1 += float(np.sum(w * (np.abs(v) + np.sqrt(g2))))
        if v.size:
            self.sup = max(self.sup, float(np.max(np.maximum(np.abs(v), np.sqrt(g2)))))

    def norm(self, kind):
        return {NormKind.L2_D: math.sqrt(self.l2), NormKind.W12_D: math.sqrt(self.h1),
                NormKind.W11_D: self.l1, NormKind.W1inf_D: self.sup}[kind]


def restricted_errors(u_h: FEFunction, u_ref, domain: SharpDomain, mesh: TriMesh | None = None,
                      kinds=RESTRICTED, quad: ElementQuadrature = DEFAULT_QUADRATURE,
                      depth: int | None = None) -> dict:
    """Relative errors ||u_ref - u_h|| / ||u_ref|| over D for several norm kinds at once.

    ``u_ref`` is either a callable ``(x, y) -> (value, dx, dy)`` or an
    FEFunction on the same mesh. The W1inf kind is a supremum over the
    quadrature nodes inside D.
    """
    mesh = u_h.mesh if mesh is None else mesh
    err, ref = _Accumulator(), _Accumulator()
    for b in sharp_batches(mesh, quad, domain, depth=depth):
        v, gx, gy = _fe_on_batch(u_h, b)
        rv, rgx, rgy = _ref_on_batch(u_ref, b, b.x, b.y)
        rv, rgx, rgy = (np.broadcast_to(a, b.x.shape) for a in (rv, rgx, rgy))
        gx, gy = np.broadcast_to(gx, b.x.shape), np.broadcast_to(gy, b.x.shape)
        if b.inside is not None:
            m = b.inside
            w = b.w[m]
            v, gx, gy, rv, rgx, rgy = (a[m] for a in (v, gx, gy, rv, rgx, rgy))
        else:
            w = b.w
        ref.add(w, rv, rgx, rgy)
        err.add(w, rv - v, rgx - gx, rgy - gy)
    out = {}
    for kind in kinds:
        kind = NormKind(kind)
        if kind not in RESTRICTED:
            raise ConfigError(f"{kind.value} is not a restricted norm")
        denom = ref.norm(kind)
        if denom < 1e-14:
            raise ZeroReference(f"reference has vanishing {kind.value} norm")
        out[kind] = err.norm(kind) / denom
    return out


def restricted_error(u_h: FEFunction, u_ref, domain: SharpDomain, mesh: TriMesh | None = None,
                     kind=NormKind.L2_D, **kw) -> float:
    return restricted_errors(u_h, u_ref, domain, mesh, kinds=(kind,), **kw)[NormKind(kind)]


def weighted_norm(v: FEFunction, pf: PhaseField, mesh: TriMesh | None = None,
                  kind=NormKind.L2_weighted, quad: ElementQuadrature = DEFAULT_QUADRATURE) -> float:
    """sqrt of the integral of (v^2 [+ |grad v|^2]) * omega over the box."""
    kind = NormKind(kind)
    if kind not in (NormKind.L2_weighted, NormKind.W12_weighted):
        raise ConfigError(f"{kind.value} is not a weighted norm")
    mesh = v.mesh if mesh is None else mesh
    total = 0.0
    for b in diffuse_batches(mesh, quad, pf):
        om = pf.omega_from_distance(pf.domain.distance(b.x, b.y))
        val, gx, gy = _fe_on_batch(v, b)
        dens = val * val
        if kind is NormKind.W12_weighted:
            dens = dens + gx * gx + gy * gy
        total += float(np.sum(b.w * om * dens))
    return math.sqrt(total)


@dataclass
class ErrorReport:
    eps: float
    errors: dict = field(default_factory=dict)
    dof_count: int = 0
    iterations: int = 0
    h: float = 0.0


# -- functional-inequality constants ---------------------------------------

@dataclass
class InequalityMatrices:
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    boundary: sp.csr_matrix
    mean: np.ndarray


def inequality_matrices(mesh: TriMesh, pf: PhaseField,
                        quad: ElementQuadrature = DEFAULT_QUADRATURE) -> InequalityMatrices:
    """Weighted stiffness, weighted mass and diffuse boundary mass on the active vertices.

    Obtained from three assemblies with unit coefficients, sharing one
    active set: K from (A=1, c=0), K + M from (A=1, c=1) with Neumann, and
    K + B from Robin with c=0.
    """
    k = assemble(mesh, quad, pf, Coefficients(A=1.0, c=0.0), Neumann())
    km = assemble(mesh, quad, pf, Coefficients(A=1.0, c=1.0), Neumann())
    kb = assemble(mesh, quad, pf, Coefficients(A=1.0, c=0.0, b=1.0), Robin())
    if not (np.array_equal(k.active, km.active) and np.array_equal(k.active, kb.active)):
        raise AssertionError("inconsistent active sets")
    K = k.matrix
    M = (km.matrix - K).tocsr()
    B = (kb.matrix - K).tocsr()
    M.eliminate_zeros()
    B.eliminate_zeros()
    return InequalityMatrices(K, M, B, k.constraint)


@dataclass
class PowerResult:
    value: float
    iterations: int
    vector: np.ndarray = field(repr=False)


def generalized_power_iteration(P, Q, tol=1e-6, max_iter=2000, inner_tol=1e-10,
                                deflate=None, seed=0) -> PowerResult:
    """Largest eigenvalue of P v = lambda Q v (P SPSD, Q SPD on the iteration space).

    Iterates v <- Q^{-1} P v with PCG inner solves warm-started from the
    previous iterate. ``deflate`` is a vector m; iterates are kept in the
    subspace m^T v = 0 (Q may then be singular on constants). Stops when
    consecutive Rayleigh quotients agree to ``tol`` relatively.
    """
    n = P.shape[0]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    ones = np.ones(n)

    def project(z):
        if deflate is None:
            return z
        return z - (deflate @ z) / (deflate @ ones) * ones

    v = project(v)
    rho_old = None
    guess = None
    for it in range(1, max_iter + 1):
        Pv = P @ v
        if not np.any(Pv):
            return PowerResult(0.0, it, v)
        z, _, _ = pcg(Q, Pv, guess, inner_tol)
        z = project(z)
        scale = math.sqrt(z @ (Q @ z))
        if scale == 0.0:
            return PowerResult(0.0, it, v)
        v = z / scale
        rho = float(v @ (P @ v)) / float(v @ (Q @ v))
        # Q^{-1} P v is close to rho * v once the iteration settles
        guess = rho * v
        if rho_old is not None and abs(rho - rho_old) <= tol * abs(rho):
            return PowerResult(rho, it, v)
        rho_old = rho
    raise NoConvergence(f"power iteration did not settle in {max_iter} steps", iterations=max_iter)


def dense_generalized_max(P, Q, deflate=None) -> float:
    """Dense reference for :func:`generalized_power_iteration` on small systems."""
    P = P.toarray() if sp.issparse(P) else np.asarray(P)
    Q = Q.toarray() if sp.issparse(Q) else np.asarray(Q)
    if deflate is not None:
        basis = scipy.linalg.null_space(deflate[None, :])
        P, Q = basis.T @ P @ basis, basis.T @ Q @ basis
    return float(scipy.linalg.eigh(P, Q, eigvals_only=True)[-1])


def discrete_trace_constant(mesh, pf, quad=DEFAULT_QUADRATURE, tol=1e-6, dense=False, mats=None):
    """Best C with  int |v|^2 |grad omega| <= C ||v||^2_{W^{1,2}(omega)}  over P1 functions."""
    m = mats or inequality_matrices(mesh, pf, quad)
    Q = (m.stiffness + m.mass).tocsr()
    if dense:
        return dense_generalized_max(m.boundary, Q)
    return generalized_power_iteration(m.boundary, Q, tol).value


def discrete_poincare_friedrichs_constant(mesh, pf, quad=DEFAULT_QUADRATURE, tol=1e-6,
                                          dense=False, mats=None, boundary_scale=1.0):
    """Best C with  ||v||^2_{L^2(omega)} <= C (||grad v||^2_{L^2(omega)} + int |v|^2 |grad omega|)."""
    m = mats or inequality_matrices(mesh, pf, quad)
    Q = (m.stiffness + boundary_scale * m.boundary).tocsr()
    if dense:
        return dense_generalized_max(m.mass, Q)
    return generalized_power_iteration(m.mass, Q, tol).value


def discrete_poincare_mean_constant(mesh, pf, quad=DEFAULT_QUADRATURE, tol=1e-6,
                                    dense=False, mats=None):
    """Best C with ||v - mean_omega(v)||^2_{L^2(omega)} <= C ||grad v||^2_{L^2(omega)}."""
    m = mats or inequality_matrices(mesh, pf, quad)
    if dense:
        return dense_generalized_max(m.mass, m.stiffness, deflate=m.mean)
    return generalized_power_iteration(m.mass, m.stiffness, tol, deflate=m.mean).value
