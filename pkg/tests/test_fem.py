import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import mmread

from ddlab.errors import ConfigError, EllipticityViolation, EmptySystem, NoConvergence
from ddlab.fem import (Coefficients, DirichletPenalty, Neumann, Robin, assemble, galerkin_residual,
                       pcg, solve_cg, solve_diffuse_problem, weighted_mean, write_solution_csv,
                       write_system)
from ddlab.geometry import ComputationalBox, Disk, Rectangle, box_around
from ddlab.integrals import diffuse_surface_integral
from ddlab.meshing import DEFAULT_QUADRATURE, build_structured_mesh
from ddlab.phasefield import CUBIC, LINEAR, PhaseField

R = math.sqrt(0.5)
DISK = Disk((0.0, 0.0), R)
Q = DEFAULT_QUADRATURE


def small_setup(eps=0.5, h=0.25, profile=LINEAR, dom=DISK):
    mesh = build_structured_mesh(box_around(dom, eps), h)
    return mesh, PhaseField(profile, eps, dom)


def test_pcg_identity_one_iteration():
    r = np.array([1.0, -2.0, 3.0])
    x, it, res = pcg(sp.identity(3, format="csr"), r)
    np.testing.assert_allclose(x, r)
    assert it == 1 and res <= 1e-10


def test_pcg_two_by_two():
    A = sp.csr_matrix([[4.0, 1.0], [1.0, 3.0]])
    x, _, _ = pcg(A, np.array([1.0, 2.0]))
    np.testing.assert_allclose(x, [1 / 11, 7 / 11], rtol=1e-12)


def test_pcg_zero_rhs():
    x, it, res = pcg(sp.identity(4, format="csr"), np.zeros(4))
    assert it == 0 and not x.any()


def test_pcg_reports_nonconvergence():
    n = 200
    A = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")
    with pytest.raises(NoConvergence) as info:
        pcg(A, np.ones(n), max_iter=3)
    assert info.value.iterations == 3 and info.value.residual > 1e-10


def test_tiny_robin_system_is_spd_and_symmetric():
    mesh = build_structured_mesh(ComputationalBox((-1.0, -1.0), (1.0, 1.0)), 1.0)  # 2x2 cells
    pf = PhaseField(LINEAR, 0.5, DISK)
    system = assemble(mesh, Q, pf, Coefficients(A=1.0, c=1.0, f=1.0, g=0.0, b=1.0), Robin())
    K = system.matrix.toarray()
    assert np.array_equal(K, K.T)
    assert np.linalg.eigvalsh(K).min() > 0


@pytest.mark.parametrize("bc", [Robin(), DirichletPenalty(0.75), Neumann()])
def test_assembled_matrix_is_exactly_symmetric(bc):
    mesh, pf = small_setup(0.25, 1 / 16, CUBIC)
    A = lambda x, y: np.broadcast_to([[2.0, 0.5], [0.5, 1.0]], np.shape(x) + (2, 2))  # noqa: E731
    system = assemble(mesh, Q, pf, Coefficients(A=A, c=1.0, f=1.0, g=1.0), bc)
    diff = system.matrix - system.matrix.T
    assert diff.count_nonzero() == 0


def test_zero_data_gives_zero_load():
    mesh, pf = small_setup()
    system = assemble(mesh, Q, pf, Coefficients(f=0.0, g=0.0), Robin())
    assert not system.rhs.any()


def test_neumann_stiffness_annihilates_constants():
    mesh, pf = small_setup(0.25, 1 / 16)
    system = assemble(mesh, Q, pf, Coefficients(c=0.0), Neumann())
    assert np.abs(system.matrix @ np.ones(system.n_dofs)).max() < 1e-10
    assert system.constraint is not None
    assert system.constraint.sum() == pytest.approx(math.pi * R**2 + math.pi * 0.25**2 / 3, rel=1e-3)


@pytest.mark.parametrize("profile", [LINEAR, CUBIC])
@pytest.mark.parametrize("dom", [DISK, Rectangle((0.0, 0.0), (1.0, 1.0))])
def test_constant_solution_is_reproduced(profile, dom):
    mesh, pf = small_setup(0.25, 1 / 32, profile, dom)
    u, system = solve_diffuse_problem(mesh, pf, Coefficients(A=1.0, c=1.0, f=1.0, g=1.0, b=1.0),
                                      Robin())
    np.testing.assert_allclose(u.values[system.active], 1.0, atol=1e-8)


def test_neumann_solution_has_zero_weighted_mean():
    mesh, pf = small_setup(0.25, 1 / 32)
    f = lambda x, y: 1.0 + x + np.sin(3 * y)  # noqa: E731
    u, system = solve_diffuse_problem(mesh, pf, Coefficients(A=1.0, c=0.0, f=f, g=0.3, b=0.0),
                                      Neumann())
    assert abs(weighted_mean(system, u)) <= 1e-9
    res, scale = galerkin_residual(system, u)
    assert res <= 1e-9 * scale


def test_neumann_with_reaction_term_uses_two_solves():
    mesh, pf = small_setup(0.25, 1 / 16)
    u, system = solve_diffuse_problem(mesh, pf, Coefficients(c=1.0, f=1.0, g=0.0, b=0.0), Neumann())
    assert abs(weighted_mean(system, u)) <= 1e-9
    res, scale = galerkin_residual(system, u)
    assert res <= 1e-9 * scale


def test_bordered_matrix_shape():
    mesh, pf = small_setup()
    system = assemble(mesh, Q, pf, Coefficients(c=0.0), Neumann())
    B = system.bordered_matrix()
    assert B.shape == (system.n_dofs + 1,) * 2
    assert (B - B.T).count_nonzero() == 0


def test_galerkin_residual_after_solve():
    mesh, pf = small_setup(0.25, 1 / 32)
    u, system = solve_diffuse_problem(
        mesh, pf, Coefficients(f=lambda x, y: np.cos(x) * y, g=lambda x, y: x), Robin())
    res, scale = galerkin_residual(system, u)
    assert res <= 1e-9 * scale


def test_initial_guess_does_not_change_solution():
    mesh, pf = small_setup(0.25, 1 / 32)
    coeffs = Coefficients(f=lambda x, y: x * y, g=1.0)
    system = assemble(mesh, Q, pf, coeffs, Robin())
    a = solve_cg(system)
    b = solve_cg(system, x0=np.full(mesh.n_vertices, 3.0))
    np.testing.assert_allclose(a.values, b.values, atol=1e-8)


def test_penalty_trace_decreases_with_sigma():
    eps = 0.25
    mesh, pf = small_setup(eps, eps * eps / 2)
    g = lambda x, y: np.sin(np.pi * x) * np.cos(np.pi * y)  # noqa: E731
    traces = []
    for sigma in (0.5, 0.75, 1.0):
        u, system = solve_diffuse_problem(mesh, pf, Coefficients(f=1.0, g=g), DirichletPenalty(sigma))
        traces.append(diffuse_surface_integral(lambda x, y: (u(x, y) - g(x, y)) ** 2, pf, mesh))
    assert traces[0] > traces[1] > traces[2]


def test_penalty_parameter():
    assert DirichletPenalty(0.75).beta(1 / 16) == pytest.approx(0.125)
    with pytest.raises(ConfigError) as info:
        DirichletPenalty(0.0)
    assert info.value.key == "case.sigma"


def test_indefinite_diffusion_is_rejected():
    mesh, pf = small_setup()
    with pytest.raises(EllipticityViolation):
        assemble(mesh, Q, pf, Coefficients(A=-1.0), Robin())
    A = lambda x, y: np.broadcast_to([[1.0, 2.0], [2.0, 1.0]], np.shape(x) + (2, 2))  # noqa: E731
    with pytest.raises(EllipticityViolation):
        assemble(mesh, Q, pf, Coefficients(A=A), Robin())


@pytest.mark.parametrize("coeffs", [Coefficients(c=-1.0), Coefficients(b=0.0)])
def test_invalid_coefficients(coeffs):
    mesh, pf = small_setup()
    with pytest.raises(ConfigError):
        assemble(mesh, Q, pf, coeffs, Robin())


def test_band_outside_box_leaves_no_system():
    mesh = build_structured_mesh(ComputationalBox((3.0, 3.0), (4.0, 4.0)), 0.25)
    pf = PhaseField(LINEAR, 0.25, DISK)
    with pytest.raises(EmptySystem):
        assemble(mesh, Q, pf, Coefficients(), Robin())


@given(a11=st.floats(0.5, 3.0), a22=st.floats(0.5, 3.0), a12=st.floats(-0.4, 0.4),
       c=st.floats(0.0, 2.0))
@settings(max_examples=15, deadline=None)
def test_robin_matrix_positive_definite(a11, a22, a12, c):
    mesh, pf = small_setup(0.5, 0.25)
    A = lambda x, y: np.broadcast_to([[a11, a12], [a12, a22]], np.shape(x) + (2, 2))  # noqa: E731
    system = assemble(mesh, Q, pf, Coefficients(A=A, c=c), Robin())
    assert system.n_dofs <= 300
    K = system.matrix.toarray()
    assert np.array_equal(K, K.T)
    assert np.linalg.eigvalsh(K).min() > 0


def test_output_writers(tmp_path):
    mesh, pf = small_setup()
    u, system = solve_diffuse_problem(mesh, pf, Coefficients(f=1.0, g=1.0), Robin())
    write_solution_csv(u, tmp_path / "u.csv")
    lines = (tmp_path / "u.csv").read_text().splitlines()
    assert lines[0] == "vertex_index,x,y,value"
    assert len(lines) == mesh.n_vertices + 1
    write_system(system, tmp_path / "K.mtx")
    assert (mmread(str(tmp_path / "K.mtx")) != system.matrix).nnz == 0
