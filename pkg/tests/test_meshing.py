import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddlab.errors import ConfigError, DegenerateElement, ResourceLimit
from ddlab.geometry import ComputationalBox, Disk
from ddlab.meshing import (DEFAULT_QUADRATURE, DEGREE4_BARY, DEGREE4_WEIGHTS, build_structured_mesh,
                           classify_elements, diffuse_batches, p1_gradients,
                           p1_shape_values_and_gradients, quadrature_points, read_mesh,
                           sharp_batches, write_mesh)
from ddlab.phasefield import LINEAR, PhaseField

UNIT = ComputationalBox((0.0, 0.0), (1.0, 1.0))
DISK = Disk((0.0, 0.0), math.sqrt(0.5))


def ref_monomial(a, b):
    """Integral of x^a y^b over the reference triangle (0,0),(1,0),(0,1)."""
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


def test_mesh_counts_and_area():
    mesh = build_structured_mesh(UNIT, 0.25)
    assert (mesh.nx, mesh.ny) == (4, 4)
    assert mesh.n_vertices == 25 and mesh.n_triangles == 32
    area, _ = p1_gradients(mesh.vertices[mesh.triangles])
    assert np.all(area > 0)
    assert area.sum() == pytest.approx(1.0)
    assert mesh.diameter == pytest.approx(0.25 * math.sqrt(2))


def test_dyadic_meshes_are_nested():
    coarse = build_structured_mesh(UNIT, 0.25)
    fine = build_structured_mesh(UNIT, 0.125)
    fine_set = {tuple(v) for v in np.round(fine.vertices, 12)}
    assert all(tuple(v) in fine_set for v in np.round(coarse.vertices, 12))
    # every fine triangle centroid falls in a coarse triangle whose interpolant of a
    # coarse hat function is linear on it, so interpolation is exact at fine nodes
    vals = np.random.default_rng(1).standard_normal(coarse.n_vertices)
    on_fine = coarse.interpolate(vals, fine.vertices[:, 0], fine.vertices[:, 1])
    back = fine.interpolate(on_fine, coarse.vertices[:, 0], coarse.vertices[:, 1])
    np.testing.assert_allclose(back, vals, atol=1e-12)


def test_resource_cap_and_bad_sizes():
    with pytest.raises(ResourceLimit):
        build_structured_mesh(UNIT, 1e-3, max_vertices=1000)
    with pytest.raises(ConfigError):
        build_structured_mesh(UNIT, 0.75)
    with pytest.raises(ConfigError):
        build_structured_mesh(UNIT, -0.1)


@given(a=st.floats(-3, 3), b=st.floats(-3, 3), c=st.floats(-3, 3),
       px=st.floats(0, 1), py=st.floats(0, 1))
@settings(max_examples=50, deadline=None)
def test_interpolation_is_exact_for_affine_functions(a, b, c, px, py):
    mesh = build_structured_mesh(UNIT, 0.125)
    vals = a + b * mesh.vertices[:, 0] + c * mesh.vertices[:, 1]
    got = mesh.interpolate(vals, np.array([px]), np.array([py]))[0]
    assert got == pytest.approx(a + b * px + c * py, abs=1e-12)


def test_locate_returns_containing_triangle():
    mesh = build_structured_mesh(UNIT, 0.25)
    pts = np.random.default_rng(0).random((200, 2))
    tri, bary = mesh.locate(pts[:, 0], pts[:, 1])
    assert np.all(bary >= -1e-14)
    np.testing.assert_allclose(bary.sum(axis=1), 1.0)
    rebuilt = np.einsum("nk,nkd->nd", bary, mesh.vertices[mesh.triangles[tri]])
    np.testing.assert_allclose(rebuilt, pts, atol=1e-14)


def test_degree4_rule_weights_and_exactness():
    assert DEGREE4_WEIGHTS.sum() == pytest.approx(1.0, abs=1e-15)
    x, y = DEGREE4_BARY[:, 1], DEGREE4_BARY[:, 2]
    for a in range(5):
        for b in range(5 - a):
            got = 0.5 * np.sum(DEGREE4_WEIGHTS * x**a * y**b)
            assert got == pytest.approx(ref_monomial(a, b), rel=1e-13), (a, b)


@pytest.mark.parametrize("depth", [0, 1, 2, 4])
def test_composite_rule(depth):
    bary, w, child, cent = DEFAULT_QUADRATURE.composite(depth)
    assert w.sum() == pytest.approx(1.0, abs=1e-13)
    assert cent.shape == (4**depth, 3)
    assert child.max() == 4**depth - 1
    x, y = bary[:, 1], bary[:, 2]
    assert 0.5 * np.sum(w * x**4) == pytest.approx(ref_monomial(4, 0), rel=1e-12)
    assert 0.5 * np.sum(w * x**2 * y**2) == pytest.approx(ref_monomial(2, 2), rel=1e-12)


def test_shape_functions_on_known_triangle():
    tri = [[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]]
    vals, grads = p1_shape_values_and_gradients(tri, [[0.0, 0.0], [1.0, 0.5], [0.5, 0.25]])
    np.testing.assert_allclose(grads, [[-0.5, -1.0], [0.5, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(vals, [[1, 0, 0], [0, 0.5, 0.5], [0.5, 0.25, 0.25]])


@pytest.mark.parametrize("tri", [[[0, 0], [1, 0], [2, 0]], [[0, 0], [0, 1], [1, 0]]])
def test_degenerate_or_clockwise_triangles_raise(tri):
    with pytest.raises(DegenerateElement):
        p1_shape_values_and_gradients(tri)


def test_quadrature_points_weights_sum_to_area():
    pf = PhaseField(LINEAR, 0.25, DISK)
    band_tri = [[0.7, 0.0], [0.8, 0.0], [0.8, 0.1]]
    deep_tri = [[0.0, 0.0], [0.1, 0.0], [0.1, 0.1]]
    for tri, n in ((band_tri, 96), (deep_tri, 6)):
        pts = quadrature_points(tri, DEFAULT_QUADRATURE, pf)
        assert len(pts) == n
        assert sum(w for _, w in pts) == pytest.approx(0.005)


def test_mesh_file_roundtrip(tmp_path):
    mesh = build_structured_mesh(UNIT, 0.5)
    path = tmp_path / "mesh.txt"
    write_mesh(mesh, path)
    v, t = read_mesh(path)
    np.testing.assert_array_equal(v, mesh.vertices)
    np.testing.assert_array_equal(t, mesh.triangles)
    assert path.read_text().splitlines()[0] == "v 0.0 0.0"


def test_element_classes_partition_the_mesh():
    mesh = build_structured_mesh(ComputationalBox((-1.0, -1.0), (1.0, 1.0)), 1 / 16)
    parts = classify_elements(mesh, DISK, 0.125)
    allidx = np.sort(np.concatenate(parts))
    np.testing.assert_array_equal(allidx, np.arange(mesh.n_triangles))


def test_batches_cover_support_and_domain():
    mesh = build_structured_mesh(ComputationalBox((-1.0, -1.0), (1.0, 1.0)), 1 / 16)
    pf = PhaseField(LINEAR, 0.125, DISK)
    total = sum(b.w.sum() for b in diffuse_batches(mesh, DEFAULT_QUADRATURE, pf,
                                                   include_exterior=True))
    assert total == pytest.approx(4.0, rel=1e-12)
    area = 0.0
    for b in sharp_batches(mesh, DEFAULT_QUADRATURE, DISK):
        area += b.w.sum() if b.inside is None else b.w[b.inside].sum()
    assert area == pytest.approx(math.pi / 2, rel=1e-4)
