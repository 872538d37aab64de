"""Structured triangulations of the box and band-resolving element quadrature."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DegenerateElement, ResourceLimit
from .geometry import ComputationalBox, SharpDomain

DEFAULT_MAX_VERTICES = 2**23

# Symmetric 6-point rule, exact for polynomials of degree 4 (Dunavant).
_A1, _W1 = 0.445948490915965, 0.223381589678011
_A2, _W2 = 0.091576213509771, 0.109951743655322


def _orbit(a):
    b = 1.0 - 2.0 * a
    return [(b, a, a), (a, b, a), (a, a, b)]


DEGREE4_BARY = np.array(_orbit(_A1) + _orbit(_A2))
DEGREE4_WEIGHTS = np.array([_W1] * 3 + [_W2] * 3)


@dataclass
class TriMesh:
    """Uniform grid of ``nx * ny`` cells, each cut into two CCW triangles.

    Cell (i, j) has corners v00=(i, j), v10, v11, v01; its triangles are
    (v00, v10, v11) and (v00, v11, v01), so the diagonal always runs
    south-west to north-east and dyadic refinements are nested.
    """

    box: ComputationalBox
    nx: int
    ny: int
    h: float
    vertices: np.ndarray = field(repr=False)
    triangles: np.ndarray = field(repr=False)

    @property
    def hx(self) -> float:
        return (self.box.max[0] - self.box.min[0]) / self.nx

    @property
    def hy(self) -> float:
        return (self.box.max[1] - self.box.min[1]) / self.ny

    @property
    def diameter(self) -> float:
        """Longest edge (the cell diagonal)."""
        return math.hypot(self.hx, self.hy)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def locate(self, x, y):
        """Containing triangle and barycentric coordinates of points (structured lookup)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        s = (x - self.box.min[0]) / self.hx
        t = (y - self.box.min[1]) / self.hy
        i = np.clip(np.floor(s).astype(np.int64), 0, self.nx - 1)
        j = np.clip(np.floor(t).astype(np.int64), 0, self.ny - 1)
        s -= i
        t -= j
        lower = s >= t
        cell = j * self.nx + i
        tri = 2 * cell + np.where(lower, 0, 1)
        bary = np.where(lower[..., None],
                        np.stack([1.0 - s, s - t, t], axis=-1),
                        np.stack([1.0 - t, s, t - s], axis=-1))
        return tri, bary

    def interpolate(self, values, x, y):
        """Evaluate the P1 function with nodal ``values`` at arbitrary points."""
        tri, bary = self.locate(x, y)
        return np.einsum("...k,...k->...", values[self.triangles[tri]], bary)


def build_structured_mesh(box: ComputationalBox, h: float,
                          max_vertices: int = DEFAULT_MAX_VERTICES) -> TriMesh:
    lx, ly = box.extent
    if not h > 0:
        raise ConfigError(f"mesh size must be positive, got {h}")
    if h > min(lx, ly) / 2 + 1e-15:
        raise ConfigError(f"mesh size {h} exceeds half the smallest box extent")
    nx = math.ceil(lx / h - 1e-9)
    ny = math.ceil(ly / h - 1e-9)
    nv = (nx + 1) * (ny + 1)
    if nv > max_vertices:
        raise ResourceLimit(f"mesh with h={h:g} needs {nv} vertices (cap {max_vertices})")
    xs = np.linspace(box.min[0], box.max[0], nx + 1)
    ys = np.linspace(box.min[1], box.max[1], ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    jj, ii = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    v00 = (jj * (nx + 1) + ii).ravel()
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int32 if nv < 2**31 else np.int64)
    triangles[0::2] = np.column_stack([v00, v10, v11])
    triangles[1::2] = np.column_stack([v00, v11, v01])
    return TriMesh(box, nx, ny, h, vertices, triangles)


def max_h_for_cap(box: ComputationalBox, max_vertices: int = DEFAULT_MAX_VERTICES) -> float:
    """Smallest mesh size whose structured mesh respects the vertex cap."""
    lx, ly = box.extent
    # (lx/h + 1)(ly/h + 1) <= cap, solved for 1/h
    a, b, c = lx * ly, lx + ly, 1.0 - max_vertices
    inv_h = (-b + math.sqrt(b * b - 4 * a * c)) / (2 * a)
    return 1.0 / math.floor(inv_h)


def write_mesh(mesh: TriMesh, path) -> None:
    with open(path, "w") as fh:
        for x, y in mesh.vertices.tolist():
            fh.write(f"v {x!r} {y!r}\n")
        for i, j, k in mesh.triangles.tolist():
            fh.write(f"t {i} {j} {k}\n")


def read_mesh(path):
    verts, tris = [], []
    with open(path) as fh:
        for line in fh:
            tag, *rest = line.split()
            if tag == "v":
                verts.append([float(r) for r in rest])
            elif tag == "t":
                tris.append([int(r) for r in rest])
    return np.array(verts), np.array(tris, dtype=np.int64)


# -- reference rules -------------------------------------------------------

@lru_cache(maxsize=None)
def _children(depth: int) -> np.ndarray:
    """Barycentric corners of the 4**depth uniform children of the reference triangle."""
    tris = [np.eye(3)]
    for _ in range(depth):
        nxt = []
        for t in tris:
            a, b, c = t
            ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
            nxt += [np.array([a, ab, ca]), np.array([ab, b, bc]),
                    np.array([ca, bc, c]), np.array([ab, bc, ca])]
        tris = nxt
    return np.array(tris)


@dataclass(frozen=True)
class ElementQuadrature:
    """Base rule on each element, subdivided ``band_depth`` times in the phase-field band."""

    bary: np.ndarray = field(default_factory=lambda: DEGREE4_BARY, repr=False)
    weights: np.ndarray = field(default_factory=lambda: DEGREE4_WEIGHTS, repr=False)
    band_depth: int = 2
    interface_depth: int = 4

    def composite(self, depth: int):
        """(bary, weights, child_index, child_centroids) of the subdivided rule.

        Weights are fractions of the element area and sum to one.
        """
        return _composite(self.bary.tobytes(), self.weights.tobytes(), depth)


@lru_cache(maxsize=None)
def _composite(bary_bytes, weight_bytes, depth):
    bary = np.frombuffer(bary_bytes).reshape(-1, 3)
    weights = np.frombuffer(weight_bytes)
    kids = _children(depth)                          # (nc, 3, 3)
    pts = np.einsum("qk,ckj->cqj", bary, kids)       # (nc, q, 3)
    nc, nq = kids.shape[0], bary.shape[0]
    w = np.tile(weights / nc, nc)
    child = np.repeat(np.arange(nc), nq)
    centroids = kids.mean(axis=1)
    return pts.reshape(-1, 3), w, child, centroids


DEFAULT_QUADRATURE = ElementQuadrature()


# -- per-element helpers ---------------------------------------------------

def p1_gradients(coords):
    """Areas and constant hat-function gradients for triangles ``coords`` (n, 3, 2)."""
    x, y = coords[..., 0], coords[..., 1]
    det = (x[..., 1] - x[..., 0]) * (y[..., 2] - y[..., 0]) - (x[..., 2] - x[..., 0]) * (y[..., 1] - y[..., 0])
    g = np.empty(coords.shape[:-2] + (3, 2))
    g[..., 0, 0] = y[..., 1] - y[..., 2]
    g[..., 0, 1] = x[..., 2] - x[..., 1]
    g[..., 1, 0] = y[..., 2] - y[..., 0]
    g[..., 1, 1] = x[..., 0] - x[..., 2]
    g[..., 2, 0] = y[..., 0] - y[..., 1]
    g[..., 2, 1] = x[..., 1] - x[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        g /= det[..., None, None]
    return 0.5 * det, g


def p1_shape_values_and_gradients(tri, points=None):
    """Barycentric shape values at ``points`` and the three constant gradients.

    ``tri`` is a (3, 2) array of vertex coordinates. Returns
    ``(values, gradients)`` with values of shape (npoints, 3) (or ``None``
    when no points are given) and gradients of shape (3, 2).
    """
    tri = np.asarray(tri, dtype=float)
    edges = tri[[1, 2, 0]] - tri
    hmax = np.sqrt((edges**2).sum(axis=1)).max()
    area, grads = p1_gradients(tri)
    if not area > 1e-14 * hmax**2:
        raise DegenerateElement(f"triangle {tri.tolist()} is degenerate or clockwise")
    if points is None:
        return None, grads
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    vals = np.empty((pts.shape[0], 3))
    rel = pts - tri[0]
    vals[:, 1:] = rel @ grads[1:].T
    vals[:, 0] = 1.0 - vals[:, 1] - vals[:, 2]
    return vals, grads


def quadrature_points(tri, quad: ElementQuadrature, pf, margin: float | None = None):
    """Quadrature nodes and weights for one triangle as a list of ``((x, y), w)``.

    The triangle counts as a band element when some vertex lies within
    ``eps + margin`` of the boundary; ``margin`` defaults to the longest edge.
    """
    tri = np.asarray(tri, dtype=float)
    area, _ = p1_gradients(tri)
    if margin is None:
        margin = np.sqrt(((tri[[1, 2, 0]] - tri) ** 2).sum(axis=1)).max()
    d = pf.domain.distance(tri[:, 0], tri[:, 1])
    if np.min(np.abs(d)) < pf.eps + margin:
        bary, w, _, _ = quad.composite(quad.band_depth)
    else:
        bary, w = quad.bary, quad.weights
    pts = bary @ tri
    return [((float(p[0]), float(p[1])), float(area * wi)) for p, wi in zip(pts, w)]


# -- batched quadrature over a whole mesh -----------------------------------

@dataclass
class QuadBatch:
    """Quadrature data for a group of elements sharing one reference rule.

    Arrays ``x``, ``y``, ``w`` have shape (n_elements, n_points); ``bary`` is
    the (n_points, 3) reference rule; ``inside`` (sharp batches only) masks
    points whose subdivision child lies in the sharp domain.
    """

    elements: np.ndarray
    bary: np.ndarray
    x: np.ndarray
    y: np.ndarray
    w: np.ndarray
    area: np.ndarray
    grads: np.ndarray
    inside: np.ndarray | None = None


def _vertex_distance(mesh: TriMesh, domain: SharpDomain):
    return domain.distance(mesh.vertices[:, 0], mesh.vertices[:, 1])


def _emit(mesh, elems, bary, wref, chunk_points):
    step = max(1, chunk_points // bary.shape[0])
    for start in range(0, elems.size, step):
        el = elems[start:start + step]
        coords = mesh.vertices[mesh.triangles[el]]          # (n, 3, 2)
        area, grads = p1_gradients(coords)
        x = coords[:, :, 0] @ bary.T
        y = coords[:, :, 1] @ bary.T
        w = area[:, None] * wref[None, :]
        yield QuadBatch(el, bary, x, y, w, area, grads)


def classify_elements(mesh: TriMesh, domain: SharpDomain, eps: float, vertex_d=None,
                      chunk: int = 1 << 21):
    """Split element indices into (interior, band, exterior) for width ``eps``."""
    d = _vertex_distance(mesh, domain) if vertex_d is None else vertex_d
    margin = eps + mesh.diameter
    label = np.empty(mesh.n_triangles, dtype=np.int8)    # 0 interior, 1 band, 2 exterior
    for start in range(0, mesh.n_triangles, chunk):
        dt = d[mesh.triangles[start:start + chunk]]
        near = np.abs(dt).min(axis=1) < margin
        lab = np.where(dt.max(axis=1) < 0, 0, 2).astype(np.int8)
        lab[near] = 1
        label[start:start + chunk] = lab
    return tuple(np.flatnonzero(label == k) for k in range(3))


def diffuse_batches(mesh: TriMesh, quad: ElementQuadrature, pf, chunk_points: int = 1_000_000,
                    include_exterior: bool = False):
    """Quadrature over the support of the phase field, band elements subdivided.

    Elements lying entirely outside D_eps carry zero weight and are skipped
    unless ``include_exterior`` is set.
    """
    interior, band, exterior = classify_elements(mesh, pf.domain, pf.eps)
    yield from _emit(mesh, interior, quad.bary, quad.weights, chunk_points)
    bary, w, _, _ = quad.composite(quad.band_depth)
    yield from _emit(mesh, band, bary, w, chunk_points)
    if include_exterior:
        yield from _emit(mesh, exterior, quad.bary, quad.weights, chunk_points)


def sharp_batches(mesh: TriMesh, quad: ElementQuadrature, domain: SharpDomain,
                  depth: int | None = None, chunk_points: int = 1_000_000):
    """Quadrature of chi_D: interface elements subdivided, children kept by centroid sign."""
    depth = quad.interface_depth if depth is None else depth
    interior, interface, _ = classify_elements(mesh, domain, 0.0)
    yield from _emit(mesh, interior, quad.bary, quad.weights, chunk_points)
    bary, w, child, centroids = quad.composite(depth)
    for batch in _emit(mesh, interface, bary, w, chunk_points):
        coords = mesh.vertices[mesh.triangles[batch.elements]]
        cx = coords[:, :, 0] @ centroids.T
        cy = coords[:, :, 1] @ centroids.T
        kept = domain.distance(cx, cy) < 0                  # (n, n_children)
        batch.inside = kept[:, child]
        yield batch
