"""P1 assembly: mass, stiffness, boundary mass and quadrature-based loads.

Volume integrals use the 3-point edge-midpoint rule (exact to degree 2),
edge integrals the 2-point Gauss rule (exact to degree 3). Nonlinear
integrands are evaluated at quadrature points from linearly interpolated
nodal arguments.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import SparseMatrixSym
from .mesh import Marker, Mesh2D


class AssemblyError(ValueError):
    pass


class LoadError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    """Points in barycentric (triangle) or [0, 1] parametric (edge) form.

    Weights sum to the reference measure: 1/2 for the triangle, 1 for the edge.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int


TRIANGLE_MIDPOINT = QuadratureRule(
    points=np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]),
    weights=np.full(3, 1.0 / 6.0),
    degree=2,
)

_g = 0.5 / np.sqrt(3.0)
EDGE_GAUSS2 = QuadratureRule(
    points=np.array([0.5 - _g, 0.5 + _g]),
    weights=np.array([0.5, 0.5]),
    degree=3,
)


def _geometry(mesh: Mesh2D):
    p = mesh.vertices[mesh.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    bad = np.nonzero(det <= 1e-14 * np.max(np.abs(det), initial=1.0))[0]
    if bad.size:
        k = int(bad[0])
        raise AssemblyError(f"degenerate or inverted triangle {k} {mesh.triangles[k].tolist()} (2*area={det[k]:.3e})")
    return p, 0.5 * det


def _scatter(mesh: Mesh2D, local: np.ndarray) -> SparseMatrixSym:
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    return SparseMatrixSym.from_coo(rows, cols, local.ravel(), mesh.n_vertices)


def local_mass(area) -> np.ndarray:
    base = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    return np.multiply.outer(np.asarray(area, dtype=float), base)


def barycentric_gradients(p: np.ndarray, area: np.ndarray) -> np.ndarray:
    """Gradients of the three hat functions per triangle, shape (M, 3, 2)."""
    x, y = p[..., 0], p[..., 1]
    g = np.empty(p.shape)
    inv = 0.5 / area
    g[:, 0, 0] = (y[:, 1] - y[:, 2]) * inv
    g[:, 1, 0] = (y[:, 2] - y[:, 0]) * inv
    g[:, 2, 0] = (y[:, 0] - y[:, 1]) * inv
    g[:, 0, 1] = (x[:, 2] - x[:, 1]) * inv
    g[:, 1, 1] = (x[:, 0] - x[:, 2]) * inv
    g[:, 2, 1] = (x[:, 1] - x[:, 0]) * inv
    return g


def local_stiffness(p: np.ndarray, area: np.ndarray) -> np.ndarray:
    g = barycentric_gradients(p, area)
    return area[:, None, None] * np.einsum("mik,mjk->mij", g, g)


def assemble_mass(mesh: Mesh2D) -> SparseMatrixSym:
    _, area = _geometry(mesh)
    return _scatter(mesh, local_mass(area))


def assemble_stiffness(mesh: Mesh2D) -> SparseMatrixSym:
    p, area = _geometry(mesh)
    return _scatter(mesh, local_stiffness(p, area))


def _marked_edges(mesh: Mesh2D, marker) -> np.ndarray:
    try:
        marker = Marker(marker)
    except ValueError:
        raise ValueError(f"unknown marker {marker!r}") from None
    edges = mesh.edges_with(marker)
    if edges.size == 0:
        raise ValueError(f"mesh ({mesh.domain.value}) has no edges marked {marker.label}")
    return edges


def assemble_boundary_mass(mesh: Mesh2D, marker) -> SparseMatrixSym:
    edges = _marked_edges(mesh, marker)
    d = mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]]
    length = np.hypot(d[:, 0], d[:, 1])
    local = np.multiply.outer(length / 6.0, np.array([[2.0, 1.0], [1.0, 2.0]]))
    rows = np.repeat(edges, 2, axis=1).ravel()
    cols = np.tile(edges, (1, 2)).ravel()
    return SparseMatrixSym.from_coo(rows, cols, local.ravel(), mesh.n_vertices)


@dataclass(frozen=True)
class EdgeQuadrature:
    """Precomputed 2-point Gauss data for a fixed set of boundary edges.

    ``nodes`` are the (a, b) endpoint indices in whatever numbering the
    caller passes; ``x``, ``y`` are quadrature-point coordinates (E, 2);
    ``nx``, ``ny`` the unit normal (dy, -dx)/L per edge, broadcast to (E, 2).
    """

    nodes: np.ndarray
    length: np.ndarray
    x: np.ndarray
    y: np.ndarray
    nx: np.ndarray
    ny: np.ndarray
    shape_a: np.ndarray  # value of the hat at endpoint a, per quadrature point
    shape_b: np.ndarray
    wlen: np.ndarray     # weight * length per (edge, point)
    n_nodes: int

    @classmethod
    def build(cls, coords: np.ndarray, nodes: np.ndarray, n_nodes: int, rule: QuadratureRule = EDGE_GAUSS2):
        nodes = np.asarray(nodes, dtype=np.int64).reshape(-1, 2)
        pa = coords[nodes[:, 0]]
        pb = coords[nodes[:, 1]]
        d = pb - pa
        length = np.hypot(d[:, 0], d[:, 1])
        s = rule.points[None, :]
        x = pa[:, 0:1] * (1 - s) + pb[:, 0:1] * s
        y = pa[:, 1:2] * (1 - s) + pb[:, 1:2] * s
        nx = np.repeat((d[:, 1] / length)[:, None], s.size, axis=1)
        ny = np.repeat((-d[:, 0] / length)[:, None], s.size, axis=1)
        sa = np.broadcast_to(1 - s, x.shape).copy()
        sb = np.broadcast_to(s, x.shape).copy()
        wlen = np.outer(length, rule.weights)
        return cls(nodes, length, x, y, nx, ny, sa, sb, wlen, int(n_nodes))

    def interpolate(self, values: np.ndarray) -> np.ndarray:
        """Nodal values -> values at quadrature points, shape (E, q)."""
        return values[self.nodes[:, 0], None] * self.shape_a + values[self.nodes[:, 1], None] * self.shape_b

    def load(self, g: np.ndarray) -> np.ndarray:
        """Integrate g * phi_i for g given at quadrature points."""
        wg = self.wlen * g
        out = np.bincount(self.nodes[:, 0], (wg * self.shape_a).sum(axis=1), minlength=self.n_nodes)
        out += np.bincount(self.nodes[:, 1], (wg * self.shape_b).sum(axis=1), minlength=self.n_nodes)
        return out


@dataclass(frozen=True)
class TriangleQuadrature:
    """Precomputed midpoint-rule data: point coordinates (M, 3) and weights."""

    triangles: np.ndarray
    area: np.ndarray
    x: np.ndarray
    y: np.ndarray
    n_nodes: int

    @classmethod
    def build(cls, mesh: Mesh2D):
        _, area = _geometry(mesh)
        lam = TRIANGLE_MIDPOINT.points
        p = mesh.vertices[mesh.triangles]
        x = p[:, :, 0] @ lam.T
        y = p[:, :, 1] @ lam.T
        return cls(mesh.triangles, area, x, y, mesh.n_vertices)

    def interpolate(self, values: np.ndarray) -> np.ndarray:
        v = values[self.triangles]
        # midpoints of edges (0,1), (1,2), (2,0)
        return 0.5 * np.stack([v[:, 0] + v[:, 1], v[:, 1] + v[:, 2], v[:, 2] + v[:, 0]], axis=1)

    def load(self, f: np.ndarray) -> np.ndarray:
        """Integrate f * phi_i for f given at the three midpoints."""
        w = (self.area / 3.0)[:, None] * f
        # hat i is 1/2 at the two midpoints on edges touching vertex i
        c0 = 0.5 * (w[:, 0] + w[:, 2])
        c1 = 0.5 * (w[:, 0] + w[:, 1])
        c2 = 0.5 * (w[:, 1] + w[:, 2])
        t = self.triangles
        return (
            np.bincount(t[:, 0], c0, minlength=self.n_nodes)
            + np.bincount(t[:, 1], c1, minlength=self.n_nodes)
            + np.bincount(t[:, 2], c2, minlength=self.n_nodes)
        )


def assemble_boundary_load(mesh: Mesh2D, marker, g, t: float = 0.0) -> np.ndarray:
    """Load vector of integral(g * phi_i) over edges marked ``marker``.

    ``g(x, y, nx, ny)`` is called with arrays of quadrature-point data.
    """
    edges = _marked_edges(mesh, marker)
    q = EdgeQuadrature.build(mesh.vertices, edges, mesh.n_vertices)
    vals = np.asarray(g(q.x, q.y, q.nx, q.ny), dtype=float) * np.ones_like(q.x)
    bad = ~np.isfinite(vals)
    if bad.any():
        e = int(np.nonzero(bad.any(axis=1))[0][0])
        raise LoadError(f"non-finite boundary flux on edge {edges[e].tolist()} at t={t}")
    return q.load(vals)


def assemble_volume_load(mesh: Mesh2D, f, t: float = 0.0) -> np.ndarray:
    """Load vector of integral(f * phi_i); ``f(x, y)`` takes midpoint arrays."""
    q = TriangleQuadrature.build(mesh)
    vals = np.asarray(f(q.x, q.y), dtype=float) * np.ones_like(q.x)
    bad = ~np.isfinite(vals)
    if bad.any():
        k = int(np.nonzero(bad.any(axis=1))[0][0])
        raise LoadError(f"non-finite volume source in triangle {k} at t={t}")
    return q.load(vals)


@dataclass(frozen=True)
class AssembledOperators:
    mesh: Mesh2D
    mass: SparseMatrixSym
    stiffness: SparseMatrixSym
    boundary_mass: dict
    node_sets: dict


def assemble_operators(mesh: Mesh2D) -> AssembledOperators:
    bm, nodes = {}, {}
    for marker in Marker:
        if mesh.edges_with(marker).size:
            bm[marker] = assemble_boundary_mass(mesh, marker)
            nodes[marker] = mesh.nodes_with(marker)
    return AssembledOperators(mesh, assemble_mass(mesh), assemble_stiffness(mesh), bm, nodes)
