"""Structured polar triangulations of the cytosol annulus and the ER disk.

Both meshes are built from concentric vertex rings. The ring of radius
``r_inner`` is generated once and copied into both meshes, so interface
vertices coincide bit for bit and the pairing needs no geometric search.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class Marker(enum.IntEnum):
    OUTER = 1
    INTERFACE = 2

    @property
    def label(self) -> str:
        return "outer" if self is Marker.OUTER else "interface"

    @classmethod
    def from_label(cls, text: str) -> "Marker":
        try:
            return {"outer": cls.OUTER, "interface": cls.INTERFACE}[text]
        except KeyError:
            raise ValueError(f"unknown boundary marker {text!r}") from None


class Domain(str, enum.Enum):
    CYTOSOL = "cytosol"
    ER = "er"


class MeshFormatError(ValueError):
    """Malformed mesh file; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class MeshStructureError(ValueError):
    """Mesh content is syntactically fine but structurally inconsistent."""


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh2D:
    vertices: np.ndarray        # (N, 2) float64
    triangles: np.ndarray       # (M, 3) int64, counterclockwise
    boundary_edges: np.ndarray  # (K, 2) int64, oriented as in the owning triangle
    boundary_markers: np.ndarray  # (K,) int64 of Marker values
    domain: Domain

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(self.vertices, np.float64).reshape(-1, 2))
        object.__setattr__(self, "triangles", _frozen(self.triangles, np.int64).reshape(-1, 3))
        object.__setattr__(self, "boundary_edges", _frozen(self.boundary_edges, np.int64).reshape(-1, 2))
        object.__setattr__(self, "boundary_markers", _frozen(self.boundary_markers, np.int64).reshape(-1))
        object.__setattr__(self, "domain", Domain(self.domain))

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def edges_with(self, marker: Marker) -> np.ndarray:
        return self.boundary_edges[self.boundary_markers == int(marker)]

    def nodes_with(self, marker: Marker) -> np.ndarray:
        return np.unique(self.edges_with(marker))

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def area(self) -> float:
        return float(self.signed_areas().sum())

    def __eq__(self, other):
        if not isinstance(other, Mesh2D):
            return NotImplemented
        return (
            self.domain == other.domain
            and np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.triangles, other.triangles)
            and np.array_equal(self.boundary_edges, other.boundary_edges)
            and np.array_equal(self.boundary_markers, other.boundary_markers)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class InterfaceMap:
    """Pairs (cytosol node, ER node) ordered by arc position around the ring.

    ``cyto_nodes[k]`` and ``er_nodes[k]`` are the same physical point;
    ``edges`` holds interface edges as pairs of positions k into these
    arrays, oriented as in the owning cytosol triangle so that (dy, -dx)/L
    is the normal pointing out of the cytosol (toward the ER).
    """

    cyto_nodes: np.ndarray
    er_nodes: np.ndarray
    edges: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "cyto_nodes", _frozen(self.cyto_nodes, np.int64))
        object.__setattr__(self, "er_nodes", _frozen(self.er_nodes, np.int64))
        if self.edges is not None:
            object.__setattr__(self, "edges", _frozen(self.edges, np.int64).reshape(-1, 2))

    def __len__(self):
        return self.cyto_nodes.shape[0]

    @property
    def pairs(self) -> np.ndarray:
        return np.column_stack([self.cyto_nodes, self.er_nodes])


def ring_count(radius: float, h: float) -> int:
    """Number of equal arcs on a circle of ``radius`` for target size ``h``."""
    # guard against ceil(16.000000000000004) style roundoff
    return max(3, math.ceil(2.0 * math.pi * radius / h - 1e-9))


def radial_layers(thickness: float, h: float) -> int:
    """Number of radial layers (each at most ``h`` thick) across ``thickness``.

    The count is fixed at a coarse scale h * 2**m in (thickness/4, thickness/2]
    and scaled back by 2**m, so halving h exactly doubles the layer count.
    A plain ceil(thickness / h) does not, and the resulting non-nested
    refinement shows up as jitter in observed convergence rates.
    """
    m = 0
    while h * 2.0 ** (m + 1) <= thickness / 2:
        m += 1
    return 2**m * max(1, math.ceil(thickness / (h * 2.0**m) - 1e-9))


def _ring(radius: float, n: int) -> np.ndarray:
    theta = 2.0 * np.pi * np.arange(n) / n
    return np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])


def _stitch(ia: np.ndarray, ib: np.ndarray) -> list[tuple[int, int, int]]:
    """Triangulate the band between ring ``ia`` (inner) and ``ib`` (outer).

    Greedy angular merge: always advance the ring whose next vertex has the
    smaller angle. Produces len(ia) + len(ib) counterclockwise triangles.
    """
    na, nb = len(ia), len(ib)
    i = j = 0
    tris = []
    while i < na or j < nb:
        next_a = (i + 1) / na
        next_b = (j + 1) / nb
        if j >= nb or (i < na and next_a <= next_b):
            tris.append((ia[i % na], ib[j % nb], ia[(i + 1) % na]))
            i += 1
        else:
            tris.append((ia[i % na], ib[j % nb], ib[(j + 1) % nb]))
            j += 1
    return tris


def _boundary_edges(triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Directed edges used by exactly one triangle, and use count per edge."""
    directed = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    key = np.sort(directed, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    once = counts[inverse] == 1
    return directed[once], counts


def _build(vertices, triangles, domain, radius_of_marker) -> Mesh2D:
    triangles = np.asarray(triangles, dtype=np.int64)
    edges, _ = _boundary_edges(triangles)
    radii = np.hypot(vertices[:, 0], vertices[:, 1])
    markers = np.zeros(len(edges), dtype=np.int64)
    for marker, radius in radius_of_marker.items():
        on_circle = np.abs(radii - radius) < 1e-12 * max(1.0, radius)
        markers[on_circle[edges[:, 0]] & on_circle[edges[:, 1]]] = int(marker)
    if np.any(markers == 0):
        raise MeshStructureError("boundary edge not on a marked circle")
    order = np.lexsort((edges[:, 0], markers))
    return Mesh2D(vertices, triangles, edges[order], markers[order], domain)


def generate_geometry(r_inner: float, r_outer: float, h: float) -> tuple[Mesh2D, Mesh2D, InterfaceMap]:
    """Cytosol annulus mesh, ER disk mesh and their interface pairing.

    Rings are spaced uniformly in radius with layer thickness at most ``h``
    (see :func:`radial_layers`); a ring of radius r carries ceil(2 pi r / h)
    equally spaced vertices.
    """
    for name, v in (("r_inner", r_inner), ("r_outer", r_outer), ("h", h)):
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            raise ValueError(f"{name} must be a positive finite number, got {v!r}")
    if not r_inner < r_outer:
        raise ValueError(f"need r_inner < r_outer, got {r_inner} >= {r_outer}")
    if not h < r_inner:
        raise ValueError(f"mesh size h={h} must be smaller than r_inner={r_inner}")

    interface_ring = _ring(r_inner, ring_count(r_inner, h))
    n_if = len(interface_ring)

    # cytosol: ring 0 is the interface, ring L the plasma membrane
    layers = radial_layers(r_outer - r_inner, h)
    rings = [interface_ring]
    for k in range(1, layers + 1):
        r = r_outer if k == layers else r_inner + k * (r_outer - r_inner) / layers
        rings.append(_ring(r, ring_count(r, h)))
    offsets = np.cumsum([0] + [len(r) for r in rings])
    cyto_vertices = np.concatenate(rings)
    tris = []
    for k in range(layers):
        tris += _stitch(np.arange(offsets[k], offsets[k + 1]), np.arange(offsets[k + 1], offsets[k + 2]))
    cyto = _build(cyto_vertices, tris, Domain.CYTOSOL, {Marker.INTERFACE: r_inner, Marker.OUTER: r_outer})

    # ER disk: center vertex, rings 1..L with ring L the interface
    layers_e = radial_layers(r_inner, h)
    rings_e = [np.zeros((1, 2))]
    for k in range(1, layers_e + 1):
        if k == layers_e:
            rings_e.append(interface_ring)
        else:
            r = k * r_inner / layers_e
            rings_e.append(_ring(r, max(6, ring_count(r, h))))
    offsets_e = np.cumsum([0] + [len(r) for r in rings_e])
    er_vertices = np.concatenate(rings_e)
    n1 = len(rings_e[1])
    tris_e = [(0, 1 + i, 1 + (i + 1) % n1) for i in range(n1)]
    for k in range(1, layers_e):
        tris_e += _stitch(np.arange(offsets_e[k], offsets_e[k + 1]), np.arange(offsets_e[k + 1], offsets_e[k + 2]))
    er = _build(er_vertices, tris_e, Domain.ER, {Marker.INTERFACE: r_inner})

    cyto_if = np.arange(0, n_if)
    er_if = np.arange(offsets_e[-2], offsets_e[-1])
    pos = np.full(cyto.n_vertices, -1)
    pos[cyto_if] = np.arange(n_if)
    iface_edges = pos[cyto.edges_with(Marker.INTERFACE)]
    imap = InterfaceMap(cyto_if, er_if, iface_edges)
    return cyto, er, imap


def interface_map(cyto: Mesh2D, er: Mesh2D) -> InterfaceMap:
    """Recover the interface pairing of two meshes by exact coordinate match."""
    ci = cyto.nodes_with(Marker.INTERFACE)
    ei = er.nodes_with(Marker.INTERFACE)
    if len(ci) != len(ei):
        raise MeshStructureError(f"interface node counts differ: {len(ci)} vs {len(ei)}")
    lookup = {tuple(er.vertices[j]): j for j in ei}
    er_nodes = []
    for i in ci:
        key = tuple(cyto.vertices[i])
        if key not in lookup:
            raise MeshStructureError(f"cytosol interface node {i} at {key} has no ER partner")
        er_nodes.append(lookup[key])
    ang = np.arctan2(cyto.vertices[ci, 1], cyto.vertices[ci, 0]) % (2 * np.pi)
    order = np.argsort(ang, kind="stable")
    ci = ci[order]
    er_nodes = np.asarray(er_nodes)[order]
    pos = np.full(cyto.n_vertices, -1)
    pos[ci] = np.arange(len(ci))
    return InterfaceMap(ci, er_nodes, pos[cyto.edges_with(Marker.INTERFACE)])


@dataclass
class MeshReport:
    n_vertices: int
    n_triangles: int
    min_area: float
    max_area: float
    min_angle_deg: float
    max_edge: float
    orientation_violations: int
    dangling_boundary_edges: int
    unclosed_markers: list = field(default_factory=list)

    @property
    def violations(self) -> int:
        return self.orientation_violations + self.dangling_boundary_edges + len(self.unclosed_markers)

    @property
    def ok(self) -> bool:
        return self.violations == 0


def _closed_polygon(edges: np.ndarray) -> bool:
    if len(edges) < 3:
        return False
    nxt = {}
    for a, b in edges:
        if a in nxt:
            return False
        nxt[a] = b
    start = edges[0][0]
    cur, steps = start, 0
    while True:
        cur = nxt.get(cur)
        steps += 1
        if cur is None:
            return False
        if cur == start:
            return steps == len(edges)


def validate_mesh(mesh: Mesh2D) -> MeshReport:
    """Diagnostics for the Mesh2D invariants; never raises on bad meshes."""
    tri = mesh.triangles
    areas = mesh.signed_areas()
    p = mesh.vertices[tri]
    e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
    lengths = np.linalg.norm(e, axis=2)
    angles = []
    for k in range(3):
        a = -e[:, (k + 2) % 3]
        b = e[:, k]
        cosang = np.einsum("ij,ij->i", a, b) / np.maximum(lengths[:, (k + 2) % 3] * lengths[:, k], 1e-300)
        angles.append(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
    min_angle = float(np.min(angles)) if len(tri) else 0.0

    directed = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    key = {}
    for a, b in np.sort(directed, axis=1):
        key[(a, b)] = key.get((a, b), 0) + 1
    dangling = sum(1 for a, b in mesh.boundary_edges if key.get((min(a, b), max(a, b)), 0) != 1)

    unclosed = []
    for marker in Marker:
        edges = mesh.edges_with(marker)
        needed = marker is Marker.INTERFACE or mesh.domain is Domain.CYTOSOL
        if needed and not _closed_polygon([tuple(x) for x in edges]):
            unclosed.append(marker.label)

    return MeshReport(
        n_vertices=mesh.n_vertices,
        n_triangles=mesh.n_triangles,
        min_area=float(np.abs(areas).min()) if len(tri) else 0.0,
        max_area=float(np.abs(areas).max()) if len(tri) else 0.0,
        min_angle_deg=min_angle,
        max_edge=float(lengths.max()) if len(tri) else 0.0,
        orientation_violations=int(np.sum(areas <= 0)),
        dangling_boundary_edges=dangling,
        unclosed_markers=unclosed,
    )


def write_mesh(mesh: Mesh2D, path) -> None:
    lines = [f"calmesh v1 {mesh.domain.value}", f"vertices {mesh.n_vertices}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"triangles {mesh.n_triangles}")
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    lines.append(f"boundary {len(mesh.boundary_edges)}")
    lines += [
        f"{i} {j} {Marker(m).label}"
        for (i, j), m in zip(mesh.boundary_edges.tolist(), mesh.boundary_markers.tolist())
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh2D:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise MeshFormatError("empty file", 1)
    pos = 0

    def take(expected_fields: int):
        nonlocal pos
        if pos >= len(lines):
            raise MeshFormatError("unexpected end of file", pos + 1)
        fields = lines[pos].split()
        pos += 1
        if len(fields) != expected_fields:
            raise MeshFormatError(f"expected {expected_fields} fields, got {len(fields)}", pos)
        return fields

    head = take(3)
    if head[0] != "calmesh" or head[1] != "v1":
        raise MeshFormatError("missing 'calmesh v1' header", 1)
    try:
        domain = Domain(head[2])
    except ValueError:
        raise MeshFormatError(f"unknown domain tag {head[2]!r}", 1) from None

    def section(name: str) -> int:
        fields = take(2)
        if fields[0] != name:
            raise MeshFormatError(f"expected section '{name}', got {fields[0]!r}", pos)
        try:
            count = int(fields[1])
        except ValueError:
            raise MeshFormatError(f"bad count {fields[1]!r}", pos) from None
        if count < 0:
            raise MeshFormatError(f"negative count {count}", pos)
        return count

    def parse(fields, conv):
        try:
            return [conv(f) for f in fields]
        except ValueError:
            raise MeshFormatError(f"cannot parse {' '.join(fields)!r}", pos) from None

    nv = section("vertices")
    vertices = [parse(take(2), float) for _ in range(nv)]
    nt = section("triangles")
    triangles = [parse(take(3), int) for _ in range(nt)]
    nb = section("boundary")
    edges, markers = [], []
    for _ in range(nb):
        f = take(3)
        edges.append(parse(f[:2], int))
        try:
            markers.append(int(Marker.from_label(f[2])))
        except ValueError as exc:
            raise MeshFormatError(str(exc), pos) from None
    if any(l.strip() for l in lines[pos:]):
        raise MeshFormatError("trailing content after boundary section", pos + 1)

    tri = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    be = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    for name, arr in (("triangle", tri), ("boundary edge", be)):
        bad = np.nonzero((arr < 0) | (arr >= nv))[0]
        if bad.size:
            row = int(bad[0])
            raise MeshStructureError(f"{name} {row} references vertex {arr[row].tolist()} outside 0..{nv - 1}")
    return Mesh2D(np.asarray(vertices, dtype=np.float64).reshape(-1, 2), tri, be, np.asarray(markers), domain)
