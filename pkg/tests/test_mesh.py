import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calcwave.mesh import (Domain, Marker, Mesh2D, MeshFormatError, MeshStructureError, generate_geometry,
                           interface_map, radial_layers, read_mesh, ring_count, validate_mesh, write_mesh)


def euler_characteristic(mesh):
    """V - E + F counted independently from the triangle list."""
    t = mesh.triangles
    edges = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    n_edges = len(np.unique(edges, axis=0))
    n_vertices = len(np.unique(t))
    return n_vertices - n_edges + len(t)


def shoelace(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def ring_polygon(mesh, marker):
    nodes = mesh.nodes_with(marker)
    v = mesh.vertices[nodes]
    return v[np.argsort(np.arctan2(v[:, 1], v[:, 0]))]


def test_interface_ring_has_16_nodes_at_pi_over_8():
    cyto, er, imap = generate_geometry(1.0, 2.0, math.pi / 8)
    assert len(cyto.nodes_with(Marker.INTERFACE)) == 16
    assert len(er.nodes_with(Marker.INTERFACE)) == 16
    assert len(imap) == 16


def test_interface_pairs_are_bitwise_identical():
    cyto, er, imap = generate_geometry(1.0, 2.0, math.pi / 8)
    d = cyto.vertices[imap.cyto_nodes] - er.vertices[imap.er_nodes]
    assert np.max(np.abs(d)) == 0.0


def test_every_interface_node_paired_once(geom16):
    cyto, er, imap = geom16
    assert sorted(imap.cyto_nodes) == sorted(cyto.nodes_with(Marker.INTERFACE))
    assert sorted(imap.er_nodes) == sorted(er.nodes_with(Marker.INTERFACE))
    assert len(set(imap.cyto_nodes)) == len(imap)


def test_euler_characteristic(geom16):
    cyto, er, _ = geom16
    assert euler_characteristic(er) == 1     # disk
    assert euler_characteristic(cyto) == 0   # annulus: disk minus a hole


def test_triangle_count_closed_form(geom16):
    # each stitched band between rings of n_a and n_b vertices gives n_a + n_b
    # triangles; the ER centre fan gives n_1
    cyto, er, _ = geom16
    h = math.pi / 16
    L = radial_layers(1.0, h)
    counts = [ring_count(1.0 + k / L, h) for k in range(L + 1)]
    assert cyto.n_triangles == sum(a + b for a, b in zip(counts, counts[1:]))
    Le = radial_layers(1.0, h)
    ce = [max(6, ring_count(k / Le, h)) for k in range(1, Le)] + [ring_count(1.0, h)]
    assert er.n_triangles == ce[0] + sum(a + b for a, b in zip(ce, ce[1:]))


def test_generated_meshes_validate(geom16):
    for mesh in geom16[:2]:
        rep = validate_mesh(mesh)
        assert rep.violations == 0 and rep.ok
        assert rep.orientation_violations == 0
        assert rep.dangling_boundary_edges == 0


def test_min_angle_regression_floor():
    # observed 39.9 deg (cytosol) and 35.2 deg (ER) at pi/32
    cyto, er, _ = generate_geometry(1.0, 2.0, math.pi / 32)
    assert validate_mesh(cyto).min_angle_deg >= 39.0
    assert validate_mesh(er).min_angle_deg >= 35.0
    assert min(validate_mesh(m).min_angle_deg for m in (cyto, er)) >= 20.0


@pytest.mark.parametrize("k", [8, 16, 32, 48])
def test_longest_edge_bounded(k):
    h = math.pi / k
    for m in generate_geometry(1.0, 2.0, h)[:2]:
        assert validate_mesh(m).max_edge <= 2.0 * h


def test_boundary_nodes_exactly_on_circles(geom16):
    cyto, er, _ = geom16
    for mesh, marker, r in ((cyto, Marker.OUTER, 2.0), (cyto, Marker.INTERFACE, 1.0), (er, Marker.INTERFACE, 1.0)):
        v = mesh.vertices[mesh.nodes_with(marker)]
        assert np.max(np.abs(np.hypot(v[:, 0], v[:, 1]) - r)) <= 4 * np.finfo(float).eps * r


def test_refinement_doubles_interface_ring():
    counts = [len(generate_geometry(1.0, 2.0, math.pi / k)[2]) for k in (8, 16, 32, 64)]
    assert counts == [16, 32, 64, 128]


def test_radial_layers_double_under_halving():
    for base in (math.pi / 8, 0.3, 0.11):
        seq = [radial_layers(1.0, base / 2**k) for k in range(1, 5)]
        assert all(b == 2 * a for a, b in zip(seq, seq[1:]))
        assert all(1.0 / n <= base / 2**k for k, n in enumerate(seq, 1))


def test_polygon_areas_match_shoelace(geom16):
    cyto, er, _ = geom16
    outer = shoelace(ring_polygon(cyto, Marker.OUTER))
    inner = shoelace(ring_polygon(cyto, Marker.INTERFACE))
    assert cyto.area() == pytest.approx(outer - inner, rel=1e-12)
    assert er.area() == pytest.approx(inner, rel=1e-12)


def test_boundary_normals_point_outward(geom16):
    cyto, er, _ = geom16
    for mesh, marker, sign in ((cyto, Marker.OUTER, 1), (cyto, Marker.INTERFACE, -1), (er, Marker.INTERFACE, 1)):
        e = mesh.edges_with(marker)
        a, b = mesh.vertices[e[:, 0]], mesh.vertices[e[:, 1]]
        n = np.column_stack([b[:, 1] - a[:, 1], a[:, 0] - b[:, 0]])
        mid = 0.5 * (a + b)
        assert np.all(sign * np.einsum("ij,ij->i", n, mid) > 0)


def test_interface_map_recovered_by_coordinates(geom16):
    cyto, er, imap = geom16
    rec = interface_map(cyto, er)
    assert np.array_equal(rec.cyto_nodes, imap.cyto_nodes)
    assert np.array_equal(rec.er_nodes, imap.er_nodes)
    assert np.array_equal(rec.edges, imap.edges)


@pytest.mark.parametrize("args", [(0.0, 2.0, 0.1), (1.0, -2.0, 0.1), (1.0, 2.0, 0.0), (2.0, 1.0, 0.1),
                                  (1.0, 2.0, 1.0), (1.0, 2.0, 1.5), (1.0, 2.0, float("nan"))])
def test_generate_rejects_bad_input(args):
    with pytest.raises(ValueError):
        generate_geometry(*args)


def test_swapped_triangle_is_one_orientation_violation(geom16):
    cyto = geom16[0]
    tri = cyto.triangles.copy()
    tri[7] = tri[7][[1, 0, 2]]
    bad = Mesh2D(cyto.vertices, tri, cyto.boundary_edges, cyto.boundary_markers, cyto.domain)
    rep = validate_mesh(bad)
    assert rep.orientation_violations == 1
    assert not rep.ok


def test_round_trip(tmp_path, geom16):
    cyto8 = generate_geometry(1.0, 2.0, math.pi / 8)[0]
    for mesh in (cyto8, *geom16[:2]):
        p = tmp_path / f"{mesh.domain.value}.mesh"
        write_mesh(mesh, p)
        back = read_mesh(p)
        assert back == mesh
        assert np.array_equal(back.vertices, mesh.vertices)
        assert back.domain == mesh.domain


def test_read_rejects_out_of_range_index(tmp_path):
    p = tmp_path / "bad.mesh"
    p.write_text("calmesh v1 er\nvertices 3\n0 0\n1 0\n0 1\ntriangles 1\n0 1 1000000000\nboundary 0\n")
    with pytest.raises(MeshStructureError):
        read_mesh(p)


def test_read_empty_file(tmp_path):
    p = tmp_path / "empty.mesh"
    p.write_text("")
    with pytest.raises(MeshFormatError):
        read_mesh(p)


def test_read_reports_line_number(tmp_path):
    p = tmp_path / "bad.mesh"
    p.write_text("calmesh v1 er\nvertices 2\n0 0\n1 zero\n")
    with pytest.raises(MeshFormatError) as exc:
        read_mesh(p)
    assert exc.value.line == 4
    assert "line 4" in str(exc.value)


def test_mesh_arrays_are_read_only(geom16):
    with pytest.raises(ValueError):
        geom16[0].vertices[0, 0] = 5.0


def test_domain_tags(geom16):
    assert geom16[0].domain is Domain.CYTOSOL
    assert geom16[1].domain is Domain.ER
    assert len(geom16[1].edges_with(Marker.OUTER)) == 0


@settings(max_examples=15, deadline=None)
@given(r_inner=st.floats(0.5, 2.0), gap=st.floats(0.3, 2.0), frac=st.floats(0.08, 0.45))
def test_generated_meshes_always_valid(r_inner, gap, frac):
    h = frac * min(r_inner, gap)
    cyto, er, imap = generate_geometry(r_inner, r_inner + gap, h)
    for m in (cyto, er):
        rep = validate_mesh(m)
        assert rep.ok, rep
        assert rep.max_edge <= 2.0 * h
    assert np.array_equal(cyto.vertices[imap.cyto_nodes], er.vertices[imap.er_nodes])
    assert len(imap) == ring_count(r_inner, h)
