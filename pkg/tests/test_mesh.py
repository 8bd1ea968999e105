import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtf_osm.mesh import (
    Mesh,
    MeshError,
    boundary_segments,
    extract_skeleton,
    generate_partitioned_disk,
    generate_partitioned_square,
    interface_edges,
    load_mesh,
    save_mesh,
)


def two_triangles(tags=(0, 1)):
    v = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    t = np.array([[0, 1, 2], [0, 2, 3]])
    return Mesh(v, t, np.array(tags))


def test_disk_area_and_counts(disk_mesh):
    assert disk_mesh.areas.sum() == pytest.approx(np.pi * 4, rel=5e-3)
    assert np.all(disk_mesh.areas > 0)
    assert disk_mesh.n_subdomains == 4


def test_disk_cross_points(disk_mesh, disk_skeleton):
    sk = disk_skeleton
    # centre plus the three points where the sector cuts meet the circle
    assert len(sk.cross_points) == 4
    inner = sk.interior_cross_points()
    assert len(inner) == 1
    centre = disk_mesh.vertices[sk.skeleton_vertices[inner[0]]]
    np.testing.assert_allclose(centre, [0, 0], atol=1e-14)
    assert sk.multiplicity[inner[0]] == 3


def test_disk_boundaries_are_closed_loops(disk_skeleton):
    for comps in disk_skeleton.boundary_components:
        assert len(comps) == 1 and comps[0][1]


def test_restriction_consistent_with_vertices(disk_skeleton):
    sk = disk_skeleton
    for j in range(sk.n_subdomains):
        np.testing.assert_array_equal(sk.skeleton_vertices[sk.restriction[j]], sk.boundary_vertices[j])
    assert sk.n_trace_dofs == int(sk.multiplicity.sum())


def test_interface_edges_have_subdomain_on_left(disk_mesh):
    for j in range(disk_mesh.n_subdomains):
        edges = interface_edges(disk_mesh, j)
        tris = disk_mesh.triangles_of(j)
        directed = {(a, b) for t in tris for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0]))}
        assert all((int(a), int(b)) in directed for a, b in edges)


def test_square_interface_is_open_polyline(square_mesh):
    sk = extract_skeleton(square_mesh)
    for j in range(2):
        assert sk.boundary_components[j] == [(17, False)]
        assert len(boundary_segments(sk, j)) == 16
    assert np.all(sk.multiplicity == 2)
    assert len(sk.cross_points) == 0
    np.testing.assert_allclose(square_mesh.vertices[sk.skeleton_vertices][:, 0], 0.5)


def test_diagonal_square():
    m = generate_partitioned_square(8, split="diagonal")
    sk = extract_skeleton(m)
    assert len(sk.skeleton_vertices) == 9


def test_outer_edges_are_single_owner(disk_mesh):
    r = np.linalg.norm(disk_mesh.vertices[disk_mesh.outer_boundary_edges], axis=2)
    np.testing.assert_allclose(r, 2.0, rtol=1e-12)


def test_h_ladder_scaling():
    counts = [len(generate_partitioned_disk(3, 1.0, 2.0, h).triangles) for h in (0.2, 0.1, 0.05)]
    ratios = np.array(counts[1:]) / np.array(counts[:-1])
    assert np.all((ratios > 3.0) & (ratios < 5.0))


def test_round_trip(tmp_path, disk_mesh):
    path = tmp_path / "m.txt"
    save_mesh(disk_mesh, path)
    back = load_mesh(path)
    np.testing.assert_array_equal(back.vertices, disk_mesh.vertices)
    np.testing.assert_array_equal(back.triangles, disk_mesh.triangles)
    np.testing.assert_array_equal(back.subdomain_of_triangle, disk_mesh.subdomain_of_triangle)


def test_missing_vertex_reports_triangle():
    v = np.array([[0, 0], [1, 0], [0, 1]], dtype=float)
    with pytest.raises(MeshError, match="triangle 0 references a missing vertex"):
        Mesh(v, np.array([[0, 1, 5]]), np.array([0]))


@pytest.mark.parametrize(
    "tris,tags,msg",
    [
        ([[0, 2, 1]], [0], "inverted"),
        ([[0, 1, 2]], [1], "subdomain 0 has no triangles"),
        ([[0, 1, 2]], [-1], "negative"),
    ],
)
def test_topology_errors(tris, tags, msg):
    v = np.array([[0, 0], [1, 0], [0, 1]], dtype=float)
    with pytest.raises(MeshError, match=msg):
        Mesh(v, np.array(tris), np.array(tags))


def test_unused_vertex_rejected():
    v = np.array([[0, 0], [1, 0], [0, 1], [5, 5]], dtype=float)
    with pytest.raises(MeshError, match="vertex 3"):
        Mesh(v, np.array([[0, 1, 2]]), np.array([0]))


def test_overlap_rejected():
    v = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float)
    with pytest.raises(MeshError, match="overlaps"):
        Mesh(v, np.array([[0, 1, 2], [0, 1, 3]]), np.array([0, 0]))


def test_pinched_subdomain_rejected():
    # two triangles of subdomain 1 touching only at a vertex
    v = np.array([[0, 0], [1, 0], [2, 0], [0, 1], [1, 1], [2, 1], [0, 2], [1, 2], [2, 2]], dtype=float)
    quads = [(0, 1, 4, 3), (1, 2, 5, 4), (3, 4, 7, 6), (4, 5, 8, 7)]
    tris, tags = [], []
    for q, tag in zip(quads, [1, 0, 0, 1]):
        a, b, c, d = q
        tris += [[a, b, c], [a, c, d]]
        tags += [tag, tag]
    m = Mesh(v, np.array(tris), np.array(tags))
    with pytest.raises(MeshError, match="non-manifold"):
        extract_skeleton(m)


@pytest.mark.parametrize(
    "text,line",
    [
        ("wrong header\n", 1),
        ("mtf-mesh 1\nV 1\n0 0 0\n", 3),
        ("mtf-mesh 1\nV x\n", 2),
        ("mtf-mesh 1\nV 3\n0 0\n1 0\n0 1\nT 1\n0 1\n", 7),
        ("mtf-mesh 1\nV 3\n0 0\n1 0\n0 1\nT 1\n0 1 2 0\nextra\n", 8),
    ],
)
def test_load_reports_line(tmp_path, text, line):
    path = tmp_path / "bad.txt"
    path.write_text(text)
    with pytest.raises(MeshError, match=f"line {line}"):
        load_mesh(path)


def test_generator_argument_errors():
    with pytest.raises(ValueError):
        generate_partitioned_square(3)
    with pytest.raises(ValueError):
        generate_partitioned_disk(3, 1.0, 0.5, 0.1)


def test_arrays_read_only(disk_mesh):
    with pytest.raises(ValueError):
        disk_mesh.vertices[0, 0] = 1.0


@settings(max_examples=12, deadline=None)
@given(n_sectors=st.integers(1, 6), h=st.floats(0.12, 0.35))
def test_disk_generator_properties(n_sectors, h):
    m = generate_partitioned_disk(n_sectors, 1.0, 1.8, h)
    sk = extract_skeleton(m)
    assert m.areas.sum() == pytest.approx(np.pi * 1.8**2, rel=0.05)
    assert m.n_subdomains == n_sectors + 1
    # every skeleton vertex is shared by at least two subdomain boundaries
    assert np.all(sk.multiplicity >= 2)
    expected_cross = 0 if n_sectors == 1 else n_sectors + (1 if n_sectors >= 3 else 0)
    assert len(sk.cross_points) == expected_cross
    # interface length: circle plus the sector cuts
    cut = 0.0 if n_sectors == 1 else n_sectors * 1.0
    total = 0.0
    for j in range(sk.n_subdomains):
        seg = boundary_segments(sk, j)
        pts = m.vertices[sk.boundary_vertices[j]]
        total += np.linalg.norm(pts[seg[:, 1]] - pts[seg[:, 0]], axis=1).sum()
    assert total / 2 == pytest.approx(2 * np.pi + cut, rel=0.05)


def test_two_triangle_skeleton():
    sk = extract_skeleton(two_triangles())
    assert sorted(sk.skeleton_vertices.tolist()) == [0, 2]
    assert sk.block_sizes == [2, 2]
