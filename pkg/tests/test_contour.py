import numpy as np
import pytest

from conftest import unit_grid
from ldni import shapes
from ldni.contour import (EdgeClass, QefData, QuadMesh, build_node_signs,
                          classify_and_regularize_edges, cluster_cell_nodes, contour,
                          contour_report, fix_nonmanifold, place_vertex, regularize_edge,
                          smooth_unconstrained, triangulate)
from ldni.csg import boolean_solid
from ldni.errors import DegenerateQuad
from ldni.mesh import Axis, Inside, Outside, audit_faces, audit_mesh
from ldni.metrics import radial_deviation
from ldni.sampler import (Ldni, LdniSolid, classify_grid_node, sample_solid, sample_sphere,
                          solid_from_columns)

UP = (0.0, 0.0, 1.0)
DOWN = (0.0, 0.0, -1.0)


# ---------------------------------------------------------------------------
# node signs


def test_node_signs_box(box_mesh):
    solid = sample_solid(box_mesh, unit_grid(4))
    signs = build_node_signs(solid)
    expected = np.zeros((4, 4, 4), bool)
    expected[1:3, 1:3, 1:3] = True
    assert np.array_equal(signs.inside, expected)


def test_node_signs_match_classify(torus_mesh):
    solid = sample_solid(torus_mesh, unit_grid(16))
    signs = build_node_signs(solid)
    for i, j, k in np.ndindex(16, 16, 16):
        if (i + j + k) % 7 == 0:
            assert signs[i, j, k] is classify_grid_node(solid, i, j, k)


def test_node_signs_empty_and_idempotent(sphere_mesh):
    empty = solid_from_columns(unit_grid(8), [{}, {}, {}])
    assert not build_node_signs(empty).inside.any()
    solid = sample_solid(sphere_mesh, unit_grid(16))
    same = boolean_solid(solid, solid, "union")
    assert np.array_equal(build_node_signs(solid).inside, build_node_signs(same).inside)


# ---------------------------------------------------------------------------
# edge classification


def test_rule2_keeps_compatible_sample_nearest_midpoint():
    rec = regularize_edge((Outside, Inside), [0.2, 0.45, 0.8], [UP, DOWN, UP], Axis.Z, 0.0, 1.0)
    assert rec.classification is EdgeClass.INTERSECT
    assert [s.depth for s in rec.regularized_samples] == [0.45]


def test_rule2_fallback_without_compatible_sample():
    rec = regularize_edge((Outside, Inside), [0.2, 0.6], [UP, UP], Axis.Z, 0.0, 1.0)
    assert rec.classification is EdgeClass.INTERSECT
    assert [s.depth for s in rec.regularized_samples] == [0.6]


def test_rule1_keeps_outermost_pair():
    rec = regularize_edge((Outside, Outside), [0.1, 0.3, 0.6, 0.9], [DOWN, UP, DOWN, UP],
                          Axis.Z, 0.0, 1.0)
    assert rec.classification is EdgeClass.COMPLEX
    assert [s.depth for s in rec.regularized_samples] == [0.1, 0.9]


def test_none_intersect_edge():
    rec = regularize_edge((Outside, Inside), [], [], Axis.Z, 0.0, 1.0)
    assert rec.classification is EdgeClass.NONE_INTERSECT
    assert rec.regularized_samples == ()


def test_single_crossing_with_equal_signs_is_empty():
    rec = regularize_edge((Outside, Outside), [0.5], [DOWN], Axis.Z, 0.0, 1.0)
    assert rec.classification is EdgeClass.EMPTY


def test_edge_table_invariants(torus_mesh):
    solid = sample_solid(torus_mesh, unit_grid(32))
    signs = build_node_signs(solid)
    edges = classify_and_regularize_edges(solid, signs)
    n_reg = (~np.isnan(edges.depth)).sum(axis=1)
    differ = edges.inside[:, 0] != edges.inside[:, 1]
    cls = edges.cls
    assert np.all(differ[cls == EdgeClass.INTERSECT]) and np.all(n_reg[cls == EdgeClass.INTERSECT] == 1)
    assert np.all(differ[cls == EdgeClass.NONE_INTERSECT])
    assert np.all(n_reg[cls == EdgeClass.NONE_INTERSECT] == 0)
    assert np.all(~differ[cls == EdgeClass.COMPLEX]) and np.all(n_reg[cls == EdgeClass.COMPLEX] == 2)
    recs = edges.records(solid)[:50]
    for r in recs:
        assert r.classification is EdgeClass(int(edges.cls[recs.index(r)]))
        if r.classification is EdgeClass.INTERSECT:
            assert len(r.raw_samples) >= 1


# ---------------------------------------------------------------------------
# clustering and vertex placement


def test_cluster_empty_cell():
    cl = cluster_cell_nodes([False] * 8, [EdgeClass.EMPTY] * 12)
    assert len(cl) == 1 and cl[0].corners == tuple(range(8)) and cl[0].needs_smoothing


def test_cluster_thin_plate_cell():
    cls = [EdgeClass.EMPTY] * 12
    samples = [[] for _ in range(12)]
    for e in range(8, 12):     # the four z edges
        cls[e] = EdgeClass.COMPLEX
        samples[e] = [((0.5, 0.5, 0.4), DOWN), ((0.5, 0.5, 0.6), UP)]
    cl = cluster_cell_nodes([False] * 8, cls, samples)
    assert len(cl) == 2
    assert sorted(len(c.hermite_points) for c in cl) == [4, 4]
    lower = next(c for c in cl if 0 in c.corners)
    assert lower.corners == (0, 1, 2, 3)
    assert all(p[2] == 0.4 for p, _ in lower.hermite_points)


def test_cluster_mc_like_cell():
    inside = [c >= 4 for c in range(8)]
    cls = [EdgeClass.EMPTY] * 12
    samples = [[] for _ in range(12)]
    for e in range(8, 12):
        cls[e] = EdgeClass.INTERSECT
        samples[e] = [((0.5, 0.5, 0.5), DOWN)]
    cl = cluster_cell_nodes(inside, cls, samples)
    assert len(cl) == 1 and cl[0].corners == (0, 1, 2, 3)
    assert len(cl[0].hermite_points) == 4


def test_place_vertex_corner():
    pts = [(0.3, 0.1, 0.2), (0.1, 0.7, 0.5), (0.9, 0.2, 0.6)]
    nrm = [(1, 0, 0), (0, 1, 0), (0, 0, 1)]
    x = place_vertex(pts, nrm, (0, 0, 0), (1, 1, 1))
    assert np.allclose(x, (0.3, 0.7, 0.6), atol=1e-12)


def test_place_vertex_coplanar():
    pts = np.array([(0.2, 0.3, 0.5), (0.6, 0.1, 0.5), (0.7, 0.8, 0.5), (0.3, 0.9, 0.5)])
    x = place_vertex(pts, [UP] * 4, (0, 0, 0), (1, 1, 1))
    assert np.allclose(x, pts.mean(axis=0), atol=1e-12)


def test_place_vertex_sharp_edge():
    d = 1 / 64
    n1 = np.array([np.cos(0.3), np.sin(0.3), 0.0])
    n2 = np.array([-np.sin(0.3), np.cos(0.3), 0.0])
    line_p = np.array([0.5, 0.5, 0.0]) * d
    pts, nrm = [], []
    for t, n in ((0.1, n1), (0.7, n1), (0.2, n2), (0.9, n2)):
        other = np.cross(n, UP)
        pts.append(line_p + (t - 0.5) * d * other + np.array([0, 0, t * d]))
        nrm.append(n)
    x = place_vertex(pts, nrm, (0, 0, 0), (d, d, d))
    rel = x - line_p
    assert abs(rel @ n1) <= 1e-9 * d and abs(rel @ n2) <= 1e-9 * d
    assert np.all(x >= 0) and np.all(x <= d)


def test_place_vertex_clamped_to_box():
    x = place_vertex([(2.0, 0.5, 0.5)], [(1, 0, 0)], (0, 0, 0), (1, 1, 1))
    assert np.all(x >= 0) and np.all(x <= 1)


def test_qef_data():
    q = QefData()
    q.add((1, 0, 0), (1, 0, 0))
    q.add((0, 2, 0), (0, 1, 0))
    assert q.error((1, 2, 5)) == pytest.approx(0.0)
    assert q.error((0, 0, 0)) == pytest.approx(5.0)
    assert np.allclose(q.centroid, (0.5, 1.0, 0.0))
    assert np.all(np.linalg.eigvalsh(q.A) >= -1e-12)


# ---------------------------------------------------------------------------
# quads and repair


def quad_cube(lo, size=1.0, start=0):
    """Closed outward-oriented quad cube; returns (vertices, quads)."""
    lo = np.asarray(lo, float)
    v = np.array([[x, y, z] for z in (0, 1) for y in (0, 1) for x in (0, 1)], float) * size + lo
    q = np.array([[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3],
                  [0, 4, 6, 2], [1, 3, 7, 5]]) + start
    return v, q


def merge(parts):
    """Concatenate quad cubes, welding exactly coincident vertices."""
    V = np.vstack([p[0] for p in parts])
    Q = np.vstack([p[1] for p in parts])
    uniq, inv = np.unique(V, axis=0, return_inverse=True)
    return uniq, inv.reshape(-1)[Q]


def test_quad_cube_is_outward():
    V, Q = quad_cube((0, 0, 0))
    tri = triangulate(QuadMesh(V, Q, np.ones(len(V), bool)))
    assert tri.signed_volume() == pytest.approx(1.0)
    assert audit_mesh(tri).is_watertight


def test_fix_singular_edge_pairs_convex_faces():
    # two cubes sharing only the edge x = y = 1
    V, Q = merge([quad_cube((0, 0, 0), start=0), quad_cube((1, 1, 0), start=8)])
    a = audit_faces(Q, len(V))
    assert a.nonmanifold_edge_count == 1
    fixed, n_sing, n_split = fix_nonmanifold(QuadMesh(V, Q, np.ones(len(V), bool)),
                                             return_counts=True)
    assert n_sing == 1 and n_split == 2
    a = audit_faces(fixed.quads, fixed.n_vertices)
    assert a.is_closed and a.is_two_manifold and a.is_consistently_oriented
    assert a.euler_characteristic == 4      # two separate spheres
    # each cube keeps its own faces together
    tri = triangulate(fixed)
    assert tri.signed_volume() == pytest.approx(2.0)


def test_fix_singular_vertex_duplicates_apex():
    V, Q = merge([quad_cube((0, 0, 0), start=0), quad_cube((1, 1, 1), start=8)])
    a = audit_faces(Q, len(V))
    assert a.nonmanifold_vertex_count == 1 and a.nonmanifold_edge_count == 0
    fixed = fix_nonmanifold(QuadMesh(V, Q, np.ones(len(V), bool)))
    assert fixed.n_vertices == len(V) + 1
    assert np.array_equal(fixed.vertices[-1], [1, 1, 1])
    a = audit_faces(fixed.quads, fixed.n_vertices)
    assert a.is_two_manifold and a.euler_characteristic == 4


def test_fix_nonmanifold_noop(sphere_mesh):
    rep = contour_report(sample_solid(sphere_mesh, unit_grid(32)))
    again = fix_nonmanifold(rep.quads)
    assert np.array_equal(again.quads, rep.quads.quads)
    assert np.array_equal(again.vertices, rep.quads.vertices)
    assert again.vertices.tobytes() == rep.quads.vertices.tobytes()


def grid_mesh(nx, ny, free):
    xs, ys = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    rng = np.random.default_rng(3)
    V = np.stack([xs.ravel(), ys.ravel(), rng.uniform(-0.3, 0.3, nx * ny)], axis=1)
    Q = [[i * ny + j, (i + 1) * ny + j, (i + 1) * ny + j + 1, i * ny + j + 1]
         for i in range(nx - 1) for j in range(ny - 1)]
    fixed = np.ones(len(V), bool)
    fixed[free] = False
    V[free, 2] = 5.0
    return QuadMesh(V, np.asarray(Q), fixed)


def test_smoothing_identity_without_free_vertices():
    m = grid_mesh(3, 3, [])
    out = smooth_unconstrained(m)
    assert np.array_equal(out.vertices, m.vertices)


def test_smoothing_single_vertex_ring_centroid():
    m = grid_mesh(3, 3, [4])
    out = smooth_unconstrained(m)
    ring = [1, 3, 5, 7]
    assert np.allclose(out.vertices[4], m.vertices[ring].mean(axis=0), atol=1e-6)
    assert np.array_equal(np.delete(out.vertices, 4, 0), np.delete(m.vertices, 4, 0))


def test_smoothing_two_adjacent_vertices():
    m = grid_mesh(4, 3, [4, 7])
    out, iters = smooth_unconstrained(m, pixel_width=1.0, return_iterations=True)
    V = m.vertices
    r4 = V[[1, 3, 5]].sum(axis=0)
    r7 = V[[6, 8, 10]].sum(axis=0)
    # x4 = (r4 + x7) / 4, x7 = (r7 + x4) / 4
    A = np.array([[4.0, -1.0], [-1.0, 4.0]])
    exact = np.linalg.solve(A, np.stack([r4, r7]))
    assert np.abs(out.vertices[[4, 7]] - exact).max() < 1e-5
    assert iters <= 50


def test_triangulate_planar_square():
    V = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float)
    tri = triangulate(QuadMesh(V, np.array([[0, 1, 2, 3]]), np.ones(4, bool)))
    assert tri.faces.tolist() == [[0, 1, 2], [0, 2, 3]]


def oriented(V, quad, want):
    n = np.cross(V[quad[2]] - V[quad[0]], V[quad[3]] - V[quad[1]])
    return quad if n @ want > 0 else quad[::-1]


def test_triangulate_follows_crease():
    # crease along the z axis between planes y = 0 (normal -y) and x = 0 (normal -x)
    V = [(0, 0, 0), (1, 0, 0.5), (0, 0, 1), (0, 1, 0.5),
         (0, 0, -1), (1, 0, -0.5), (2, 0, 0.5), (1, 0, 1.5),
         (0, 1, 1.5), (0, 2, 0.5), (0, 1, -0.5)]
    V = np.asarray(V, float)
    ny, nx = np.array([0, -1, 0.0]), np.array([-1, 0, 0.0])
    quads = [[0, 1, 2, 3],
             oriented(V, [1, 0, 4, 5], ny), oriented(V, [2, 1, 6, 7], ny),
             oriented(V, [3, 2, 8, 9], nx), oriented(V, [0, 3, 10, 4], nx)]
    quads = np.asarray([list(q) for q in quads])
    tri = triangulate(QuadMesh(V, quads, np.ones(len(V), bool)))
    first = {tuple(sorted(f)) for f in tri.faces[:2].tolist()}
    assert first == {(0, 1, 2), (0, 2, 3)}


def test_triangulate_degenerate_quad():
    V = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], float)
    m = QuadMesh(V, np.array([[0, 1, 2, 3]]), np.ones(4, bool))
    _, n = triangulate(m, return_counts=True)
    assert n == 2
    with pytest.raises(DegenerateQuad):
        triangulate(m, strict=True)


# ---------------------------------------------------------------------------
# full pipeline


def test_box_quads_closed_and_outward(box_mesh):
    rep = contour_report(sample_solid(box_mesh, unit_grid(8)))
    a = audit_faces(rep.quads.quads, rep.quads.n_vertices)
    assert a.is_closed and a.is_two_manifold and a.is_consistently_oriented
    assert rep.mesh.signed_volume() == pytest.approx(0.125, abs=1e-9)


def test_contoured_box_normals_axis_aligned(box_mesh):
    mesh = contour(sample_solid(box_mesh, unit_grid(16)))
    V, F = mesh.vertices, mesh.faces
    on_plane = (np.abs(V - 0.25) < 1e-9) | (np.abs(V - 0.75) < 1e-9)
    interior_face_vertex = on_plane.sum(axis=1) == 1
    flat = interior_face_vertex[F].all(axis=1)
    assert flat.sum() > 0
    n = mesh.face_normals[flat]
    assert np.abs(np.abs(n).max(axis=1) - 1.0).max() < 1e-6


def test_contour_sphere(sphere_mesh):
    g = unit_grid(64)
    mesh = contour(sample_solid(sphere_mesh, g))
    a = audit_mesh(mesh)
    assert a.is_watertight and a.euler_characteristic == 2
    assert radial_deviation(mesh, (0.5, 0.5, 0.5), 0.3) <= 2 * g.pixel_width


def test_contour_torus(torus_mesh):
    mesh = contour(sample_solid(torus_mesh, unit_grid(64)))
    a = audit_mesh(mesh)
    assert a.is_watertight and a.euler_characteristic == 0


def test_contour_thin_plate():
    g = unit_grid(64)
    d = g.pixel_width
    mesh = contour(sample_solid(shapes.plate(31.8 * d, 0.4 * d), g))
    a = audit_mesh(mesh)
    assert a.is_watertight and a.euler_characteristic == 2
    z = mesh.vertices[:, 2]
    inner = (np.abs(mesh.vertices[:, 0] - 0.5) < 0.1) & (np.abs(mesh.vertices[:, 1] - 0.5) < 0.1)
    sheets = np.unique(np.round(z[inner] / d, 6))
    assert len(sheets) == 2
    assert (sheets[1] - sheets[0]) == pytest.approx(0.4, abs=0.25)


def test_contour_volume_close(sphere_mesh):
    g = unit_grid(32)
    mesh = contour(sample_solid(sphere_mesh, g))
    assert abs(mesh.signed_volume() - 4 / 3 * np.pi * 0.3 ** 3) <= 5 * g.pixel_width * mesh.surface_area()
    assert mesh.signed_volume() > 0


def test_contour_empty_solid():
    mesh = contour(solid_from_columns(unit_grid(8), [{}, {}, {}]))
    assert mesh.n_faces == 0


def test_gridnode_baseline_equal_on_thick_box(box_mesh):
    solid = sample_solid(box_mesh, unit_grid(16))
    full = contour(solid)
    base = contour(solid, ignore_complex=True)
    assert np.array_equal(full.faces, base.faces)
    assert np.array_equal(full.vertices, base.vertices)


def test_analytic_sphere_contour_within_tolerance():
    g = unit_grid(32)
    mesh = contour(sample_sphere((0.5, 0.5, 0.5), 0.3, g))
    assert audit_mesh(mesh).is_watertight
    assert radial_deviation(mesh, (0.5, 0.5, 0.5), 0.3) <= 0.25 * g.pixel_width


def test_none_intersect_edges_emit_smoothed_quads(box_mesh):
    g = unit_grid(16)
    s = sample_solid(box_mesh, g)
    # drop the z image: z edges change sign with no samples on them
    solid = LdniSolid(g, (s.ldni_x, s.ldni_y, Ldni.empty(Axis.Z, g)))
    rep = contour_report(solid)
    assert rep.edge_diagnostics["none_intersect_edges"] > 0
    assert (~rep.quads.fixed).sum() > 0 and rep.smoothing_iterations > 0
    assert audit_mesh(rep.mesh).is_watertight
    lo, hi = rep.mesh.bounds()
    assert np.all(lo >= 0.25 - g.pixel_width) and np.all(hi <= 0.75 + g.pixel_width)
