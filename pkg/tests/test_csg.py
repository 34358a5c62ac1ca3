import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import unit_grid
from ldni import shapes
from ldni.csg import (BooleanConfig, BooleanOp, boolean_columns, boolean_solid, offset_solid,
                      remove_small_intervals)
from ldni.errors import GridMismatch, OffsetOverflow, ZeroRadius
from ldni.io import ldni_bytes
from ldni.mesh import Axis, GridSpec
from ldni.sampler import PixelColumn, sample_solid, sample_sphere, validate_parity

OPS = [BooleanOp.UNION, BooleanOp.INTERSECTION, BooleanOp.DIFFERENCE]


def column(intervals, tag):
    """Column whose normals encode (tag, sample index) for provenance checks."""
    col = PixelColumn.from_intervals(intervals)
    n = np.zeros((len(col), 3), np.float32)
    n[:, 0] = tag
    n[:, 1] = np.arange(len(col))
    n[:, 2] = np.tile([-1.0, 1.0], len(col) // 2)
    return PixelColumn(col.depths, n)


def oracle(a, b, op, eps):
    """Brute-force set algebra over the elementary segments between endpoints."""
    da = a.depths.astype(np.float64)
    db = b.depths.astype(np.float64)
    pts = np.unique(np.concatenate([da, db]))

    def inside(d, x):
        return np.count_nonzero(d < x) % 2 == 1 and not np.any(d == x)

    out = []
    for lo, hi in zip(pts[:-1], pts[1:]):
        m = 0.5 * (lo + hi)
        ia, ib = inside(da, m), inside(db, m)
        val = {BooleanOp.UNION: ia or ib, BooleanOp.INTERSECTION: ia and ib,
               BooleanOp.DIFFERENCE: ia and not ib}[op]
        if val:
            if out and out[-1][1] == lo:
                out[-1][1] = hi
            else:
                out.append([lo, hi])
    return [(lo, hi) for lo, hi in out if hi - lo >= eps]


def expected_normal(x, a, b, op):
    da, db = a.depths.astype(np.float64), b.depths.astype(np.float64)
    if np.any(da == x):
        return a.normals[np.flatnonzero(da == x)[0]]
    n = b.normals[np.flatnonzero(db == x)[0]]
    return -n if op is BooleanOp.DIFFERENCE else n


def check_against_oracle(a, b, op, eps):
    got = boolean_columns(a, b, op, BooleanConfig(eps))
    assert got.is_valid()
    assert got.intervals() == oracle(a, b, op, eps)
    for x, n in zip(got.depths.astype(np.float64), got.normals):
        assert np.array_equal(n, expected_normal(x, a, b, op))


def test_spec_example_three_ops():
    a = column([(1, 2), (5, 6)], 1)
    b = column([(1.5, 5.5)], 2)
    cfg = BooleanConfig()
    assert boolean_columns(a, b, BooleanOp.UNION, cfg).intervals() == [(1, 6)]
    assert boolean_columns(a, b, BooleanOp.INTERSECTION, cfg).intervals() == [(1.5, 2), (5, 5.5)]
    diff = boolean_columns(a, b, BooleanOp.DIFFERENCE, cfg)
    assert diff.intervals() == [(1, 1.5), (5.5, 6)]
    # 1.5 and 5.5 come from b with the normal inverted
    assert diff.normals[1].tolist() == (-b.normals[0]).tolist()
    assert diff.normals[2].tolist() == (-b.normals[1]).tolist()
    assert diff.normals[0].tolist() == a.normals[0].tolist()


def test_empty_operand():
    a = column([(1, 2), (5, 6)], 1)
    e = PixelColumn.empty()
    assert boolean_columns(a, e, "union").intervals() == a.intervals()
    assert boolean_columns(a, e, "intersect").intervals() == []
    assert boolean_columns(a, e, "difference").intervals() == a.intervals()


def test_tangential_contact():
    a = column([(1, 2)], 1)
    b = column([(2, 3)], 2)
    assert boolean_columns(a, b, "union").intervals() == [(1, 3)]
    assert boolean_columns(a, b, "intersection").intervals() == []
    assert boolean_columns(a, b, "difference").intervals() == [(1, 2)]


def test_remove_small_intervals_examples():
    assert remove_small_intervals(column([(1, 1.000001)], 1), 1e-5).intervals() == []
    assert remove_small_intervals(column([(1, 2)], 1), 1e-5).intervals() == [(1, 2)]
    col = PixelColumn(np.array([1, 1 + 5e-6, 3, 4], np.float32), np.zeros((4, 3), np.float32))
    assert remove_small_intervals(col, 1e-5).intervals() == [(3, 4)]


def test_boolean_config_validation():
    with pytest.raises(ValueError):
        BooleanConfig(-1.0)
    assert BooleanOp.parse("subtract") is BooleanOp.DIFFERENCE


values = st.integers(0, 40).map(lambda k: np.float32(k * 0.25)) | st.floats(
    0.0, 10.0, width=32)


@st.composite
def columns(draw, tag):
    pts = sorted(set(float(x) for x in draw(st.lists(values, max_size=10))))
    if len(pts) % 2:
        pts = pts[:-1]
    return column(list(zip(pts[0::2], pts[1::2])), tag)


@settings(max_examples=400, deadline=None)
@given(a=columns(1), b=columns(2), op=st.sampled_from(OPS), eps=st.sampled_from([0.0, 1e-5, 0.3]))
def test_matches_oracle(a, b, op, eps):
    check_against_oracle(a, b, op, eps)


@settings(max_examples=200, deadline=None)
@given(a=columns(1), b=columns(2), op=st.sampled_from([BooleanOp.UNION, BooleanOp.INTERSECTION]))
def test_commutative(a, b, op):
    ab = boolean_columns(a, b, op)
    ba = boolean_columns(b, a, op)
    assert np.array_equal(ab.depths, ba.depths)


@settings(max_examples=200, deadline=None)
@given(a=columns(1), b=columns(2))
def test_de_morgan(a, b):
    width = 12.0
    edges = [0.0] + b.depths.astype(float).tolist() + [width]
    comp = [(lo, hi) for lo, hi in zip(edges[0::2], edges[1::2]) if hi > lo]
    not_b = column(comp, 3)
    lhs = boolean_columns(a, b, BooleanOp.DIFFERENCE, BooleanConfig(0.0))
    rhs = boolean_columns(a, not_b, BooleanOp.INTERSECTION, BooleanConfig(0.0))
    assert lhs.intervals() == rhs.intervals()


@settings(max_examples=100, deadline=None)
@given(a=columns(1), op=st.sampled_from(OPS))
def test_self_boolean(a, op):
    got = boolean_columns(a, a, op)
    if op is BooleanOp.DIFFERENCE:
        assert got.intervals() == []
    else:
        assert got.intervals() == remove_small_intervals(a).intervals()


def test_random_pairs_bulk(rng):
    # dense random columns with many coincident endpoints
    for _ in range(2000):
        ka, kb = rng.integers(0, 5, 2) * 2
        a = column(np.sort(rng.choice(np.arange(1, 60) * 0.125, ka, replace=False)).reshape(-1, 2), 1)
        b = column(np.sort(rng.choice(np.arange(1, 60) * 0.125, kb, replace=False)).reshape(-1, 2), 2)
        for op in OPS:
            check_against_oracle(a, b, op, 1e-5)


# ---------------------------------------------------------------------------
# solids


@pytest.fixture(scope="module")
def two_solids():
    g = unit_grid(32)
    a = sample_solid(shapes.box((0.2, 0.2, 0.2), (0.6, 0.6, 0.6)), g)
    b = sample_sphere((0.55, 0.5, 0.5), 0.25, g)
    return a, b


def test_intersection_minus_a_is_empty(two_solids):
    a, b = two_solids
    ab = boolean_solid(a, b, BooleanOp.INTERSECTION)
    assert boolean_solid(ab, a, BooleanOp.DIFFERENCE).total_samples == 0


def test_union_idempotent(two_solids):
    a, _ = two_solids
    aa = boolean_solid(a, a, BooleanOp.UNION)
    assert ldni_bytes(aa) == ldni_bytes(a)


def test_disjoint_boxes():
    g = unit_grid(32)
    a = sample_solid(shapes.box((0.1, 0.1, 0.1), (0.4, 0.4, 0.4)), g)
    b = sample_solid(shapes.box((0.6, 0.6, 0.6), (0.9, 0.9, 0.9)), g)
    assert boolean_solid(a, b, "union").total_samples == a.total_samples + b.total_samples
    assert boolean_solid(a, b, "intersection").total_samples == 0


def test_grid_mismatch(two_solids):
    a, _ = two_solids
    other = sample_sphere((0.5, 0.5, 0.5), 0.2, GridSpec((0.0, 0.0, 0.0), 1.0, 16))
    with pytest.raises(GridMismatch, match="share one grid"):
        boolean_solid(a, other, "union")


def test_boolean_parity_and_workers(two_solids):
    a, b = two_solids
    for op in OPS:
        r1 = boolean_solid(a, b, op, workers=1)
        r4 = boolean_solid(a, b, op, workers=4)
        assert validate_parity(r1) == []
        assert ldni_bytes(r1) == ldni_bytes(r4)


def test_offset_errors(two_solids):
    a, _ = two_solids
    with pytest.raises(ZeroRadius):
        offset_solid(a, 0.0)
    with pytest.raises(OffsetOverflow):
        offset_solid(a, 0.5)


def test_erosion_past_half_extent_is_empty():
    g = unit_grid(32)
    box = sample_solid(shapes.box((0.3, 0.3, 0.3), (0.7, 0.7, 0.7)), g)
    assert offset_solid(box, -0.25).total_samples == 0


def test_offset_sphere_radius_small_grid():
    g = unit_grid(32)
    s = sample_sphere((0.5, 0.5, 0.5), 0.25, g)
    grown = offset_solid(s, 0.1)
    shrunk = offset_solid(s, -0.1)
    for solid, radius in ((grown, 0.35), (shrunk, 0.15)):
        assert validate_parity(solid) == []
        for img in solid.images:
            pts = img.sample_points()
            dev = np.abs(np.linalg.norm(pts - 0.5, axis=1) - radius)
            assert dev.max() < 2 * g.pixel_width


def inside_set_contains(big, small):
    for lo, hi in small.intervals():
        if not any(blo <= lo and hi <= bhi for blo, bhi in big.intervals()):
            return False
    return True


@pytest.mark.parametrize("sign", [1, -1])
def test_offset_monotone(sign):
    g = unit_grid(32)
    h = sample_solid(shapes.icosphere((0.5, 0.5, 0.5), 0.25, 3), g)
    r1, r2 = (0.03, 0.08) if sign > 0 else (-0.08, -0.03)
    o1, o2 = offset_solid(h, r1), offset_solid(h, r2)
    for a in Axis:
        for s in range(32 * 32):
            i, j = divmod(s, 32)
            assert inside_set_contains(o2[a].column(i, j), o1[a].column(i, j))


@pytest.mark.parametrize("r", [1 / 32, 0.5 / 32, -1 / 32])
def test_offset_small_radius_is_valid(r):
    g = unit_grid(32)
    h = sample_solid(shapes.rotated_cube(size=0.4), g)
    assert validate_parity(offset_solid(h, r)) == []


@pytest.mark.parametrize("r", [0.06, -0.06])
def test_offset_pruning_matches_plain_union(r):
    from ldni.csg import _merge_images, _offset_centers, sphere_union_image
    g = unit_grid(32)
    h = sample_solid(shapes.torus(), g)
    op = BooleanOp.UNION if r > 0 else BooleanOp.DIFFERENCE
    got = offset_solid(h, r)
    centers = _offset_centers(h)
    for ax in Axis:
        plain = _merge_images(h[ax], sphere_union_image(centers, abs(r), g, ax), op, 1e-5, None)
        assert np.array_equal(plain.offsets, got[ax].offsets)
        assert np.array_equal(plain.depths, got[ax].depths)
