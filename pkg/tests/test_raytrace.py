import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dart.geometry import PatchSet, build_direction_grid, subdivide
from dart.raytrace import (
    EPS,
    intersect_first,
    make_rng,
    sample_directions_stratified,
    sample_patch_points,
    stratum_counts,
    trace,
    visible,
    visible_many,
)
from dart.scenes import box_mesh, two_room_mesh


@pytest.fixture(scope="module")
def unit_box():
    return subdivide(box_mesh((1.0, 1.0, 1.0)), 0.5)


def wall(x=1.0):
    """A single square wall in the plane x = const, normal -x."""
    tri = np.array([[[x, -2, -2], [x, -2, 2], [x, 2, 2]], [[x, -2, -2], [x, 2, 2], [x, 2, -2]]], float)
    return PatchSet.from_triangles(tri)


def test_ray_from_centre_hits_wall(unit_box):
    hit = intersect_first([0.5, 0.5, 0.5], [1.0, 0.0, 0.0], unit_box)
    assert hit is not None
    assert hit.distance == pytest.approx(0.5, abs=1e-12)
    np.testing.assert_allclose(unit_box.normals[hit.patch], [-1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(hit.point, [1.0, 0.5, 0.5], atol=1e-12)


def test_ray_leaving_closed_box_escapes(unit_box):
    assert intersect_first([2.0, 0.5, 0.5], [1.0, 0.0, 0.0], unit_box) is None


def test_hit_reports_incident_bin(unit_box):
    grid = build_direction_grid(4, 4)
    hit = intersect_first([0.5, 0.5, 0.5], [0.0, 0.0, -1.0], unit_box, grid)
    # the reversed ray is the floor normal: top elevation ring
    assert grid.split(hit.bin)[0] == 0


@pytest.mark.parametrize("order", [(0, 1), (1, 0)])
def test_shared_edge_hit_once_lowest_index(order):
    a = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0]], float)
    b = np.array([[0, 0, 0], [1, 1, 0], [0, 1, 0]], float)
    tris = np.stack([a, b])[list(order)]
    patches = PatchSet.from_triangles(tris)
    idx, dist = trace([[0.5, 0.5, 1.0]], [[0.0, 0.0, -1.0]], patches)
    assert idx.tolist() == [0]
    assert dist[0] == pytest.approx(1.0)


def test_visible_in_empty_box(unit_box):
    assert visible([0.2, 0.3, 0.4], [0.8, 0.7, 0.6], unit_box)


def test_full_height_wall_blocks():
    # a doorway of zero height leaves the partition closed
    rooms = subdivide(two_room_mesh(door=(1.5, 2.5, 0.0)), 1.0)
    assert not visible([1.0, 2.0, 1.0], [4.0, 2.0, 1.0], rooms)
    open_rooms = subdivide(two_room_mesh(), 1.0)
    assert visible([1.0, 2.0, 1.0], [4.0, 2.0, 1.0], open_rooms)


def test_endpoint_on_surface_is_excluded():
    assert visible([1.0, 0.3, 0.2], [0.0, 0.0, 0.0], wall())


def test_visible_rejects_equal_points(unit_box):
    with pytest.raises(ValueError):
        visible([0.5, 0.5, 0.5], [0.5, 0.5, 0.5], unit_box)


@given(st.integers(0, 2**31 - 1))
def test_visible_agrees_with_first_hit(seed):
    rng = np.random.default_rng(seed)
    scene = subdivide(two_room_mesh(), 1.5)
    a = rng.uniform([0.1, 0.1, 0.1], [4.9, 3.9, 2.4], (20, 3))
    b = rng.uniform([0.1, 0.1, 0.1], [4.9, 3.9, 2.4], (20, 3))
    seg = b - a
    length = np.linalg.norm(seg, axis=1)
    idx, dist = trace(a, seg / length[:, None], scene)
    expect = (idx < 0) | (dist >= length - EPS)
    assert np.array_equal(visible_many(a, b, scene), expect)


def test_closed_scene_catches_every_ray(unit_box):
    rng = make_rng(0, 99)
    d = rng.standard_normal((5000, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    idx, dist = trace(np.full((5000, 3), 0.37), d, unit_box)
    assert np.all(idx >= 0)
    assert np.all(dist > EPS)


def test_hit_point_on_patch_plane(unit_box):
    rng = make_rng(0, 98)
    d = rng.standard_normal((500, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.full((500, 3), 0.41)
    idx, dist = trace(o, d, unit_box)
    pts = o + dist[:, None] * d
    off = np.einsum("ij,ij->i", pts - unit_box.triangles[idx, 0], unit_box.normals[idx])
    assert np.max(np.abs(off)) < 1e-6


# --------------------------------------------------------------------------
# sampling


TRI = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.5, 1.5, 0.3]])


def barycentric(tri, p):
    e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
    A = np.stack([e1, e2], axis=1)
    st_, *_ = np.linalg.lstsq(A, (p - tri[0]).T, rcond=None)
    return st_.T


def test_single_point_is_centroid():
    p = sample_patch_points(TRI, 1, make_rng(0, 1))
    np.testing.assert_allclose(p[0], TRI.mean(0))


def test_hundred_points_inside():
    p = sample_patch_points(TRI, 100, make_rng(3, 1))
    assert p.shape == (100, 3)
    bc = barycentric(TRI, p)
    assert np.all(bc >= -1e-12) and np.all(bc.sum(1) <= 1 + 1e-12)


def test_point_mean_near_centroid():
    p = sample_patch_points(TRI, 10000, make_rng(4, 1))
    c = TRI.mean(0)
    assert np.linalg.norm(p.mean(0) - c) <= 0.02 * np.linalg.norm(c)


def test_points_deterministic():
    a = sample_patch_points(TRI, 50, make_rng(5, 1, 7))
    b = sample_patch_points(TRI, 50, make_rng(5, 1, 7))
    c = sample_patch_points(TRI, 50, make_rng(5, 1, 8))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_one_direction_per_bin():
    grid = build_direction_grid(4, 6)
    d, bins = sample_directions_stratified(grid, grid.n_dir, make_rng(0, 2))
    assert sorted(bins.tolist()) == list(range(grid.n_dir))
    assert np.array_equal(grid.classify_local(d), bins)


def test_default_counts_balanced():
    counts = stratum_counts(144, 4096, make_rng(0, 2))
    assert counts.sum() == 4096
    assert counts.max() - counts.min() <= 1


def test_mean_direction_vanishes():
    d, _ = sample_directions_stratified(build_direction_grid(12, 12), 100000, make_rng(1, 2))
    assert np.linalg.norm(d.mean(0)) < 0.01


@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 500), st.integers(0, 2**31 - 1))
def test_directions_round_trip(n_ele, n_azi, M, seed):
    grid = build_direction_grid(n_ele, n_azi)
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    frame = q.T
    d, bins = sample_directions_stratified(grid, M, make_rng(seed, 2), frame)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-9)
    assert np.array_equal(grid.classify_local(d @ frame.T), bins)
    counts = np.bincount(bins, minlength=grid.n_dir)
    assert counts.max() - counts.min() <= 1
