import numpy as np
import pytest

from refpcc.diffcore import (CascadedDiff, brute_diff, cascaded_diff, coarse_diff, fine_diff,
                             hybrid_diff, map_diff, reconstruct, two_way_diff)
from refpcc.errors import CorruptionError, MismatchError, ParameterError
from refpcc.geom import PointCloud, squared_distances
from refpcc.metrics import chamfer_sym
from refpcc.spatial import KdTree

from conftest import random_pair


def check_invariants(res, query, other, d):
    n = len(query)
    assert sorted(res.exclusive.tolist() + res.common_query.tolist()) == list(range(n))
    if len(res.common):
        dist2 = squared_distances(query[res.common[:, 0]], other[res.common[:, 1]])
        assert (dist2 <= d * d).all()


def test_brute_self_diff(rng):
    c = rng.random((500, 3))
    c[10] = c[3]
    res = brute_diff(c, c, 0.1)
    assert res.n_exclusive == 0
    for i, j in res.common:
        assert j == i or (j < i and np.array_equal(c[i], c[j]))


def test_brute_worked_example():
    a, b = [[0, 0, 0]], [[0, 0, 0.4]]
    assert brute_diff(a, b, 0.5).common.tolist() == [[0, 0]]
    assert brute_diff(a, b, 0.1).exclusive.tolist() == [0]


def test_boundary_distance_is_common():
    res = brute_diff([[0, 0, 0]], [[0, 0, 0.5]], 0.5)
    assert res.n_exclusive == 0
    assert hybrid_diff([[0, 0, 0]], [[0, 0, 0.5]], 0.5).n_exclusive == 0


def test_empty_other_makes_everything_exclusive():
    assert brute_diff([[0, 0, 0]], np.zeros((0, 3)), 0.3).exclusive.tolist() == [0]
    assert hybrid_diff([[0, 0, 0]], np.zeros((0, 3)), 0.3).exclusive.tolist() == [0]


def test_threshold_validation():
    with pytest.raises(ParameterError):
        brute_diff([[0, 0, 0]], [[0, 0, 0]], -0.1)
    with pytest.raises(ParameterError):
        hybrid_diff([[0, 0, 0]], [[0, 0, 0]], 0.0)
    # d = 0: bitwise equality semantics
    res = brute_diff([[0, 0, 0], [0, 0, 1e-12]], [[0, 0, 0]], 0.0)
    assert res.exclusive.tolist() == [1]


@pytest.mark.parametrize("d", [0.05, 0.1, 0.5])
def test_hybrid_equals_brute(rng, d):
    for _ in range(10):
        a, b = random_pair(rng, int(rng.integers(1, 3000)), int(rng.integers(1, 3000)), d)
        expected = brute_diff(a, b, d)
        got = hybrid_diff(a, b, d)
        assert np.array_equal(got.exclusive, expected.exclusive)
        check_invariants(got, a, b, d)
        assert 0 < expected.n_exclusive < len(a) or len(a) < 20


def test_fine_diff_matches_brute_matches(rng):
    a, b = random_pair(rng, 2000, 2000, 0.1)
    expected, got = brute_diff(a, b, 0.1), fine_diff(a, b, 0.1)
    assert np.array_equal(got.exclusive, expected.exclusive)
    assert np.array_equal(got.common, expected.common)


def test_coarse_overestimates(rng):
    a, b = random_pair(rng, 3000, 3000, 0.1)
    assert set(hybrid_diff(a, b, 0.1).exclusive) <= set(coarse_diff(a, b, 0.1).exclusive)


def test_hybrid_large_self_diff_and_disjoint(rng):
    c = rng.random((100_000, 3)) * 50
    assert hybrid_diff(c, c, 0.1).n_exclusive == 0
    a, b = rng.random((2000, 3)), rng.random((2000, 3)) + 100
    assert hybrid_diff(a, b, 0.1).n_exclusive == 2000
    assert hybrid_diff(b, a, 0.1).n_exclusive == 2000


def test_exclusive_count_monotone_in_threshold(rng):
    a, b = random_pair(rng, 3000, 3000, 0.1)
    counts = [hybrid_diff(a, b, d).n_exclusive for d in (0.05, 0.1, 0.2, 0.5)]
    assert counts == sorted(counts, reverse=True)


def test_two_way_diff():
    rng = np.random.default_rng(3)
    ref = rng.random((800, 3)) * 5
    same = two_way_diff(ref, ref, 0.1)
    assert same[0].n_exclusive == same[1].n_exclusive == 0
    src = np.vstack([ref, [[ref[:, 0].max() + 1.0, 0, 0]]])
    s, r = two_way_diff(src, ref, 0.1)
    assert s.exclusive.tolist() == [800] and r.n_exclusive == 0


def test_two_way_diff_matches_oracle_both_ways(rng):
    a, b = random_pair(rng, 1500, 1700, 0.1)
    s, r = two_way_diff(a, b, 0.1)
    assert np.array_equal(s.exclusive, brute_diff(a, b, 0.1).exclusive)
    assert np.array_equal(r.exclusive, brute_diff(b, a, 0.1).exclusive)


def test_map_diff_examples(rng):
    tree = KdTree(rng.random((1000, 3)))
    still, idx = map_diff(np.zeros((0, 3)), tree, 0.1)
    assert len(still) == 0 and len(idx) == 0
    pts = tree.points[[5, 17, 400]] + 0.01
    still, idx = map_diff(pts, tree, 0.1)
    assert len(still) == 0 and len(idx) == 3


def test_map_diff_matches_linear_scan(rng):
    map_pts = rng.random((50_000, 3)) * 20
    pts = rng.random((2000, 3)) * 20
    still, idx = map_diff(pts, KdTree(map_pts), 0.1)
    nearest = np.array([np.argmin(squared_distances(p, map_pts)) for p in pts])
    dist2 = squared_distances(pts, map_pts[nearest])
    hit = dist2 <= 0.01
    assert np.array_equal(still, pts[~hit])
    assert np.array_equal(idx, np.unique(nearest[hit]))


def test_map_diff_deduplicates_shared_matches():
    tree = KdTree([[0, 0, 0], [5, 5, 5]])
    still, idx = map_diff([[0, 0, 0.01], [0, 0.01, 0], [9, 9, 9]], tree, 0.1)
    assert idx.tolist() == [0] and still.tolist() == [[9, 9, 9]]


def test_reconstruct_tiny_case():
    ref = PointCloud([[0, 0, 0], [5, 5, 5]], id=1)
    source = PointCloud([[0, 0, 0.05], [9, 9, 9]], id=2)
    map_pts = np.array([[9, 9, 9.02]])
    # oracle path: brute diffs composed by hand
    s_vs_r = brute_diff(source, ref, 0.1)
    r_vs_s = brute_diff(ref, source, 0.1)
    m = brute_diff(source.points[s_vs_r.exclusive], map_pts, 0.1)
    assert r_vs_s.exclusive.tolist() == [1]
    assert m.common[:, 1].tolist() == [0] and m.n_exclusive == 0

    cd = cascaded_diff(source, ref, KdTree(map_pts), 0.1)
    assert cd.ref_exclusive_indices.tolist() == [1]
    assert cd.map_common_indices.tolist() == [0]
    assert cd.n_source_exclusive == 0
    out = reconstruct(ref, cd, map_pts)
    assert out.points.tolist() == [[0, 0, 0], [9, 9, 9.02]]
    assert out.id == 2


def test_reconstruct_self_compression(rng):
    c = PointCloud(rng.random((2000, 3)) * 10, id=4)
    cd = cascaded_diff(c, c, None, 0.1)
    assert cd.n_ref_exclusive == cd.n_source_exclusive == 0
    assert chamfer_sym(c, reconstruct(c, cd)) == 0.0


def test_reconstruct_errors():
    ref = PointCloud([[0, 0, 0]], id=1)
    bad = CascadedDiff(np.zeros((0, 3)), np.array([3]), np.zeros(0, int), 0.1, ref_id=1)
    with pytest.raises(CorruptionError):
        reconstruct(ref, bad)
    wrong = CascadedDiff(np.zeros((0, 3)), np.zeros(0, int), np.zeros(0, int), 0.1, ref_id=9)
    with pytest.raises(MismatchError):
        reconstruct(ref, wrong)


def test_degenerate_inputs(rng):
    empty = PointCloud(np.zeros((0, 3)))
    c = PointCloud(rng.random((100, 3)))
    tree = KdTree(c.points[:50])
    cd = cascaded_diff(c, empty, tree, 0.1)
    assert cd.n_ref_exclusive == 0
    assert cd.n_map_common + cd.n_source_exclusive >= 50
    cd = cascaded_diff(c, None, KdTree(np.zeros((0, 3))), 0.1)
    assert cd.n_source_exclusive == 100 and cd.n_map_common == 0


def per_point_bound(source, recon):
    """Max over both directions of nearest distances."""
    fwd = KdTree(recon).nearest_many(source)[1]
    bwd = KdTree(source).nearest_many(recon)[1]
    return np.sqrt(fwd.max()), np.sqrt(bwd.max())


@pytest.mark.parametrize("d", [0.1, 0.5])
def test_per_point_error_bound(rng, d):
    # every source point is within d of the reconstruction and vice versa
    for _ in range(8):
        s_pts, r_pts = random_pair(rng, 1500, 1500, d)
        map_pts = r_pts + rng.normal(0, d, r_pts.shape)
        src, ref = PointCloud(s_pts, id=1), PointCloud(r_pts, id=2)
        cd = cascaded_diff(src, ref, KdTree(map_pts), d)
        out = reconstruct(ref, cd, map_pts)
        fwd, bwd = per_point_bound(src.points, out.points)
        assert fwd <= d and bwd <= d
