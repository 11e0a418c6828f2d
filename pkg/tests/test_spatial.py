import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from refpcc.diffcore import brute_diff, brute_nearest
from refpcc.errors import ParameterError
from refpcc.spatial import KdTree, grid_build, grid_candidates, shared_origin

from conftest import random_pair


def test_grid_empty_and_single_voxel():
    assert grid_build(np.zeros((0, 3)), 0.1).n_occupied == 0
    grid = grid_build([[0.05, 0.05, 0.05], [0.07, 0.01, 0.02]], 0.1, (0, 0, 0))
    assert grid.n_occupied == 1
    assert grid.voxel_indices(0).tolist() == [0, 1]


def test_grid_indexes_every_point_once(rng):
    pts = rng.random((1000, 3)) * 10
    grid = grid_build(pts, 0.1, (0, 0, 0))
    lists = [grid.voxel_indices(v) for v in range(grid.n_occupied)]
    assert sum(len(l) for l in lists) == 1000
    assert sorted(np.concatenate(lists).tolist()) == list(range(1000))
    # each voxel's points floor to its key
    for v in rng.integers(0, grid.n_occupied, 50):
        keys = np.floor(pts[grid.voxel_indices(v)] / 0.1).astype(int)
        assert (keys == grid.keys[v]).all()


@pytest.mark.parametrize("edge", [0.0, -1.0, float("nan")])
def test_grid_rejects_bad_edge(edge):
    with pytest.raises(ParameterError):
        grid_build([[0, 0, 0]], edge)


def test_grid_candidates_examples(rng):
    pts = rng.random((300, 3))
    grid = grid_build(pts, 0.05)
    assert len(grid_candidates(grid, pts)) == 0
    grid_b = grid_build([[0, 0, 0]], 0.05)
    assert grid_candidates(grid_b, [[0.01, 0, 0], [5, 5, 5]]).tolist() == [1]


def test_grid_candidates_rejects_mismatched_frames():
    a = grid_build([[0, 0, 0]], 0.05)
    b = grid_build([[0, 0, 0]], 0.1)
    with pytest.raises(ParameterError):
        grid_candidates(a, b)
    assert grid_candidates(a, grid_build([[0.01, 0, 0], [3, 3, 3]], 0.05)).tolist() == [1]


@pytest.mark.parametrize("d", [0.05, 0.1, 0.5])
def test_coarse_pass_never_misses_an_exclusive_point(rng, d):
    for _ in range(5):
        a, b = random_pair(rng, 2000, 2000, d)
        grid = grid_build(b, d / math.sqrt(3), shared_origin(a, b))
        candidates = set(grid_candidates(grid, a).tolist())
        exclusive = set(brute_diff(a, b, d).exclusive.tolist())
        assert exclusive <= candidates


def test_kdtree_trivial_cases():
    assert KdTree(np.zeros((0, 3))).nearest((1, 2, 3)) is None
    assert KdTree([[0, 0, 0]]).nearest((9, 9, 9)) == (0, 243.0)
    tree = KdTree([[0, 0, 0], [1, 0, 0]])
    idx, d2 = tree.nearest((0.6, 0, 0))
    assert idx == 1 and d2 == pytest.approx(0.16)
    assert tree.nearest((0.5, 0, 0)) == (0, 0.25)


def test_kdtree_matches_linear_scan(rng):
    pts = rng.random((5000, 3)) * 20
    queries = rng.random((1000, 3)) * 24 - 2
    idx, d2 = KdTree(pts).nearest_many(queries)
    ref_idx, ref_d2 = brute_nearest(queries, pts)
    assert np.array_equal(idx, ref_idx)
    assert np.array_equal(d2, ref_d2)


def test_kdtree_breaks_ties_to_lowest_index(rng):
    # integer lattice with repeats: many exact ties and duplicate points
    pts = rng.integers(0, 4, (3000, 3)).astype(float)
    queries = rng.integers(0, 8, (800, 3)) / 2.0
    idx, d2 = KdTree(pts).nearest_many(queries)
    ref_idx, ref_d2 = brute_nearest(queries, pts)
    assert np.array_equal(idx, ref_idx) and np.array_equal(d2, ref_d2)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 400), st.sampled_from([1, 4, 16]))
def test_kdtree_exact_property(seed, n, leaf):
    rng = np.random.default_rng(seed)
    pts = np.round(rng.normal(size=(n, 3)) * 3, 1)
    q = np.round(rng.normal(size=(50, 3)) * 3, 1)
    idx, d2 = KdTree(pts, leaf_size=leaf).nearest_many(q)
    ref_idx, ref_d2 = brute_nearest(q, pts)
    assert np.array_equal(idx, ref_idx) and np.array_equal(d2, ref_d2)


def test_kdtree_build_is_deterministic(rng):
    pts = rng.random((2000, 3))
    a, b = KdTree(pts), KdTree(pts.copy())
    for name in ("_perm", "_split_dim", "_split_val", "_left", "_right"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert a.depth <= math.ceil(math.log2(2000 / 16)) + 2
