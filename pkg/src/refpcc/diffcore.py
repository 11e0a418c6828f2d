"""Diff engine: exclusive/common partitions between point clouds.

A point of the query cloud is *exclusive* when its nearest neighbour in
the other cloud lies strictly farther than the threshold ``d``; otherwise
it is *common*.  All comparisons are on squared distances against ``d*d``
with no epsilon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptionError, MismatchError, ParameterError
from .geom import IDENTITY_POSE, PointCloud, Pose, as_points, squared_distances
from .spatial import KdTree, grid_build, grid_candidates, shared_origin

# Rows of the brute-force distance matrix evaluated per block.
_BRUTE_BLOCK = 1 << 22


@dataclass(frozen=True, eq=False)
class DiffResult:
    """Partition of a query cloud relative to another cloud.

    ``exclusive`` holds sorted query indices; ``common`` is an ``(K, 2)``
    array of ``(query index, matched index)`` rows sorted by query index.
    """

    exclusive: np.ndarray
    common: np.ndarray

    @property
    def common_query(self) -> np.ndarray:
        return self.common[:, 0]

    @property
    def n_exclusive(self) -> int:
        return len(self.exclusive)


@dataclass(frozen=True, eq=False)
class CascadedDiff:
    """Compact representation of a source cloud before serialization."""

    source_exclusive_points: np.ndarray
    ref_exclusive_indices: np.ndarray
    map_common_indices: np.ndarray
    threshold: float
    ref_id: int | None = None
    source_id: int = 0
    source_pose: Pose = field(default=IDENTITY_POSE)

    @property
    def n_source_exclusive(self) -> int:
        return len(self.source_exclusive_points)

    @property
    def n_ref_exclusive(self) -> int:
        return len(self.ref_exclusive_indices)

    @property
    def n_map_common(self) -> int:
        return len(self.map_common_indices)


def _points(cloud) -> np.ndarray:
    return cloud.points if isinstance(cloud, PointCloud) else as_points(cloud)


def _check_threshold(d, *, allow_zero: bool) -> float:
    d = float(d)
    if not math.isfinite(d) or d < 0 or (d == 0 and not allow_zero):
        bound = "nonnegative" if allow_zero else "positive"
        raise ParameterError(f"distance threshold must be {bound} and finite, got {d!r}")
    return d


def _partition(n: int, match: np.ndarray, d2: np.ndarray, d: float) -> DiffResult:
    is_common = d2 <= d * d
    exclusive = np.flatnonzero(~is_common)
    q = np.flatnonzero(is_common)
    common = np.stack([q, match[q]], axis=1) if len(q) else np.zeros((0, 2), np.int64)
    return DiffResult(exclusive.astype(np.int64), common.astype(np.int64))


def brute_nearest(query: np.ndarray, other: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """O(n*m) nearest neighbour by direct evaluation; lowest index on ties."""
    n, m = len(query), len(other)
    if m == 0:
        return np.full(n, -1, np.int64), np.full(n, np.inf)
    idx = np.empty(n, np.int64)
    best = np.empty(n, np.float64)
    rows = max(1, _BRUTE_BLOCK // m)
    for s in range(0, n, rows):
        block = squared_distances(query[s:s + rows, None, :], other[None, :, :])
        idx[s:s + rows] = block.argmin(axis=1)
        best[s:s + rows] = block[np.arange(len(block)), idx[s:s + rows]]
    return idx, best


def brute_diff(query, other, d: float) -> DiffResult:
    """Reference diff by exhaustive search.  This is the testing oracle."""
    d = _check_threshold(d, allow_zero=True)
    q, o = _points(query), _points(other)
    match, d2 = brute_nearest(q, o)
    return _partition(len(q), match, d2, d)


def fine_diff(query, other, d: float, tree: KdTree | None = None) -> DiffResult:
    """Diff that resolves every query point with the KD-tree."""
    d = _check_threshold(d, allow_zero=True)
    q = _points(query)
    tree = tree if tree is not None else KdTree(other)
    match, d2 = tree.nearest_many(q)
    return _partition(len(q), match, d2, d)


def coarse_edge(d: float) -> float:
    """Voxel edge whose diagonal equals ``d``."""
    return d / math.sqrt(3.0)


def coarse_candidates(query, other, d: float):
    """Coarse pass: ``(candidate indices, same-voxel match or -1)`` per query point."""
    d = _check_threshold(d, allow_zero=False)
    q, o = _points(query), _points(other)
    origin = shared_origin(q, o)
    grid = grid_build(o, coarse_edge(d), origin)
    candidates, voxels = grid_candidates(grid, q, return_voxels=True)
    match = np.full(len(q), -1, np.int64)
    hit = voxels >= 0
    match[hit] = grid.first_index()[voxels[hit]]
    return candidates, match


def coarse_diff(query, other, d: float) -> DiffResult:
    """Region-only diff: every coarse candidate is declared exclusive.

    Overestimates the exclusive set; kept for comparison benchmarks.
    """
    q, o = _points(query), _points(other)
    candidates, match = coarse_candidates(q, o, d)
    d2 = np.zeros(len(q))
    d2[candidates] = np.inf
    return _partition(len(q), match, d2, d)


def hybrid_diff(query, other, d: float, tree: KdTree | None = None) -> DiffResult:
    """Coarse voxel screening followed by exact KD-tree refinement.

    Points sharing a voxel with an ``other`` point are common and matched
    to the lowest-index point of that voxel.  The remaining candidates are
    resolved against the KD-tree, so the exclusive set equals
    :func:`brute_diff` exactly.  Common matches are within ``d`` but are
    only guaranteed to be nearest for points resolved by the tree.
    """
    d = _check_threshold(d, allow_zero=False)
    q, o = _points(query), _points(other)
    n = len(q)
    if n == 0 or len(o) == 0:
        return _partition(n, np.full(n, -1, np.int64), np.full(n, np.inf), d)
    candidates, match = coarse_candidates(q, o, d)
    d2 = np.zeros(n)
    screened = np.flatnonzero(match >= 0)
    d2[screened] = squared_distances(q[screened], o[match[screened]])
    # Rounding in the voxel keys may place a pair just beyond d; refine those too.
    slipped = screened[d2[screened] > d * d]
    todo = np.union1d(candidates, slipped) if len(slipped) else candidates
    if len(todo):
        tree = tree if tree is not None else KdTree(o)
        match[todo], d2[todo] = tree.nearest_many(q[todo])
    return _partition(n, match, d2, d)


def two_way_diff(source, reference, d: float) -> tuple[DiffResult, DiffResult]:
    """``(source vs reference, reference vs source)``."""
    return hybrid_diff(source, reference, d), hybrid_diff(reference, source, d)


def map_diff(points, map_tree: KdTree, d: float) -> tuple[np.ndarray, np.ndarray]:
    """One-way diff of points against the map.

    Returns ``(still_exclusive points, sorted unique map indices)``.  Each
    point with a map neighbour within ``d`` contributes that neighbour's
    index; the others are kept verbatim in input order.
    """
    d = _check_threshold(d, allow_zero=False)
    pts = as_points(points)
    if len(pts) == 0 or len(map_tree) == 0:
        return pts, np.zeros(0, np.int64)
    match, d2 = map_tree.nearest_many(pts)
    hit = d2 <= d * d
    return as_points(pts[~hit]), np.unique(match[hit]).astype(np.int64)


def cascaded_diff(source: PointCloud, reference: PointCloud | None, map_tree: KdTree | None,
                  d: float) -> CascadedDiff:
    """Two-way diff against the reference, then one-way diff against the map."""
    d = _check_threshold(d, allow_zero=False)
    if reference is not None and len(reference) and len(source):
        src_vs_ref, ref_vs_src = two_way_diff(source, reference, d)
        exclusive_pts = source.points[src_vs_ref.exclusive]
        ref_exclusive = ref_vs_src.exclusive
    else:
        exclusive_pts = source.points
        ref_exclusive = np.arange(len(reference) if reference is not None else 0, dtype=np.int64)
    if map_tree is not None:
        exclusive_pts, map_common = map_diff(exclusive_pts, map_tree, d)
    else:
        map_common = np.zeros(0, np.int64)
    return CascadedDiff(
        source_exclusive_points=as_points(exclusive_pts),
        ref_exclusive_indices=np.asarray(ref_exclusive, np.int64),
        map_common_indices=np.asarray(map_common, np.int64),
        threshold=d,
        ref_id=None if reference is None else reference.id,
        source_id=source.id,
        source_pose=source.pose,
    )


def _check_indices(indices: np.ndarray, n: int, what: str) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    if len(idx) and (idx.min() < 0 or idx.max() >= n):
        raise CorruptionError(f"{what} index out of range for {n} points")
    if len(idx) > 1 and not (np.diff(idx) > 0).all():
        raise CorruptionError(f"{what} indices are not strictly increasing")
    return idx


def reconstruct(ref: PointCloud | None, cd: CascadedDiff, map_points=None) -> PointCloud:
    """Kept reference points, then map points, then stored exclusives."""
    parts = []
    if cd.ref_id is not None:
        if ref is None or ref.id != cd.ref_id:
            got = None if ref is None else ref.id
            raise MismatchError(f"container needs reference {cd.ref_id}, got {got}")
        drop = _check_indices(cd.ref_exclusive_indices, len(ref), "reference")
        keep = np.ones(len(ref), bool)
        keep[drop] = False
        parts.append(ref.points[keep])
    elif cd.n_ref_exclusive:
        raise CorruptionError("reference indices present without a reference cloud")
    if cd.n_map_common:
        if map_points is None:
            raise MismatchError("container needs a map")
        mp = _points(map_points)
        parts.append(mp[_check_indices(cd.map_common_indices, len(mp), "map")])
    parts.append(cd.source_exclusive_points)
    points = np.concatenate(parts) if parts else np.zeros((0, 3))
    return PointCloud(points, id=cd.source_id, pose=cd.source_pose)
