"""Nearest-neighbour acceleration structures.

Two structures back the diff engine:

* :class:`OccupancyGrid`, a flat hash of occupied voxels used for the coarse
  pass.  Only voxel occupancy is consulted, so there is no hierarchy.
* :class:`KdTree`, an exact nearest-neighbour index.  Builds split the
  widest axis at the median (ties to the lower point index) and queries
  break distance ties towards the lowest point index, which keeps results
  reproducible across runs.

The tree kernels are compiled with numba and release the GIL, so a
shared tree can serve queries from many threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import ParameterError
from .geom import PointCloud, as_points

LEAF_SIZE = 16


def _points_of(cloud) -> np.ndarray:
    return cloud.points if isinstance(cloud, PointCloud) else as_points(cloud)


# --------------------------------------------------------------------------
# Occupancy grid


def voxel_keys(points: np.ndarray, origin, edge: float) -> np.ndarray:
    """``floor((p - origin) / edge)`` per axis as int64."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return np.floor((pts - np.asarray(origin, dtype=np.float64)) / edge).astype(np.int64)


def shared_origin(*clouds) -> np.ndarray:
    """Componentwise floor of the union bounding-box minimum."""
    mins = [_points_of(c).min(axis=0) for c in clouds if len(_points_of(c))]
    if not mins:
        return np.zeros(3)
    return np.floor(np.min(mins, axis=0))


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Occupied voxels of one cloud.

    ``keys[v]`` is the lattice coordinate of voxel ``v``; the point indices
    it holds are ``order[starts[v]:starts[v + 1]]`` in ascending order.
    """

    edge: float
    origin: np.ndarray
    keys: np.ndarray
    starts: np.ndarray
    order: np.ndarray

    @property
    def n_occupied(self) -> int:
        return len(self.keys)

    def voxel_indices(self, v: int) -> np.ndarray:
        return self.order[self.starts[v]:self.starts[v + 1]]

    def first_index(self) -> np.ndarray:
        """Lowest point index held by each voxel."""
        return self.order[self.starts[:-1]]

    def same_frame(self, other: "OccupancyGrid") -> bool:
        return self.edge == other.edge and bool(np.array_equal(self.origin, other.origin))


def grid_build(cloud, edge: float, origin=(0.0, 0.0, 0.0)) -> OccupancyGrid:
    if not edge > 0 or not np.isfinite(edge):
        raise ParameterError(f"voxel edge must be positive, got {edge!r}")
    pts = _points_of(cloud)
    origin = np.array(origin, dtype=np.float64).reshape(3)
    if len(pts) == 0:
        return OccupancyGrid(float(edge), origin, np.zeros((0, 3), np.int64),
                             np.zeros(1, np.int64), np.zeros(0, np.int64))
    keys = voxel_keys(pts, origin, edge)
    uniq, inverse = _unique_rows(keys)
    order = np.argsort(inverse, kind="stable")
    counts = np.bincount(inverse, minlength=len(uniq))
    starts = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return OccupancyGrid(float(edge), origin, uniq, starts, order.astype(np.int64))


def _packer(*key_sets):
    """Order-preserving map from int64 key rows to scalars, or None on overflow."""
    lo = np.min([k.min(axis=0) for k in key_sets], axis=0)
    hi = np.max([k.max(axis=0) for k in key_sets], axis=0)
    span = [int(h) - int(l) + 1 for l, h in zip(lo, hi)]
    if span[0] * span[1] * span[2] >= 2**62:
        return None
    ry, rz = np.int64(span[1]), np.int64(span[2])

    def pack(k):
        k = k - lo
        return (k[:, 0] * ry + k[:, 1]) * rz + k[:, 2]

    return pack


def _unique_rows(keys: np.ndarray):
    pack = _packer(keys)
    if pack is None:
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        return uniq, inverse.reshape(-1)
    _, first, inverse = np.unique(pack(keys), return_index=True, return_inverse=True)
    return keys[first], inverse.reshape(-1)


def voxel_lookup(grid: OccupancyGrid, keys: np.ndarray) -> np.ndarray:
    """Voxel number in ``grid`` for each key row, or -1 where unoccupied."""
    keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
    if len(keys) == 0:
        return np.zeros(0, np.int64)
    if grid.n_occupied == 0:
        return np.full(len(keys), -1, np.int64)
    pack = _packer(grid.keys, keys)
    if pack is None:
        m = grid.n_occupied
        _, inverse = np.unique(np.concatenate([grid.keys, keys]), axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        table = np.full(inverse.max() + 1, -1, np.int64)
        table[inverse[:m]] = np.arange(m)
        return table[inverse[m:]]
    # grid.keys is lexicographically sorted, so its packed values are too
    sorted_keys = pack(grid.keys)
    packed = pack(keys)
    pos = np.minimum(np.searchsorted(sorted_keys, packed), len(sorted_keys) - 1)
    return np.where(sorted_keys[pos] == packed, pos, -1).astype(np.int64)


def grid_candidates(grid_of_b: OccupancyGrid, cloud_a, *, return_voxels=False):
    """Indices of A-points whose voxel holds no B-point.

    ``cloud_a`` may be a cloud or a grid already built over A; in the
    latter case both grids must share origin and edge.  With
    ``return_voxels`` the B-voxel of every A-point (-1 if empty) is also
    returned.
    """
    if isinstance(cloud_a, OccupancyGrid):
        if not grid_of_b.same_frame(cloud_a):
            raise ParameterError("grids must share origin and edge")
        a_voxel_keys = cloud_a.keys
        per_voxel = voxel_lookup(grid_of_b, a_voxel_keys)
        n = len(cloud_a.order)
        voxels = np.empty(n, np.int64)
        counts = np.diff(cloud_a.starts)
        voxels[cloud_a.order] = np.repeat(per_voxel, counts)
    else:
        pts = _points_of(cloud_a)
        voxels = voxel_lookup(grid_of_b, voxel_keys(pts, grid_of_b.origin, grid_of_b.edge))
    candidates = np.flatnonzero(voxels < 0)
    if return_voxels:
        return candidates, voxels
    return candidates


# --------------------------------------------------------------------------
# KD-tree kernels


@numba.njit(cache=True, nogil=True)
def _build(points, leaf_size):
    n = points.shape[0]
    perm = np.arange(n)
    cap = 2 * (n // leaf_size + 1) * 2 + 1
    split_dim = np.full(cap, -1, np.int64)
    split_val = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    lo = np.zeros(cap, np.int64)
    hi = np.zeros(cap, np.int64)
    stack = np.zeros((cap, 3), np.int64)
    sp = 0
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    sp = 1
    n_nodes = 1
    while sp > 0:
        sp -= 1
        node = stack[sp, 0]
        start = stack[sp, 1]
        end = stack[sp, 2]
        lo[node] = start
        hi[node] = end
        if end - start <= leaf_size:
            continue
        best_axis = -1
        best_spread = 0.0
        for axis in range(3):
            mn = np.inf
            mx = -np.inf
            for k in range(start, end):
                v = points[perm[k], axis]
                if v < mn:
                    mn = v
                if v > mx:
                    mx = v
            if mx - mn > best_spread:
                best_spread = mx - mn
                best_axis = axis
        if best_axis < 0:
            continue
        sub = np.sort(perm[start:end])
        coords = np.empty(end - start, np.float64)
        for k in range(end - start):
            coords[k] = points[sub[k], best_axis]
        order = np.argsort(coords, kind="mergesort")
        for k in range(end - start):
            perm[start + k] = sub[order[k]]
        mid = (start + end) // 2
        split_dim[node] = best_axis
        split_val[node] = points[perm[mid], best_axis]
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack[sp, 0] = n_nodes
        stack[sp, 1] = start
        stack[sp, 2] = mid
        stack[sp + 1, 0] = n_nodes + 1
        stack[sp + 1, 1] = mid
        stack[sp + 1, 2] = end
        sp += 2
        n_nodes += 2
    return (perm, split_dim[:n_nodes].copy(), split_val[:n_nodes].copy(),
            left[:n_nodes].copy(), right[:n_nodes].copy(),
            lo[:n_nodes].copy(), hi[:n_nodes].copy())


@numba.njit(cache=True, nogil=True)
def _query(points, perm, split_dim, split_val, left, right, lo, hi, queries):
    m = queries.shape[0]
    out_idx = np.full(m, -1, np.int64)
    out_d2 = np.full(m, np.inf)
    stack_node = np.zeros(256, np.int64)
    stack_bound = np.zeros(256, np.float64)
    for qi in range(m):
        qx = queries[qi, 0]
        qy = queries[qi, 1]
        qz = queries[qi, 2]
        best = np.inf
        best_i = -1
        sp = 1
        stack_node[0] = 0
        stack_bound[0] = 0.0
        while sp > 0:
            sp -= 1
            node = stack_node[sp]
            if stack_bound[sp] > best:
                continue
            axis = split_dim[node]
            if axis < 0:
                for k in range(lo[node], hi[node]):
                    i = perm[k]
                    dx = qx - points[i, 0]
                    dy = qy - points[i, 1]
                    dz = qz - points[i, 2]
                    d2 = dx * dx + dy * dy + dz * dz
                    if d2 < best or (d2 == best and i < best_i):
                        best = d2
                        best_i = i
                continue
            if axis == 0:
                diff = qx - split_val[node]
            elif axis == 1:
                diff = qy - split_val[node]
            else:
                diff = qz - split_val[node]
            if diff <= 0.0:
                near = left[node]
                far = right[node]
            else:
                near = right[node]
                far = left[node]
            far_bound = diff * diff
            if stack_bound[sp] > far_bound:
                far_bound = stack_bound[sp]
            near_bound = stack_bound[sp]
            stack_node[sp] = far
            stack_bound[sp] = far_bound
            stack_node[sp + 1] = near
            stack_bound[sp + 1] = near_bound
            sp += 2
        out_idx[qi] = best_i
        out_d2[qi] = best
    return out_idx, out_d2


class KdTree:
    """Exact nearest-neighbour index over an immutable point sequence."""

    def __init__(self, points, leaf_size: int = LEAF_SIZE):
        pts = _points_of(points)
        self.points = pts
        self.leaf_size = int(leaf_size)
        if len(pts):
            (self._perm, self._split_dim, self._split_val,
             self._left, self._right, self._lo, self._hi) = _build(pts, self.leaf_size)
        else:
            self._perm = None

    def __len__(self) -> int:
        return len(self.points)

    @property
    def depth(self) -> int:
        if self._perm is None:
            return 0
        depth = np.zeros(len(self._split_dim), np.int64)
        for node in range(len(self._split_dim)):
            if self._left[node] >= 0:
                depth[self._left[node]] = depth[self._right[node]] = depth[node] + 1
        return int(depth.max()) + 1

    def nearest_many(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Nearest index and squared distance for each query row.

        An empty tree yields index -1 and distance ``inf``.
        """
        q = np.ascontiguousarray(np.asarray(queries, dtype=np.float64).reshape(-1, 3))
        if self._perm is None:
            return np.full(len(q), -1, np.int64), np.full(len(q), np.inf)
        return _query(self.points, self._perm, self._split_dim, self._split_val,
                      self._left, self._right, self._lo, self._hi, q)

    def nearest(self, q):
        """``(index, squared distance)`` of the nearest point, or None if empty."""
        idx, d2 = self.nearest_many(np.asarray(q, dtype=np.float64).reshape(1, 3))
        if idx[0] < 0:
            return None
        return int(idx[0]), float(d2[0])


def kdtree_build(cloud) -> KdTree:
    return KdTree(cloud)


def kdtree_nearest(tree: KdTree, q):
    return tree.nearest(q)
