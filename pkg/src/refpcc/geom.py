"""Core geometric types: poses, point clouds and bounding boxes.

Points live in ``(N, 3)`` float64 arrays.  Index ``i`` of a cloud always
refers to the same point, so arrays are frozen after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

QUAT_TOLERANCE = 1e-6


def as_points(points) -> np.ndarray:
    """Coerce ``points`` to a read-only ``(N, 3)`` float64 array of finite values."""
    arr = np.array(points, dtype=np.float64, copy=True)
    if arr.size == 0:
        arr = arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ParameterError(f"expected an (N, 3) array of points, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        bad = int(np.flatnonzero(~np.isfinite(arr).all(axis=1))[0])
        raise ParameterError(f"point {bad} has a non-finite coordinate")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Pose:
    """Capture pose: position in meters, unit quaternion ``(qx, qy, qz, qw)``."""

    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    orientation: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 1.0)
    timestamp: int = 0

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        quat = tuple(float(v) for v in self.orientation)
        if len(pos) != 3 or not all(np.isfinite(pos)):
            raise ParameterError(f"pose position must be 3 finite values, got {self.position!r}")
        if len(quat) != 4 or not all(np.isfinite(quat)):
            raise ParameterError(f"pose orientation must be 4 finite values, got {self.orientation!r}")
        norm = float(np.sqrt(sum(q * q for q in quat)))
        if abs(norm - 1.0) > QUAT_TOLERANCE:
            raise ParameterError(f"quaternion norm {norm!r} is not within {QUAT_TOLERANCE} of 1")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", quat)
        object.__setattr__(self, "timestamp", int(self.timestamp))


IDENTITY_POSE = Pose()


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An ordered, immutable set of 3D points with an id and capture pose."""

    points: np.ndarray
    id: int = 0
    pose: Pose = field(default=IDENTITY_POSE)

    def __post_init__(self):
        if not 0 <= int(self.id) < 2**32:
            raise ParameterError(f"cloud id {self.id} does not fit in 32 bits")
        pts = as_points(self.points)
        if len(pts) >= 2**32:
            raise ParameterError("clouds with 2**32 or more points are not indexable")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "id", int(self.id))

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        return (
            self.id == other.id
            and self.pose == other.pose
            and self.points.shape == other.points.shape
            and bool(np.array_equal(self.points, other.points))
        )

    __hash__ = None

    def with_points(self, points) -> "PointCloud":
        return PointCloud(points, id=self.id, pose=self.pose)


@dataclass(frozen=True, eq=False)
class Aabb:
    """Axis-aligned box.  The empty box has ``min = +inf`` and ``max = -inf``."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.array(self.min, dtype=np.float64).reshape(3)
        hi = np.array(self.max, dtype=np.float64).reshape(3)
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @classmethod
    def empty(cls) -> "Aabb":
        return cls(np.full(3, np.inf), np.full(3, -np.inf))

    @property
    def is_empty(self) -> bool:
        return bool((self.min > self.max).any())

    @property
    def extent(self) -> np.ndarray:
        if self.is_empty:
            return np.zeros(3)
        return self.max - self.min

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))

    def contains(self, points) -> bool:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            return True
        if self.is_empty:
            return False
        return bool(((pts >= self.min) & (pts <= self.max)).all())

    def __eq__(self, other):
        if not isinstance(other, Aabb):
            return NotImplemented
        return bool(np.array_equal(self.min, other.min) and np.array_equal(self.max, other.max))

    __hash__ = None


def squared_distance(a, b) -> float:
    """Exact ``(ax-bx)^2 + (ay-by)^2 + (az-bz)^2`` evaluated left to right."""
    dx = float(a[0]) - float(b[0])
    dy = float(a[1]) - float(b[1])
    dz = float(a[2]) - float(b[2])
    return dx * dx + dy * dy + dz * dz


def squared_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise :func:`squared_distance` with the same evaluation order."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


def bounding_box(cloud) -> Aabb:
    pts = cloud.points if isinstance(cloud, PointCloud) else as_points(cloud)
    if len(pts) == 0:
        return Aabb.empty()
    return Aabb(pts.min(axis=0), pts.max(axis=0))
