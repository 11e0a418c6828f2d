"""Reference datasets and the 3D map shared by compressor and decompressor."""

from __future__ import annotations

import threading
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .errors import NotFoundError, ParameterError
from .geom import IDENTITY_POSE, PointCloud, Pose
from .spatial import KdTree

DEFAULT_MAX_ASSOCIATION_DISTANCE = 5.0


@dataclass(frozen=True)
class _Entry:
    id: int
    pose: Pose
    source: object  # PointCloud or Path


class ReferenceDataset:
    """Pose-annotated reference clouds, loaded lazily by id."""

    def __init__(self, entries=()):
        self._entries: dict[int, _Entry] = {}
        for cloud_id, pose, source in entries:
            cloud_id = int(cloud_id)
            if cloud_id in self._entries:
                raise ParameterError(f"duplicate reference cloud id {cloud_id}")
            self._entries[cloud_id] = _Entry(cloud_id, pose, source)
        self._ids = np.array(sorted(self._entries), dtype=np.int64)
        self._positions = np.array([self._entries[i].pose.position for i in self._ids],
                                   dtype=np.float64).reshape(-1, 3)
        self._cache: dict[int, PointCloud] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_clouds(cls, clouds) -> "ReferenceDataset":
        return cls((c.id, c.pose, c) for c in clouds)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, cloud_id) -> bool:
        return int(cloud_id) in self._entries

    @property
    def ids(self) -> list[int]:
        return self._ids.tolist()

    def pose(self, cloud_id: int) -> Pose:
        return self._entry(cloud_id).pose

    def _entry(self, cloud_id: int) -> _Entry:
        try:
            return self._entries[int(cloud_id)]
        except KeyError:
            raise NotFoundError(f"reference cloud {cloud_id} not in dataset") from None

    def get(self, cloud_id: int) -> PointCloud:
        entry = self._entry(cloud_id)
        if isinstance(entry.source, PointCloud):
            cloud = entry.source
            if cloud.id != entry.id or cloud.pose != entry.pose:
                cloud = PointCloud(cloud.points, id=entry.id, pose=entry.pose)
            return cloud
        cached = self._cache.get(entry.id)
        if cached is not None:
            return cached
        # Concurrent first loads of the same id may both read; either result is kept.
        cloud = io.read_cloud(entry.source, cloud_id=entry.id, pose=entry.pose)
        with self._lock:
            return self._cache.setdefault(entry.id, cloud)

    def associate(self, source_pose: Pose, max_dist: float = DEFAULT_MAX_ASSOCIATION_DISTANCE):
        return associate(source_pose, self, max_dist)

    def distances(self, position) -> np.ndarray:
        """Distance from ``position`` to every entry, in ascending id order."""
        diff = self._positions - np.asarray(position, dtype=np.float64)
        return np.sqrt(diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2])


def associate(source_pose: Pose, dataset: ReferenceDataset,
              max_dist: float = DEFAULT_MAX_ASSOCIATION_DISTANCE) -> int | None:
    """Id of the reference captured closest to ``source_pose``, or None."""
    if max_dist < 0:
        raise ParameterError(f"max_dist must be nonnegative, got {max_dist!r}")
    if len(dataset) == 0:
        return None
    dist = dataset.distances(source_pose.position)
    best = int(np.argmin(dist))  # first minimum = lowest id
    if dist[best] > max_dist:
        return None
    return int(dataset._ids[best])


def associate_many(positions, dataset: ReferenceDataset,
                   max_dist: float = DEFAULT_MAX_ASSOCIATION_DISTANCE) -> list[int | None]:
    """Vectorized :func:`associate` for a batch of capture positions."""
    if max_dist < 0:
        raise ParameterError(f"max_dist must be nonnegative, got {max_dist!r}")
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if len(dataset) == 0:
        return [None] * len(pos)
    diff = pos[:, None, :] - dataset._positions[None, :, :]
    dist = np.sqrt(diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1]
                   + diff[..., 2] * diff[..., 2])
    best = dist.argmin(axis=1)
    ok = dist[np.arange(len(pos)), best] <= max_dist
    return [int(dataset._ids[b]) if k else None for b, k in zip(best, ok)]


def load_dataset(manifest_path) -> ReferenceDataset:
    """Read a manifest; cloud paths are relative to the manifest's directory."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    records = io.read_manifest(manifest_path)
    return ReferenceDataset((r.id, r.pose, base / r.path) for r in records)


def map_fingerprint(points: np.ndarray) -> int:
    """CRC-32 of the map's float32 payload; used as the map id in containers."""
    return zlib.crc32(np.asarray(points).astype("<f4").tobytes())


class MapCloud:
    """The static map with its prebuilt KD-tree."""

    def __init__(self, cloud: PointCloud, map_id: int | None = None):
        if cloud.pose != IDENTITY_POSE:
            cloud = PointCloud(cloud.points, id=cloud.id)
        self.cloud = cloud
        self.id = map_fingerprint(cloud.points) if map_id is None else int(map_id)
        self.tree = KdTree(cloud.points)

    @property
    def points(self) -> np.ndarray:
        return self.cloud.points

    def __len__(self) -> int:
        return len(self.cloud)


def load_map(path) -> MapCloud:
    return MapCloud(io.read_cloud(path))
