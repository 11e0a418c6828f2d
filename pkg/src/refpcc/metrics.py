"""Reconstruction quality and size metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .codec import CompressedContainer, raw_size
from .errors import ParameterError
from .geom import PointCloud, as_points, bounding_box
from .spatial import KdTree

PSNR_CAP = 200.0
NORMAL_NEIGHBOURS = 12
# Second PCA eigenvalue below this fraction of the largest marks a line or point.
_RANK_TOLERANCE = 1e-10


def _points(cloud) -> np.ndarray:
    return cloud.points if isinstance(cloud, PointCloud) else as_points(cloud)


def nearest_distances(p, q) -> np.ndarray:
    """Euclidean distance from every point of ``p`` to its nearest point in ``q``."""
    _, d2 = KdTree(_points(q)).nearest_many(_points(p))
    return np.sqrt(d2)


def chamfer(p, q) -> float:
    """Directed Chamfer distance: mean nearest-neighbour distance from p to q."""
    p, q = _points(p), _points(q)
    if len(p) == 0 or len(q) == 0:
        raise ParameterError("Chamfer distance is undefined for an empty cloud")
    return float(nearest_distances(p, q).mean())


def chamfer_sym(p, q) -> float:
    return (chamfer(p, q) + chamfer(q, p)) / 2


def estimate_normals(points, k: int = NORMAL_NEIGHBOURS) -> tuple[np.ndarray, np.ndarray]:
    """Unit normals from PCA plane fits over each point and its k neighbours.

    Returns ``(normals, planar)``; ``planar`` is False where the
    neighbourhood has rank < 2 and no plane is defined.
    """
    pts = _points(points)
    if len(pts) < k + 1:
        raise ParameterError(f"normal estimation needs at least {k + 1} points, got {len(pts)}")
    _, nbr = cKDTree(pts).query(pts, k=k + 1)
    hood = pts[nbr]
    centred = hood - hood.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centred, centred) / (k + 1)
    eigval, eigvec = np.linalg.eigh(cov)
    normals = eigvec[:, :, 0]
    planar = eigval[:, 1] > _RANK_TOLERANCE * np.maximum(eigval[:, 2], np.finfo(float).tiny)
    return normals, planar


def _directed_p2plane(target: np.ndarray, queries: np.ndarray, k: int):
    normals, planar = estimate_normals(target, k)
    nn, _ = KdTree(target).nearest_many(queries)
    err = queries - target[nn]
    proj = np.einsum("ij,ij->i", err, normals[nn])
    sq = np.where(planar[nn], proj * proj, np.einsum("ij,ij->i", err, err))
    return float(sq.mean()), bool(planar.any())


def point_to_plane_mse(original, reconstructed, k: int = NORMAL_NEIGHBOURS):
    """Symmetric point-to-plane MSE and whether any plane fit succeeded."""
    a, b = _points(original), _points(reconstructed)
    forward, ok_a = _directed_p2plane(a, b, k)
    backward, ok_b = _directed_p2plane(b, a, k)
    return (forward + backward) / 2, ok_a or ok_b


def psnr_point_to_plane(original, reconstructed, k: int = NORMAL_NEIGHBOURS,
                        peak: float | None = None) -> float | None:
    """Point-to-plane PSNR in dB, capped at 200.

    ``peak`` defaults to the bounding-box diagonal of ``original``.  Returns
    None when no neighbourhood in either cloud admits a plane fit.
    """
    mse, any_planar = point_to_plane_mse(original, reconstructed, k)
    if not any_planar:
        return None
    if peak is None:
        peak = bounding_box(_points(original)).diagonal
    if mse <= 0 or peak <= 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10 * math.log10(peak * peak / mse))


@dataclass
class QualityReport:
    name: str
    n_points: int
    n_reconstructed: int
    chamfer_sym: float
    psnr_p2plane: float | None
    raw_bytes: int
    compressed_bytes: int | None
    compression_ratio: float | None
    n_source_exclusive: int | None = None
    n_ref_exclusive: int | None = None
    n_map_common: int | None = None
    error_bound: float | None = None
    timings_us: dict[str, float] = field(default_factory=dict)

    def to_record(self) -> str:
        """One ``key=value`` pair per line; ``none`` marks an absent value."""
        lines = []
        for key, value in self.__dict__.items():
            if key == "timings_us":
                lines += [f"time_{stage}_us={us:.1f}" for stage, us in value.items()]
                continue
            lines.append(f"{key}={'none' if value is None else value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_record(cls, text: str) -> "QualityReport":
        ints = {"n_points", "n_reconstructed", "raw_bytes", "compressed_bytes",
                "n_source_exclusive", "n_ref_exclusive", "n_map_common"}
        kwargs, timings = {}, {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition("=")
            if key.startswith("time_") and key.endswith("_us"):
                timings[key[5:-3]] = float(value)
            elif value == "none":
                kwargs[key] = None
            elif key == "name":
                kwargs[key] = value
            else:
                kwargs[key] = int(value) if key in ints else float(value)
        return cls(**kwargs, timings_us=timings)


def compression_report(source: PointCloud, container: CompressedContainer | None,
                       reconstructed: PointCloud, timings: dict | None = None,
                       name: str = "", k: int = NORMAL_NEIGHBOURS) -> QualityReport:
    raw = raw_size(source)
    if len(source) and len(reconstructed):
        cd = chamfer_sym(source, reconstructed)
    elif len(source) == len(reconstructed) == 0:
        cd = 0.0
    else:
        cd = math.inf
    try:
        psnr = psnr_point_to_plane(source, reconstructed, k)
    except ParameterError:
        psnr = None
    size = None if container is None else len(container)
    h = None if container is None else container.header
    return QualityReport(
        name=name or str(source.id),
        n_points=len(source),
        n_reconstructed=len(reconstructed),
        chamfer_sym=cd,
        psnr_p2plane=psnr,
        raw_bytes=raw,
        compressed_bytes=size,
        compression_ratio=None if not size else raw / size,
        n_source_exclusive=None if h is None else h.n_source_exclusive,
        n_ref_exclusive=None if h is None else h.n_ref_exclusive,
        n_map_common=None if h is None else h.n_map_common,
        error_bound=None if h is None else h.error_bound,
        timings_us=dict(timings or {}),
    )


def format_table(reports) -> str:
    """Human-readable table for the CLI."""
    cols = ["name", "points", "ratio", "chamfer_m", "psnr_db", "bytes"]
    rows = []
    for r in reports:
        rows.append([
            r.name, str(r.n_points),
            "-" if r.compression_ratio is None else f"{r.compression_ratio:.2f}",
            f"{r.chamfer_sym:.5f}",
            "-" if r.psnr_p2plane is None else f"{r.psnr_p2plane:.2f}",
            "-" if r.compressed_bytes is None else str(r.compressed_bytes),
        ])
    widths = [max(len(c), *(len(row[i]) for row in rows)) if rows else len(c)
              for i, c in enumerate(cols)]
    fmt = "  ".join(f"{{:>{w}}}" for w in widths)
    return "\n".join([fmt.format(*cols)] + [fmt.format(*row) for row in rows])
