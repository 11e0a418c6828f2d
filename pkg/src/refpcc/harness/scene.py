"""Deterministic synthetic street scenes.

A scene is a straight street lined with box-shaped buildings and poles.
Two traversals drive the same route: the *reference day* and the *source
day*, each with its own moving cars and pedestrians and its own sensor
noise.  A dense map is sampled directly from the static surfaces.

All randomness comes from PCG64 streams spawned from the spec seed, with
one stream per purpose, so changing a knob such as the noise level does
not reshuffle the static layout or the dynamic objects.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError
from ..geom import PointCloud, Pose
from ..refstore import MapCloud

CHANNEL_CHOICES = (32, 64, 128)
DAY_US = 86_400_000_000
FRAME_DT_US = 100_000
REFERENCE_ID_BASE = 0
SOURCE_ID_BASE = 100_000

_CAR = (4.5, 1.8, 1.5)
_PEDESTRIAN = (0.6, 0.6, 1.8)
_CAR_LANES = (1.75, 5.25, -5.25)


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 7
    n_frames: int = 20
    frame_spacing: float = 1.0
    # static structure
    street_half_width: float = 9.0
    building_width: tuple[float, float] = (8.0, 20.0)
    building_gap: tuple[float, float] = (0.0, 4.0)
    building_depth: tuple[float, float] = (8.0, 15.0)
    building_height: tuple[float, float] = (6.0, 20.0)
    pole_spacing: float = 15.0
    # dynamics
    n_cars: int = 6
    n_pedestrians: int = 6
    # sensor
    channels: int = 64
    azimuth_steps: int = 1024
    elevation_min: float = -24.0
    elevation_max: float = 10.0
    max_range: float = 30.0
    sensor_height: float = 1.8
    noise_sigma: float = 0.0
    # traversals
    lane_offset: float = -1.75
    pose_jitter: float = 0.05
    localization_error: float = 0.0
    # map
    map_spacing: float = 0.1

    def __post_init__(self):
        if self.channels not in CHANNEL_CHOICES:
            raise ParameterError(f"channels must be one of {CHANNEL_CHOICES}, got {self.channels}")
        for name in ("n_frames", "azimuth_steps"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be at least 1")
        for name in ("n_cars", "n_pedestrians"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be nonnegative")
        for name in ("frame_spacing", "max_range", "map_spacing", "street_half_width",
                     "sensor_height", "pole_spacing"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        for name in ("noise_sigma", "pose_jitter", "localization_error"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be nonnegative")
        for name in ("building_width", "building_gap", "building_depth", "building_height"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi or (name != "building_gap" and lo <= 0):
                raise ParameterError(f"{name} must be an increasing positive range")
        if not -90 < self.elevation_min < self.elevation_max < 90:
            raise ParameterError("elevation range must satisfy -90 < min < max < 90")
        if not 0 <= self.seed < 2**64:
            raise ParameterError("seed must be an unsigned 64-bit integer")

    def replace(self, **changes) -> "SceneSpec":
        return dataclasses.replace(self, **changes)

    # flat key=value text format -------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(repr(v) for v in value)
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SceneSpec":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (part.strip() for part in line.partition("="))
            if not sep or key not in types:
                raise ParameterError(f"line {lineno}: unknown or malformed entry {line!r}")
            kind = str(types[key])
            try:
                if kind.startswith("tuple"):
                    parts = [float(v) for v in value.split(",")]
                    if len(parts) != 2:
                        raise ValueError("expected two comma-separated values")
                    kwargs[key] = tuple(parts)
                elif kind == "int":
                    kwargs[key] = int(value)
                else:
                    kwargs[key] = float(value)
            except ValueError as exc:
                raise ParameterError(f"line {lineno}: {key}: {exc}") from None
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "SceneSpec":
        with open(path, encoding="utf-8") as f:
            return cls.from_text(f.read())


@dataclass
class Scene:
    spec: SceneSpec
    reference: list[PointCloud]
    source: list[PointCloud]
    map: MapCloud
    source_true_positions: np.ndarray
    dynamic_fraction: list[float] = field(default_factory=list)


# --------------------------------------------------------------------------
# Static layout


def _route_x(spec: SceneSpec) -> tuple[float, float]:
    return 0.0, (spec.n_frames - 1) * spec.frame_spacing


def _scene_x(spec: SceneSpec) -> tuple[float, float]:
    a, b = _route_x(spec)
    return a - spec.max_range, b + spec.max_range


def _buildings(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    """Boxes ``(xmin, ymin, zmin, xmax, ymax, zmax)`` on both sides of the street."""
    x0, x1 = _scene_x(spec)
    boxes = []
    for side in (-1.0, 1.0):
        x = x0 - rng.uniform(0, spec.building_width[1])
        while x < x1:
            w = rng.uniform(*spec.building_width)
            depth = rng.uniform(*spec.building_depth)
            h = rng.uniform(*spec.building_height)
            face = spec.street_half_width + rng.uniform(0.0, 1.5)
            if side > 0:
                boxes.append((x, face, 0.0, x + w, face + depth, h))
            else:
                boxes.append((x, -face - depth, 0.0, x + w, -face, h))
            x += w + rng.uniform(*spec.building_gap)
    return np.array(boxes, dtype=np.float64).reshape(-1, 6)


def _poles(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    x0, x1 = _scene_x(spec)
    boxes = []
    for side in (-1.0, 1.0):
        y = side * (spec.street_half_width - 1.0)
        x = x0 + rng.uniform(0, spec.pole_spacing)
        while x < x1:
            boxes.append((x - 0.15, y - 0.15, 0.0, x + 0.15, y + 0.15, 6.0))
            x += spec.pole_spacing * rng.uniform(0.8, 1.2)
    return np.array(boxes, dtype=np.float64).reshape(-1, 6)


def _grid(a0, a1, b0, b1, step):
    a = np.arange(a0, a1 + 1e-9, step)
    b = np.arange(b0, b1 + 1e-9, step)
    aa, bb = np.meshgrid(a, b, indexing="ij")
    return aa.ravel(), bb.ravel()


def _map_points(spec: SceneSpec, static_boxes: np.ndarray) -> np.ndarray:
    """Static surfaces sampled on a lattice: ground, facades, pole faces."""
    s = spec.map_spacing
    x0, x1 = _scene_x(spec)
    visible_top = spec.sensor_height + spec.max_range * math.tan(math.radians(spec.elevation_max))
    parts = []
    gx, gy = _grid(x0, x1, -spec.street_half_width - 1.5, spec.street_half_width + 1.5, s)
    ground = np.stack([gx, gy, np.zeros_like(gx)], axis=1)
    inside = np.zeros(len(ground), bool)
    for b in static_boxes:
        inside |= (gx >= b[0]) & (gx <= b[3]) & (gy >= b[1]) & (gy <= b[4])
    parts.append(ground[~inside])
    for b in static_boxes:
        top = min(b[5], visible_top)
        if b[3] - b[0] < 1.0:
            # poles are visible from every side
            y_faces, side_span = (b[1], b[4]), (b[1], b[4])
        else:
            road_y = b[1] if b[1] > 0 else b[4]
            depth = min(4.0, b[4] - b[1])
            y_faces = (road_y,)
            side_span = (road_y, road_y + depth) if b[1] > 0 else (road_y - depth, road_y)
        for y in y_faces:
            fx, fz = _grid(b[0], b[3], 0.0, top, s)
            parts.append(np.stack([fx, np.full_like(fx, y), fz], axis=1))
        for x in (b[0], b[3]):
            fy, fz = _grid(side_span[0], side_span[1], 0.0, top, s)
            parts.append(np.stack([np.full_like(fy, x), fy, fz], axis=1))
    pts = np.concatenate(parts)
    return pts.astype(np.float32).astype(np.float64)


# --------------------------------------------------------------------------
# Dynamics and ray casting


def _dynamic_objects(spec: SceneSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Initial boxes and x-velocities of moving cars and pedestrians."""
    x0, x1 = _scene_x(spec)
    boxes, vel = [], []
    for _ in range(spec.n_cars):
        lane = _CAR_LANES[int(rng.integers(len(_CAR_LANES)))]
        cx = rng.uniform(x0, x1)
        v = rng.uniform(4.0, 12.0) * (1 if lane < 0 or lane == 1.75 else -1)
        l, w, h = _CAR
        boxes.append((cx - l / 2, lane - w / 2, 0.0, cx + l / 2, lane + w / 2, h))
        vel.append(v)
    for _ in range(spec.n_pedestrians):
        side = 1.0 if rng.random() < 0.5 else -1.0
        cy = side * rng.uniform(spec.street_half_width - 2.5, spec.street_half_width - 0.5)
        cx = rng.uniform(x0, x1)
        l, w, h = _PEDESTRIAN
        boxes.append((cx - l / 2, cy - w / 2, 0.0, cx + l / 2, cy + w / 2, h))
        vel.append(rng.uniform(-1.5, 1.5))
    return np.array(boxes, dtype=np.float64).reshape(-1, 6), np.array(vel, dtype=np.float64)


def ray_directions(spec: SceneSpec) -> np.ndarray:
    """Unit directions, channel-major: uniform azimuth x evenly spaced elevations."""
    elev = np.radians(np.linspace(spec.elevation_min, spec.elevation_max, spec.channels))
    azim = np.arange(spec.azimuth_steps) * (2 * math.pi / spec.azimuth_steps)
    ce, se = np.cos(elev)[:, None], np.sin(elev)[:, None]
    dirs = np.stack([np.broadcast_to(ce * np.cos(azim), (spec.channels, spec.azimuth_steps)),
                     np.broadcast_to(ce * np.sin(azim), (spec.channels, spec.azimuth_steps)),
                     np.broadcast_to(se, (spec.channels, spec.azimuth_steps))], axis=-1)
    return dirs.reshape(-1, 3)


def cast(origin: np.ndarray, dirs: np.ndarray, boxes: np.ndarray, max_range: float,
         block: int = 8192) -> tuple[np.ndarray, np.ndarray]:
    """Range along each ray to the first hit (inf if none) and the hit box (-1 = ground)."""
    n = len(dirs)
    t_hit = np.full(n, np.inf)
    which = np.full(n, -2, np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        tg = np.where(dirs[:, 2] < 0, -origin[2] / dirs[:, 2], np.inf)
    ground = tg <= max_range
    t_hit[ground] = tg[ground]
    which[ground] = -1
    if len(boxes):
        lo = boxes[:, :3] - origin
        hi = boxes[:, 3:] - origin
        for s in range(0, n, block):
            tmin = np.zeros((len(inv[s:s + block]), len(boxes)))
            tmax = np.full_like(tmin, np.inf)
            for axis in range(3):
                iv = inv[s:s + block, axis, None]
                with np.errstate(invalid="ignore"):
                    t1 = lo[None, :, axis] * iv
                    t2 = hi[None, :, axis] * iv
                tmin = np.fmax(tmin, np.fmin(t1, t2))
                tmax = np.fmin(tmax, np.fmax(t1, t2))
            tmin = np.where((tmax >= tmin) & (tmin > 0), tmin, np.inf)
            k = tmin.argmin(axis=1)
            tk = tmin[np.arange(len(k)), k]
            closer = (tk < t_hit[s:s + block]) & (tk <= max_range)
            t_hit[s:s + block][closer] = tk[closer]
            which[s:s + block][closer] = k[closer]
    return t_hit, which


def _scan(spec, position, dirs, static_boxes, dyn_boxes, noise_z):
    boxes = np.concatenate([static_boxes, dyn_boxes])
    t, which = cast(position, dirs, boxes, spec.max_range)
    valid = np.isfinite(t)
    t = t + spec.noise_sigma * noise_z
    valid &= t > 0
    pts = position + dirs[valid] * t[valid, None]
    dynamic = which[valid] >= len(static_boxes)
    return pts.astype(np.float32).astype(np.float64), float(dynamic.mean()) if len(pts) else 0.0


def _traverse(spec, static_boxes, dirs, rng_dyn, rng_pose, rng_noise, *, jitter, loc_error,
              id_base, t0_us):
    route_x0, _ = _route_x(spec)
    dyn0, vel = _dynamic_objects(spec, rng_dyn)
    clouds, true_pos, dyn_frac = [], [], []
    for k in range(spec.n_frames):
        pos = np.array([route_x0 + k * spec.frame_spacing, spec.lane_offset, spec.sensor_height])
        pos[:2] += rng_pose.uniform(-1.0, 1.0, 2) * jitter
        recorded = pos.copy()
        recorded[:2] += rng_pose.uniform(-1.0, 1.0, 2) * loc_error
        dyn = dyn0.copy()
        shift = vel * (k * FRAME_DT_US / 1e6)
        dyn[:, 0] += shift
        dyn[:, 3] += shift
        noise_z = rng_noise.standard_normal(len(dirs))
        pts, frac = _scan(spec, pos, dirs, static_boxes, dyn, noise_z)
        pose = Pose(tuple(recorded.tolist()), timestamp=t0_us + k * FRAME_DT_US)
        clouds.append(PointCloud(pts, id=id_base + k, pose=pose))
        true_pos.append(pos)
        dyn_frac.append(frac)
    return clouds, np.array(true_pos), dyn_frac


def gen_scene(spec: SceneSpec) -> Scene:
    root = np.random.SeedSequence([spec.seed & 0xFFFFFFFF, spec.seed >> 32])
    streams = [np.random.Generator(np.random.PCG64(s)) for s in root.spawn(7)]
    rng_static, rng_ref_dyn, rng_ref_noise, rng_src_dyn, rng_src_pose, rng_src_noise, _ = streams
    static_boxes = np.concatenate([_buildings(spec, rng_static), _poles(spec, rng_static)])
    dirs = ray_directions(spec)
    zero_pose_rng = np.random.Generator(np.random.PCG64(0))
    reference, _, _ = _traverse(spec, static_boxes, dirs, rng_ref_dyn, zero_pose_rng,
                                rng_ref_noise, jitter=0.0, loc_error=0.0,
                                id_base=REFERENCE_ID_BASE, t0_us=0)
    source, true_pos, dyn_frac = _traverse(
        spec, static_boxes, dirs, rng_src_dyn, rng_src_pose, rng_src_noise,
        jitter=spec.pose_jitter, loc_error=spec.localization_error,
        id_base=SOURCE_ID_BASE, t0_us=DAY_US)
    map_cloud = MapCloud(PointCloud(_map_points(spec, static_boxes)))
    return Scene(spec, reference, source, map_cloud, true_pos, dyn_frac)
