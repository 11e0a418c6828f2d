"""Point-cloud and trajectory files.

Supported cloud formats:

* ``ply``: PLY 1.0, binary little-endian (read/write) or ASCII (read only).
* ``pcd``: PCD v0.7 with ``DATA binary`` and float32 x/y/z fields.
* ``raw``: bare little-endian float32 x/y/z triples.

Only x/y/z are kept; other vertex properties are skipped.  Point order is
preserved exactly because the codec addresses points by index.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import FormatError, ParameterError
from .geom import IDENTITY_POSE, PointCloud, Pose

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}
_PCD_TYPES = {("F", 4): "f4", ("F", 8): "f8", ("I", 1): "i1", ("I", 2): "i2", ("I", 4): "i4",
              ("I", 8): "i8", ("U", 1): "u1", ("U", 2): "u2", ("U", 4): "u4", ("U", 8): "u8"}

FORMATS = ("ply", "pcd", "raw")
CLOUD_SUFFIXES = (".ply", ".pcd", ".raw")


def format_for(path) -> str:
    suffix = Path(path).suffix.lower().lstrip(".")
    if suffix not in FORMATS:
        raise FormatError(f"unknown point-cloud format for {path}")
    return suffix


def _finish(xyz: np.ndarray, path, cloud_id: int, pose: Pose) -> PointCloud:
    if len(xyz) >= 2**32:
        raise FormatError(f"{path}: clouds with 2**32 or more points are not supported")
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    if not np.isfinite(xyz).all():
        bad = int(np.flatnonzero(~np.isfinite(xyz).all(axis=1))[0])
        raise FormatError(f"{path}: point {bad} has a non-finite coordinate")
    return PointCloud(xyz, id=cloud_id, pose=pose)


def _read_header(f, path, terminator: bytes, max_lines=256) -> list[str]:
    lines = []
    for _ in range(max_lines):
        raw = f.readline()
        if not raw:
            raise FormatError(f"{path}: header ends before {terminator.decode()!r}")
        line = raw.decode("ascii", errors="replace").strip()
        lines.append(line)
        if raw.split(b" ")[0].strip() == terminator:
            return lines
    raise FormatError(f"{path}: header too long")


def _read_ply(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.readline().strip() != b"ply":
            raise FormatError(f"{path}: not a PLY file")
        header = _read_header(f, path, b"end_header")
        fmt = None
        elements: list[tuple[str, int, list]] = []
        for line in header:
            words = line.split()
            if not words or words[0] in ("comment", "obj_info", "end_header"):
                continue
            if words[0] == "format":
                fmt = words[1:]
            elif words[0] == "element":
                if len(words) != 3:
                    raise FormatError(f"{path}: malformed element line {line!r}")
                elements.append((words[1], int(words[2]), []))
            elif words[0] == "property":
                if not elements:
                    raise FormatError(f"{path}: property before any element")
                if words[1] == "list":
                    elements[-1][2].append((words[-1], None))
                elif len(words) == 3 and words[1] in _PLY_TYPES:
                    elements[-1][2].append((words[2], _PLY_TYPES[words[1]]))
                else:
                    raise FormatError(f"{path}: unsupported property {line!r}")
            else:
                raise FormatError(f"{path}: unexpected header line {line!r}")
        if fmt is None or fmt[0] not in ("binary_little_endian", "ascii"):
            raise FormatError(f"{path}: unsupported PLY format {fmt}")
        if not elements or elements[0][0] != "vertex":
            raise FormatError(f"{path}: first element must be 'vertex'")
        _, count, props = elements[0]
        if count >= 2**32:
            raise FormatError(f"{path}: clouds with 2**32 or more points are not supported")
        names = [name for name, _ in props]
        if not {"x", "y", "z"} <= set(names):
            raise FormatError(f"{path}: vertex element lacks x/y/z")
        if any(t is None for _, t in props):
            raise FormatError(f"{path}: list properties on vertices are not supported")
        if fmt[0] == "ascii":
            rows = []
            for i in range(count):
                line = f.readline().split()
                if len(line) < len(props):
                    raise FormatError(f"{path}: truncated at vertex {i}")
                rows.append([float(line[names.index(a)]) for a in "xyz"])
            return np.array(rows, dtype=np.float64).reshape(-1, 3)
        dtype = np.dtype([(name, "<" + t) for name, t in props])
        payload = f.read(count * dtype.itemsize)
    if len(payload) < count * dtype.itemsize:
        raise FormatError(f"{path}: truncated payload ({len(payload)} of "
                          f"{count * dtype.itemsize} bytes)")
    rec = np.frombuffer(payload, dtype=dtype, count=count)
    return np.stack([rec["x"], rec["y"], rec["z"]], axis=1)


def _read_pcd(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = _read_header(f, path, b"DATA")
        fields = {}
        for line in header:
            words = line.split()
            if words and not line.startswith("#"):
                fields[words[0].upper()] = words[1:]
        try:
            names = fields["FIELDS"]
            sizes = [int(s) for s in fields["SIZE"]]
            types = fields["TYPE"]
            counts = [int(c) for c in fields.get("COUNT", ["1"] * len(names))]
            points = int(fields["POINTS"][0])
            data = fields["DATA"][0]
        except (KeyError, IndexError, ValueError) as exc:
            raise FormatError(f"{path}: malformed PCD header ({exc})") from None
        if data != "binary":
            raise FormatError(f"{path}: only 'DATA binary' PCD files are supported")
        if not len(names) == len(sizes) == len(types) == len(counts):
            raise FormatError(f"{path}: inconsistent FIELDS/SIZE/TYPE/COUNT")
        layout = []
        for name, size, tp, cnt in zip(names, sizes, types, counts):
            code = _PCD_TYPES.get((tp.upper(), size))
            if code is None:
                raise FormatError(f"{path}: unsupported field type {tp}{size}")
            layout.append((name, "<" + code, (cnt,)) if cnt > 1 else (name, "<" + code))
        dtype = np.dtype(layout)
        for axis in "xyz":
            if axis not in names or dtype[axis] != np.dtype("<f4"):
                raise FormatError(f"{path}: PCD needs float32 x/y/z fields")
        if points >= 2**32:
            raise FormatError(f"{path}: clouds with 2**32 or more points are not supported")
        payload = f.read(points * dtype.itemsize)
    if len(payload) < points * dtype.itemsize:
        raise FormatError(f"{path}: truncated payload")
    rec = np.frombuffer(payload, dtype=dtype, count=points)
    return np.stack([rec["x"], rec["y"], rec["z"]], axis=1)


def _read_raw(path) -> np.ndarray:
    payload = Path(path).read_bytes()
    if len(payload) % 12:
        raise FormatError(f"{path}: raw payload is not a multiple of 12 bytes")
    return np.frombuffer(payload, dtype="<f4").reshape(-1, 3)


def read_cloud(path, *, cloud_id: int = 0, pose: Pose = IDENTITY_POSE) -> PointCloud:
    """Load a cloud; coordinates are widened to float64."""
    fmt = format_for(path)
    try:
        reader = {"ply": _read_ply, "pcd": _read_pcd, "raw": _read_raw}[fmt]
        xyz = reader(path)
    except FileNotFoundError:
        raise
    except (ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    return _finish(xyz, path, cloud_id, pose)


def cloud_payload(cloud: PointCloud) -> bytes:
    """Points as little-endian float32 triples (the on-disk width)."""
    pts = cloud.points
    if len(pts) and np.abs(pts).max() > np.finfo(np.float32).max:
        raise ParameterError("coordinates overflow float32")
    return pts.astype("<f4").tobytes()


def write_cloud(cloud: PointCloud, path, format: str | None = None) -> None:
    fmt = format or format_for(path)
    payload = cloud_payload(cloud)
    n = len(cloud)
    if fmt == "ply":
        head = ("ply\nformat binary_little_endian 1.0\n"
                f"comment cloud_id {cloud.id}\n"
                f"element vertex {n}\n"
                "property float x\nproperty float y\nproperty float z\nend_header\n")
    elif fmt == "pcd":
        head = ("# .PCD v0.7 - Point Cloud Data file format\nVERSION 0.7\n"
                "FIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\n"
                f"WIDTH {n}\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS {n}\nDATA binary\n")
    elif fmt == "raw":
        head = ""
    else:
        raise ParameterError(f"unknown point-cloud format {fmt!r}")
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(head.encode("ascii"))
        f.write(payload)
    os.replace(tmp, path)


# --------------------------------------------------------------------------
# Trajectories and manifests


class ManifestRecord(NamedTuple):
    id: int
    pose: Pose
    path: str


def parse_manifest_line(line: str, where: str) -> ManifestRecord | None:
    text = line.split("#", 1)[0].strip()
    if not text:
        return None
    fields = [f.strip() for f in text.split(",")]
    if len(fields) != 10:
        raise FormatError(f"{where}: expected 10 comma-separated fields, got {len(fields)}")
    try:
        cloud_id = int(fields[0])
        timestamp = int(fields[1])
        x, y, z, qx, qy, qz, qw = (float(v) for v in fields[2:9])
    except ValueError as exc:
        raise FormatError(f"{where}: {exc}") from None
    if not 0 <= cloud_id < 2**32:
        raise FormatError(f"{where}: cloud id {cloud_id} does not fit in 32 bits")
    try:
        pose = Pose((x, y, z), (qx, qy, qz, qw), timestamp)
    except ParameterError as exc:
        raise FormatError(f"{where}: {exc}") from None
    return ManifestRecord(cloud_id, pose, fields[9])


def read_manifest(path) -> list[ManifestRecord]:
    """Records of ``id,timestamp_us,x,y,z,qx,qy,qz,qw,relative_path`` lines."""
    records = []
    seen = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            rec = parse_manifest_line(line, f"{path}:{lineno}")
            if rec is None:
                continue
            if rec.id in seen:
                raise FormatError(f"{path}:{lineno}: duplicate cloud id {rec.id}")
            seen.add(rec.id)
            records.append(rec)
    return records


def read_trajectory(path) -> list[tuple[int, Pose]]:
    return [(rec.id, rec.pose) for rec in read_manifest(path)]


def format_manifest_line(cloud_id: int, pose: Pose, rel_path: str = "") -> str:
    x, y, z = pose.position
    qx, qy, qz, qw = pose.orientation
    return (f"{cloud_id},{pose.timestamp},{x!r},{y!r},{z!r},"
            f"{qx!r},{qy!r},{qz!r},{qw!r},{rel_path}")


def write_manifest(records, path) -> None:
    lines = ["# id,timestamp_us,x,y,z,qx,qy,qz,qw,relative_path"]
    lines += [format_manifest_line(*rec) for rec in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
