"""Container codec for cascaded diffs.

Wire format (little-endian throughout)::

    magic "DJVW" | version u8 | flags u8 | threshold f32
    source id u32 | reference id u32 | map id u32
    geometry codec u8 | stream codec u8
    [frame: min xyz, max xyz as 6 x f32, geometry codec 1 only]
    n_source_exclusive u32 | n_ref_exclusive u32 | n_map_common u32
    geometry blob length u32 | index blob length u32
    geometry blob | index blob

The index blob is the stream-compressed concatenation of two delta
streams (reference-exclusive indices, then map-common indices), each
serialized as u32 values.
"""

from __future__ import annotations

import struct
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from .diffcore import CascadedDiff, cascaded_diff, reconstruct
from .errors import CorruptionError, MismatchError, NotFoundError, ParameterError
from .geom import Aabb, PointCloud, as_points, bounding_box

MAGIC = b"DJVW"
VERSION = 1
FLAG_REFERENCE = 0x01
FLAG_MAP = 0x02

GEOMETRY_RAW = 0
GEOMETRY_QUANT16 = 1
STREAM_STORED = 0
STREAM_DEFLATE = 1

GEOMETRY_CODECS = {"raw": GEOMETRY_RAW, "quant16": GEOMETRY_QUANT16}
STREAM_CODECS = {"stored": STREAM_STORED, "deflate": STREAM_DEFLATE}
RECORD_SIZE = {GEOMETRY_RAW: 12, GEOMETRY_QUANT16: 6}

_HEAD = struct.Struct("<4sBBfIIIBB")
_FRAME = struct.Struct("<6f")
_TAIL = struct.Struct("<IIIII")
_LATTICE_MAX = 65535
_U32_MAX = 2**32 - 1


def header_size(geometry_codec: int) -> int:
    extra = _FRAME.size if geometry_codec == GEOMETRY_QUANT16 else 0
    return _HEAD.size + extra + _TAIL.size


# --------------------------------------------------------------------------
# Delta coding


@dataclass(frozen=True, eq=False)
class DeltaStream:
    """Largest index followed by gaps over the descending order."""

    first: int | None
    deltas: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint32))

    def __len__(self) -> int:
        return 0 if self.first is None else 1 + len(self.deltas)

    def __eq__(self, other):
        if not isinstance(other, DeltaStream):
            return NotImplemented
        return self.first == other.first and np.array_equal(self.deltas, other.deltas)

    __hash__ = None

    def values(self) -> np.ndarray:
        """Serialized form: ``[first, *deltas]`` as u32."""
        if self.first is None:
            return np.zeros(0, np.uint32)
        return np.concatenate([[self.first], self.deltas]).astype(np.uint32)

    @classmethod
    def from_values(cls, values) -> "DeltaStream":
        values = np.asarray(values, dtype=np.uint32)
        if len(values) == 0:
            return cls(None)
        return cls(int(values[0]), values[1:].copy())


def delta_encode(indices) -> DeltaStream:
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if len(idx) == 0:
        return DeltaStream(None)
    if idx.min() < 0 or idx.max() > _U32_MAX:
        raise ParameterError("indices must fit in an unsigned 32-bit integer")
    if len(idx) > 1 and not (np.diff(idx) > 0).all():
        raise ParameterError("indices must be strictly increasing")
    desc = idx[::-1]
    return DeltaStream(int(desc[0]), (desc[:-1] - desc[1:]).astype(np.uint32))


def delta_decode(stream: DeltaStream) -> np.ndarray:
    if stream.first is None:
        if len(stream.deltas):
            raise CorruptionError("delta stream has gaps but no first index")
        return np.zeros(0, np.int64)
    deltas = np.asarray(stream.deltas, dtype=np.int64)
    if len(deltas) and deltas.min() <= 0:
        raise CorruptionError("delta stream contains a zero gap")
    desc = int(stream.first) - np.concatenate([[0], np.cumsum(deltas)])
    if desc[-1] < 0:
        raise CorruptionError("delta stream underflows below index 0")
    return desc[::-1].copy()


# --------------------------------------------------------------------------
# Geometry coders


def _f32_down(v: np.ndarray) -> np.ndarray:
    f = v.astype(np.float32)
    return np.where(f.astype(np.float64) > v, np.nextafter(f, np.float32(-np.inf)), f)


def _f32_up(v: np.ndarray) -> np.ndarray:
    f = v.astype(np.float32)
    return np.where(f.astype(np.float64) < v, np.nextafter(f, np.float32(np.inf)), f)


def quantization_frame(points) -> Aabb:
    """Bounding box of ``points`` widened outward to float32 values."""
    box = bounding_box(as_points(points))
    if box.is_empty:
        return box
    return Aabb(_f32_down(box.min).astype(np.float64), _f32_up(box.max).astype(np.float64))


def geometry_error_bound(codec: int, frame: Aabb | None) -> float:
    """Declared worst-case Euclidean decode error of a geometry coder."""
    if codec == GEOMETRY_RAW or frame is None or frame.is_empty:
        return 0.0
    return float(np.linalg.norm(frame.extent)) / _LATTICE_MAX / 2


def geometry_encode(points, codec: int, frame: Aabb | None = None) -> bytes:
    pts = as_points(points)
    if codec == GEOMETRY_RAW:
        if len(pts) and np.abs(pts).max() > np.finfo(np.float32).max:
            raise ParameterError("coordinates overflow float32")
        return pts.astype("<f4").tobytes()
    if codec != GEOMETRY_QUANT16:
        raise ParameterError(f"unknown geometry codec id {codec}")
    if len(pts) == 0:
        return b""
    if frame is None or not frame.contains(pts):
        raise ParameterError("points fall outside the quantization frame")
    extent = frame.extent
    scale = np.divide(_LATTICE_MAX, extent, out=np.zeros(3), where=extent > 0)
    lattice = np.rint((pts - frame.min) * scale)
    return np.clip(lattice, 0, _LATTICE_MAX).astype("<u2").tobytes()


def geometry_decode(blob: bytes, codec: int, frame: Aabb | None, count: int) -> np.ndarray:
    if codec not in RECORD_SIZE:
        raise CorruptionError(f"unknown geometry codec id {codec}")
    if len(blob) != count * RECORD_SIZE[codec]:
        raise CorruptionError(
            f"geometry blob is {len(blob)} bytes, expected {count} x {RECORD_SIZE[codec]}")
    if codec == GEOMETRY_RAW:
        pts = np.frombuffer(blob, dtype="<f4").reshape(-1, 3).astype(np.float64)
    else:
        if count == 0:
            return np.zeros((0, 3))
        if frame is None or frame.is_empty or not np.isfinite(frame.extent).all():
            raise CorruptionError("quantized geometry without a valid frame")
        lattice = np.frombuffer(blob, dtype="<u2").reshape(-1, 3).astype(np.float64)
        pts = frame.min + lattice * (frame.extent / _LATTICE_MAX)
    if not np.isfinite(pts).all():
        raise CorruptionError("decoded geometry has non-finite coordinates")
    return pts


# --------------------------------------------------------------------------
# Stream coders


def stream_compress(data: bytes, codec: int) -> bytes:
    if codec == STREAM_STORED:
        return bytes(data)
    if codec == STREAM_DEFLATE:
        deflater = zlib.compressobj(9, zlib.DEFLATED, -15)
        return deflater.compress(bytes(data)) + deflater.flush()
    raise ParameterError(f"unknown stream codec id {codec}")


def stream_decompress(data: bytes, codec: int, expected_length: int) -> bytes:
    if codec == STREAM_STORED:
        out = bytes(data)
    elif codec == STREAM_DEFLATE:
        inflater = zlib.decompressobj(-15)
        try:
            out = inflater.decompress(bytes(data), expected_length + 1)
        except zlib.error as exc:
            raise CorruptionError(f"malformed deflate stream: {exc}") from None
        if not inflater.eof or inflater.unused_data or inflater.unconsumed_tail:
            raise CorruptionError("deflate stream is truncated or has trailing data")
    else:
        raise CorruptionError(f"unknown stream codec id {codec}")
    if len(out) != expected_length:
        raise CorruptionError(f"stream decoded to {len(out)} bytes, expected {expected_length}")
    return out


# --------------------------------------------------------------------------
# Container


@dataclass(frozen=True)
class ContainerHeader:
    flags: int
    threshold: float
    source_id: int
    reference_id: int
    map_id: int
    geometry_codec: int
    stream_codec: int
    frame: tuple[float, ...] | None
    n_source_exclusive: int
    n_ref_exclusive: int
    n_map_common: int
    geometry_length: int
    index_length: int
    version: int = VERSION

    @property
    def has_reference(self) -> bool:
        return bool(self.flags & FLAG_REFERENCE)

    @property
    def has_map(self) -> bool:
        return bool(self.flags & FLAG_MAP)

    @property
    def size(self) -> int:
        return header_size(self.geometry_codec)

    @property
    def frame_box(self) -> Aabb | None:
        if self.frame is None:
            return None
        return Aabb(self.frame[:3], self.frame[3:])

    @property
    def error_bound(self) -> float:
        return geometry_error_bound(self.geometry_codec, self.frame_box)

    def pack(self) -> bytes:
        out = _HEAD.pack(MAGIC, self.version, self.flags, self.threshold, self.source_id,
                         self.reference_id, self.map_id, self.geometry_codec, self.stream_codec)
        if self.geometry_codec == GEOMETRY_QUANT16:
            out += _FRAME.pack(*self.frame)
        return out + _TAIL.pack(self.n_source_exclusive, self.n_ref_exclusive,
                                self.n_map_common, self.geometry_length, self.index_length)


@dataclass(frozen=True)
class CompressedContainer:
    header: ContainerHeader
    geometry: bytes
    index: bytes

    def to_bytes(self) -> bytes:
        return self.header.pack() + self.geometry + self.index

    def __len__(self) -> int:
        return self.header.size + len(self.geometry) + len(self.index)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CompressedContainer":
        return parse_container(data)


def parse_container(data: bytes) -> CompressedContainer:
    """Parse and structurally validate a serialized container."""
    data = bytes(data)
    if len(data) < _HEAD.size:
        raise CorruptionError("container is shorter than its header")
    magic, version, flags, threshold, src, ref, map_id, gcodec, scodec = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise CorruptionError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CorruptionError(f"unsupported container version {version}")
    if flags & ~(FLAG_REFERENCE | FLAG_MAP):
        raise CorruptionError(f"unknown flag bits {flags:#04x}")
    if gcodec not in RECORD_SIZE:
        raise CorruptionError(f"unknown geometry codec id {gcodec}")
    if scodec not in (STREAM_STORED, STREAM_DEFLATE):
        raise CorruptionError(f"unknown stream codec id {scodec}")
    offset = _HEAD.size
    frame = None
    if gcodec == GEOMETRY_QUANT16:
        if len(data) < offset + _FRAME.size:
            raise CorruptionError("container truncated inside the frame")
        frame = _FRAME.unpack_from(data, offset)
        offset += _FRAME.size
    if len(data) < offset + _TAIL.size:
        raise CorruptionError("container truncated inside the header")
    n_src, n_ref, n_map, glen, ilen = _TAIL.unpack_from(data, offset)
    offset += _TAIL.size
    if len(data) != offset + glen + ilen:
        raise CorruptionError(
            f"container is {len(data)} bytes, header declares {offset + glen + ilen}")
    if glen != n_src * RECORD_SIZE[gcodec]:
        raise CorruptionError("geometry length does not match the exclusive point count")
    if scodec == STREAM_STORED and ilen != 4 * (n_ref + n_map):
        raise CorruptionError("index length does not match the index counts")
    if not flags & FLAG_REFERENCE and (n_ref or ref):
        raise CorruptionError("reference fields set without the reference flag")
    if not flags & FLAG_MAP and (n_map or map_id):
        raise CorruptionError("map fields set without the map flag")
    header = ContainerHeader(flags, threshold, src, ref, map_id, gcodec, scodec, frame,
                             n_src, n_ref, n_map, glen, ilen, version)
    return CompressedContainer(header, data[offset:offset + glen], data[offset + glen:])


def encode_container(cd: CascadedDiff, *, geometry_codec: int, stream_codec: int,
                     map_id: int | None) -> CompressedContainer:
    if geometry_codec not in RECORD_SIZE:
        raise ParameterError(f"unknown geometry codec id {geometry_codec}")
    if stream_codec not in (STREAM_STORED, STREAM_DEFLATE):
        raise ParameterError(f"unknown stream codec id {stream_codec}")
    frame = None
    if geometry_codec == GEOMETRY_QUANT16:
        box = quantization_frame(cd.source_exclusive_points)
        frame = tuple(np.concatenate([box.min, box.max]).tolist())
    geometry = geometry_encode(cd.source_exclusive_points, geometry_codec,
                               None if frame is None else Aabb(frame[:3], frame[3:]))
    ref_stream = delta_encode(cd.ref_exclusive_indices)
    map_stream = delta_encode(cd.map_common_indices)
    raw_index = np.concatenate([ref_stream.values(), map_stream.values()]).astype("<u4").tobytes()
    index = stream_compress(raw_index, stream_codec)
    flags = (FLAG_REFERENCE if cd.ref_id is not None else 0) | (FLAG_MAP if map_id is not None else 0)
    header = ContainerHeader(
        flags=flags,
        threshold=float(np.float32(cd.threshold)),
        source_id=cd.source_id,
        reference_id=cd.ref_id or 0,
        map_id=map_id or 0,
        geometry_codec=geometry_codec,
        stream_codec=stream_codec,
        frame=frame,
        n_source_exclusive=cd.n_source_exclusive,
        n_ref_exclusive=cd.n_ref_exclusive,
        n_map_common=cd.n_map_common,
        geometry_length=len(geometry),
        index_length=len(index),
    )
    return CompressedContainer(header, geometry, index)


def decode_container(container: CompressedContainer) -> CascadedDiff:
    h = container.header
    points = geometry_decode(container.geometry, h.geometry_codec, h.frame_box,
                             h.n_source_exclusive)
    n_values = h.n_ref_exclusive + h.n_map_common
    raw = stream_decompress(container.index, h.stream_codec, 4 * n_values)
    values = np.frombuffer(raw, dtype="<u4")
    ref_idx = delta_decode(DeltaStream.from_values(values[:h.n_ref_exclusive]))
    map_idx = delta_decode(DeltaStream.from_values(values[h.n_ref_exclusive:]))
    return CascadedDiff(
        source_exclusive_points=as_points(points),
        ref_exclusive_indices=ref_idx,
        map_common_indices=map_idx,
        threshold=float(h.threshold),
        ref_id=h.reference_id if h.has_reference else None,
        source_id=h.source_id,
    )


# --------------------------------------------------------------------------
# Pipeline


@dataclass(frozen=True)
class CodecConfig:
    d: float = 0.1
    geometry_codec: int = GEOMETRY_QUANT16
    stream_codec: int = STREAM_DEFLATE
    max_association_distance: float = 5.0

    def __post_init__(self):
        if not self.d > 0:
            raise ParameterError(f"distance threshold must be positive, got {self.d!r}")
        if self.max_association_distance < 0:
            raise ParameterError("max_association_distance must be nonnegative")
        if self.geometry_codec not in RECORD_SIZE:
            raise ParameterError(f"unknown geometry codec id {self.geometry_codec}")
        if self.stream_codec not in (STREAM_STORED, STREAM_DEFLATE):
            raise ParameterError(f"unknown stream codec id {self.stream_codec}")


LOSSLESS = CodecConfig(geometry_codec=GEOMETRY_RAW, stream_codec=STREAM_STORED)


class _Stopwatch:
    def __init__(self, timings):
        self.timings = timings
        self.t = time.perf_counter()

    def lap(self, stage):
        now = time.perf_counter()
        if self.timings is not None:
            self.timings[stage] = self.timings.get(stage, 0.0) + (now - self.t) * 1e6
        self.t = now


def compress(source: PointCloud, refstore=None, map=None, config: CodecConfig = CodecConfig(),
             *, reference: PointCloud | None = None, timings: dict | None = None
             ) -> CompressedContainer:
    """Compress ``source`` against its associated reference cloud and the map.

    ``reference`` bypasses association when given.  ``timings``, if a
    dict, receives per-stage wall time in microseconds.
    """
    clock = _Stopwatch(timings)
    if reference is None and refstore is not None and len(source):
        ref_id = refstore.associate(source.pose, config.max_association_distance)
        if ref_id is not None:
            reference = refstore.get(ref_id)
    if not len(source):
        reference = None
    clock.lap("associate")
    tree = map.tree if map is not None and len(source) else None
    cd = cascaded_diff(source, reference, tree, config.d)
    clock.lap("diff")
    container = encode_container(cd, geometry_codec=config.geometry_codec,
                                 stream_codec=config.stream_codec,
                                 map_id=map.id if tree is not None else None)
    clock.lap("encode")
    return container


def decompress(container, refstore=None, map=None, *, timings: dict | None = None) -> PointCloud:
    """Rebuild a cloud from a container (or its bytes)."""
    clock = _Stopwatch(timings)
    if not isinstance(container, CompressedContainer):
        container = parse_container(container)
    h = container.header
    cd = decode_container(container)
    clock.lap("decode")
    ref = None
    if h.has_reference:
        if refstore is None:
            raise MismatchError(f"container needs reference cloud {h.reference_id}")
        try:
            ref = refstore.get(h.reference_id)
        except NotFoundError:
            raise NotFoundError(f"reference cloud {h.reference_id} not in dataset") from None
    map_points = None
    if h.has_map:
        if map is None:
            raise MismatchError(f"container needs map {h.map_id:#010x}")
        if map.id != h.map_id:
            raise MismatchError(f"container needs map {h.map_id:#010x}, got {map.id:#010x}")
        map_points = map.points
    cloud = reconstruct(ref, cd, map_points)
    clock.lap("reconstruct")
    return cloud


def raw_size(cloud) -> int:
    return 12 * len(cloud)
