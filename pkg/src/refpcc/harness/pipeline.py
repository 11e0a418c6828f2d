"""Batch compression over directories with a fixed worker pool.

Workers share the reference dataset and map read-only.  Results are
returned in input order whatever the completion order, so the output of
``jobs=8`` is byte-identical to ``jobs=1``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .. import io
from ..codec import CodecConfig, compress, decompress, parse_container
from ..errors import CodecError
from ..geom import IDENTITY_POSE
from ..refstore import ReferenceDataset, MapCloud

log = logging.getLogger(__name__)

CONTAINER_SUFFIX = ".djv"
MANIFEST_NAME = "manifest.csv"


@dataclass
class Item:
    name: str
    path: Path
    cloud_id: int
    pose: object = IDENTITY_POSE


@dataclass
class Outcome:
    name: str
    result: object = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def list_sources(in_dir) -> list[Item]:
    """Clouds of ``in_dir``: from its manifest if present, else every cloud file.

    Without a manifest, ids follow sorted file order and poses are identity.
    """
    in_dir = Path(in_dir)
    manifest = in_dir / MANIFEST_NAME
    if manifest.exists():
        return [Item(Path(r.path).stem, in_dir / r.path, r.id, r.pose)
                for r in io.read_manifest(manifest)]
    files = sorted(p for p in in_dir.iterdir() if p.suffix.lower() in io.CLOUD_SUFFIXES)
    log.warning("%s has no %s; using identity poses", in_dir, MANIFEST_NAME)
    return [Item(p.stem, p, i) for i, p in enumerate(files)]


def run_pool(fn, items, jobs: int = 1) -> list[Outcome]:
    """Apply ``fn`` to every item; per-item codec and OS errors are captured."""

    def guarded(item):
        try:
            return Outcome(item.name, fn(item))
        except (CodecError, OSError, ValueError) as exc:
            return Outcome(item.name, error=f"{type(exc).__name__}: {exc}")

    if jobs <= 1:
        return [guarded(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(guarded, items))


def compress_dir(in_dir, out_dir, refstore: ReferenceDataset | None, map: MapCloud | None,
                 config: CodecConfig, jobs: int = 1) -> list[Outcome]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def work(item: Item):
        cloud = io.read_cloud(item.path, cloud_id=item.cloud_id, pose=item.pose)
        blob = compress(cloud, refstore, map, config).to_bytes()
        target = out_dir / (item.name + CONTAINER_SUFFIX)
        target.write_bytes(blob)
        return target

    return run_pool(work, list_sources(in_dir), jobs)


def decompress_dir(in_dir, out_dir, refstore: ReferenceDataset | None, map: MapCloud | None,
                   jobs: int = 1, fmt: str = "ply") -> list[Outcome]:
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    items = [Item(p.stem, p, 0) for p in sorted(in_dir.glob("*" + CONTAINER_SUFFIX))]

    def work(item: Item):
        cloud = decompress(parse_container(item.path.read_bytes()), refstore, map)
        target = out_dir / f"{item.name}.{fmt}"
        io.write_cloud(cloud, target, fmt)
        return target

    return run_pool(work, items, jobs)
