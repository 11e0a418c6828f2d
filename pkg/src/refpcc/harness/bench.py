"""Benchmark sweeps over the synthetic generator.

Each sweep returns :class:`BenchResult` records: the per-cloud quality
reports plus medians.  Records serialize to blocks of ``key=value`` lines.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from ..codec import CodecConfig, compress, decompress
from ..diffcore import coarse_diff, fine_diff, hybrid_diff
from ..metrics import QualityReport, compression_report
from ..refstore import ReferenceDataset
from .scene import Scene, SceneSpec, gen_scene


@dataclass
class BenchResult:
    axis: str
    value: object
    config: dict
    reports: list[QualityReport] = field(default_factory=list)

    def _median(self, attr):
        vals = [getattr(r, attr) for r in self.reports if getattr(r, attr) is not None]
        return statistics.median(vals) if vals else None

    @property
    def median_ratio(self):
        return self._median("compression_ratio")

    @property
    def median_chamfer(self):
        return self._median("chamfer_sym")

    @property
    def median_psnr(self):
        return self._median("psnr_p2plane")

    @property
    def median_size(self):
        return self._median("compressed_bytes")

    def to_record(self) -> str:
        head = {"kind": "aggregate", "axis": self.axis, "value": self.value,
                "n_clouds": len(self.reports), "median_ratio": self.median_ratio,
                "median_chamfer": self.median_chamfer, "median_psnr": self.median_psnr,
                "median_bytes": self.median_size}
        head.update({f"config_{k}": v for k, v in self.config.items()})
        blocks = ["\n".join(f"{k}={'none' if v is None else v}" for k, v in head.items())]
        for r in self.reports:
            blocks.append(f"kind=cloud\naxis={self.axis}\nvalue={self.value}\n"
                          + r.to_record().rstrip("\n"))
        return "\n\n".join(blocks) + "\n"


def _config_echo(spec: SceneSpec, config: CodecConfig, **extra) -> dict:
    echo = {"seed": spec.seed, "channels": spec.channels, "noise_sigma": spec.noise_sigma,
            "n_frames": spec.n_frames, "d": config.d, "geometry": config.geometry_codec,
            "stream": config.stream_codec}
    echo.update(extra)
    return echo


def evaluate_scene(scene: Scene, config: CodecConfig, *, mode: str = "associated",
                   use_map: bool = True, psnr: bool = True, frames=None) -> list[QualityReport]:
    """Compress and reconstruct every source frame, returning quality reports.

    ``mode`` selects the reference: ``associated`` (nearest reference-day
    pose), ``previous`` (the previous source frame), ``offset:N`` (the
    reference-day frame N positions ahead of the nearest) or ``none``.
    """
    refstore = ReferenceDataset.from_clouds(scene.reference)
    map_cloud = scene.map if use_map else None
    reports = []
    indices = range(len(scene.source)) if frames is None else frames
    for k in indices:
        source = scene.source[k]
        reference = None
        store = refstore
        if mode == "previous":
            if k == 0:
                continue
            reference, store = scene.source[k - 1], None
        elif mode.startswith("offset:"):
            nearest = refstore.associate(source.pose, config.max_association_distance)
            if nearest is None:
                continue
            j = refstore.ids.index(nearest) + int(mode.split(":")[1])
            if not 0 <= j < len(scene.reference):
                continue
            reference, store = scene.reference[j], None
        elif mode == "none":
            store = None
        elif mode != "associated":
            raise ValueError(f"unknown reference mode {mode!r}")
        timings: dict = {}
        container = compress(source, store, map_cloud, config, reference=reference,
                             timings=timings)
        blob = container.to_bytes()
        lookup = ReferenceDataset.from_clouds([reference]) if reference is not None else refstore
        recon = decompress(blob, lookup, map_cloud, timings=timings)
        report = compression_report(source, container, recon, timings, name=f"frame{k:04d}")
        if not psnr:
            report.psnr_p2plane = None
        reports.append(report)
    return reports


def sweep_d(scene: Scene, ds, config: CodecConfig = CodecConfig(), **kw) -> list[BenchResult]:
    out = []
    for d in ds:
        cfg = CodecConfig(d=d, geometry_codec=config.geometry_codec,
                          stream_codec=config.stream_codec,
                          max_association_distance=config.max_association_distance)
        out.append(BenchResult("d", d, _config_echo(scene.spec, cfg),
                               evaluate_scene(scene, cfg, **kw)))
    return out


def sweep_spec(spec: SceneSpec, axis: str, values, config: CodecConfig = CodecConfig(),
               **kw) -> list[BenchResult]:
    """Regenerate the scene for each value of a spec field and evaluate it."""
    out = []
    for v in values:
        scene = gen_scene(spec.replace(**{axis: v}))
        out.append(BenchResult(axis, v, _config_echo(scene.spec, config),
                               evaluate_scene(scene, config, **kw)))
    return out


def strawman(scene: Scene, config: CodecConfig = CodecConfig(), use_map: bool = False,
             **kw) -> list[BenchResult]:
    """Spatially associated reference versus the previous frame."""
    frames = range(1, len(scene.source))
    out = []
    for mode in ("previous", "associated"):
        out.append(BenchResult("reference", mode,
                               _config_echo(scene.spec, config, use_map=use_map),
                               evaluate_scene(scene, config, mode=mode, use_map=use_map,
                                              frames=frames, **kw)))
    return out


def association_offset(scene: Scene, offsets=(0, 1, 2), config: CodecConfig = CodecConfig(),
                       **kw) -> list[BenchResult]:
    return [BenchResult("association_offset", o, _config_echo(scene.spec, config),
                        evaluate_scene(scene, config, mode=f"offset:{o}", **kw))
            for o in offsets]


@dataclass
class VariantRow:
    pair: int
    n_query: int
    n_other: int
    variant: str
    exclusive: int
    seconds: float


def bench_diff_variants(pairs, d: float) -> list[VariantRow]:
    """Fine (KD-tree only), coarse (grid only) and hybrid diffs on the same pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("need at least one cloud pair")
    rows = []
    for i, (a, b) in enumerate(pairs):
        for name, fn in (("fine", fine_diff), ("coarse", coarse_diff), ("hybrid", hybrid_diff)):
            t = time.perf_counter()
            res = fn(a, b, d)
            rows.append(VariantRow(i, len(a), len(b), name, res.n_exclusive,
                                   time.perf_counter() - t))
    return rows


def variants_record(rows: list[VariantRow]) -> str:
    blocks = []
    for r in rows:
        blocks.append("\n".join(f"{k}={v}" for k, v in
                                {"kind": "diff_variant", **r.__dict__}.items()))
    totals = {}
    for r in rows:
        totals.setdefault(r.variant, [0, 0.0])
        totals[r.variant][0] += r.exclusive
        totals[r.variant][1] += r.seconds
    for name, (exc, sec) in totals.items():
        blocks.append(f"kind=diff_variant_total\nvariant={name}\nexclusive={exc}\n"
                      f"seconds={sec:.6f}")
    return "\n\n".join(blocks) + "\n"


def scene_pairs(scene: Scene):
    """(source frame, associated reference) pairs of a scene."""
    refstore = ReferenceDataset.from_clouds(scene.reference)
    for src in scene.source:
        ref_id = refstore.associate(src.pose)
        if ref_id is not None:
            yield src, refstore.get(ref_id)


def parse_range(text: str) -> list[float]:
    """``start:stop:step`` inclusive of stop, or a comma list."""
    if ":" in text:
        start, stop, step = (float(v) for v in text.split(":"))
        if step <= 0 or stop < start:
            raise ValueError(f"bad range {text!r}")
        n = int(round((stop - start) / step)) + 1
        return [round(start + i * step, 10) for i in range(n)]
    return [float(v) for v in text.split(",") if v.strip()]
