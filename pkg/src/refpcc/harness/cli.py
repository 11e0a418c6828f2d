"""Reference-based point-cloud compression: generate, compress, decompress, evaluate, bench.

Exit status: 0 on success, 1 if any file (or the whole run) failed, 2 on
usage errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .. import io
from ..codec import GEOMETRY_CODECS, STREAM_CODECS, CodecConfig, parse_container
from ..errors import CodecError
from ..metrics import compression_report, format_table
from ..refstore import DEFAULT_MAX_ASSOCIATION_DISTANCE, load_dataset, load_map
from . import bench, pipeline
from .scene import SceneSpec, gen_scene

log = logging.getLogger("refpcc")


def write_scene(scene, out: Path) -> None:
    """Lay a generated scene out as reference/, source/ and map.ply."""
    for sub, clouds, prefix in (("reference", scene.reference, "ref"),
                                ("source", scene.source, "src")):
        d = out / sub
        d.mkdir(parents=True, exist_ok=True)
        records = []
        for i, cloud in enumerate(clouds):
            name = f"{prefix}_{i:05d}.ply"
            io.write_cloud(cloud, d / name)
            records.append((cloud.id, cloud.pose, name))
        io.write_manifest(records, d / pipeline.MANIFEST_NAME)
    io.write_cloud(scene.map.cloud, out / "map.ply")
    fractions = scene.dynamic_fraction
    info = scene.spec.to_text()
    info += f"dynamic_fraction_max={max(fractions) if fractions else 0.0}\n"
    info += f"dynamic_fraction_mean={sum(fractions) / max(len(fractions), 1)}\n"
    (out / "scene.txt").write_text(info, encoding="utf-8")


def cmd_gen(args) -> int:
    spec = SceneSpec.load(args.spec)
    out = Path(args.out)
    write_scene(gen_scene(spec), out)
    print(f"wrote scene to {out}")
    return 0


def _shared(args):
    refstore = load_dataset(args.refset) if args.refset else None
    map_cloud = load_map(args.map) if args.map else None
    return refstore, map_cloud


def _report_outcomes(outcomes) -> int:
    failed = [o for o in outcomes if not o.ok]
    for o in failed:
        print(f"error: {o.name}: {o.error}", file=sys.stderr)
    print(f"{len(outcomes) - len(failed)} ok, {len(failed)} failed")
    return 1 if failed else 0


def cmd_compress(args) -> int:
    config = CodecConfig(d=args.d, geometry_codec=GEOMETRY_CODECS[args.geometry],
                         stream_codec=STREAM_CODECS[args.stream],
                         max_association_distance=args.max_association_distance)
    refstore, map_cloud = _shared(args)
    return _report_outcomes(pipeline.compress_dir(args.input, args.out, refstore, map_cloud,
                                                  config, args.jobs))


def cmd_decompress(args) -> int:
    refstore, map_cloud = _shared(args)
    return _report_outcomes(pipeline.decompress_dir(args.input, args.out, refstore, map_cloud,
                                                    args.jobs, args.format))


def cmd_eval(args) -> int:
    orig_dir, recon_dir = Path(args.orig), Path(args.recon)
    containers = Path(args.containers) if args.containers else None
    items = pipeline.list_sources(orig_dir)
    reports, failures = [], 0
    for item in items:
        try:
            original = io.read_cloud(item.path, cloud_id=item.cloud_id, pose=item.pose)
            recon_path = next((recon_dir / (item.name + s) for s in io.CLOUD_SUFFIXES
                               if (recon_dir / (item.name + s)).exists()), None)
            if recon_path is None:
                raise FileNotFoundError(f"no reconstruction for {item.name} in {recon_dir}")
            recon = io.read_cloud(recon_path)
            container = None
            if containers is not None:
                cpath = containers / (item.name + pipeline.CONTAINER_SUFFIX)
                container = parse_container(cpath.read_bytes())
            reports.append(compression_report(original, container, recon, name=item.name))
        except (CodecError, OSError) as exc:
            failures += 1
            print(f"error: {item.name}: {exc}", file=sys.stderr)
    Path(args.report).write_text("\n".join(r.to_record() for r in reports), encoding="utf-8")
    print(format_table(reports))
    return 1 if failures else 0


def cmd_bench(args) -> int:
    spec = SceneSpec.load(args.spec)
    config = CodecConfig(d=args.d, geometry_codec=GEOMETRY_CODECS[args.geometry],
                         stream_codec=STREAM_CODECS[args.stream])
    axes = [a.strip() for a in args.axes.split(",") if a.strip()]
    scene = gen_scene(spec)
    results, extra = [], ""
    kw = {"psnr": not args.no_psnr}
    if "d" in axes:
        results += bench.sweep_d(scene, bench.parse_range(args.sweep_d), config, **kw)
    if "noise" in axes:
        results += bench.sweep_spec(spec, "noise_sigma", bench.parse_range(args.sweep_noise),
                                    config, **kw)
    if "channels" in axes:
        results += bench.sweep_spec(spec, "channels", [int(c) for c in
                                    bench.parse_range(args.sweep_channels)], config, **kw)
    if "strawman" in axes:
        results += bench.strawman(scene, config, **kw)
    if "association" in axes:
        results += bench.association_offset(scene, config=config, **kw)
    if "variants" in axes:
        extra = bench.variants_record(bench.bench_diff_variants(bench.scene_pairs(scene), args.d))
    text = "\n".join(r.to_record() for r in results) + ("\n" + extra if extra else "")
    Path(args.report).write_text(text, encoding="utf-8")
    for r in results:
        print(f"{r.axis}={r.value}: median ratio {r.median_ratio:.2f}, "
              f"median chamfer {r.median_chamfer:.5f} m")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="refpcc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="materialize a synthetic scene")
    g.add_argument("--spec", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen)

    def shared(sp):
        sp.add_argument("--in", dest="input", required=True)
        sp.add_argument("--refset", help="reference manifest")
        sp.add_argument("--map", help="map point cloud")
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--out", required=True)

    c = sub.add_parser("compress", help="compress a directory of clouds")
    shared(c)
    c.add_argument("-d", type=float, default=0.1, help="distance threshold (m)")
    c.add_argument("--geometry", choices=sorted(GEOMETRY_CODECS), default="quant16")
    c.add_argument("--stream", choices=sorted(STREAM_CODECS), default="deflate")
    c.add_argument("--max-association-distance", type=float,
                   default=DEFAULT_MAX_ASSOCIATION_DISTANCE)
    c.set_defaults(fn=cmd_compress)

    dc = sub.add_parser("decompress", help="reconstruct containers")
    shared(dc)
    dc.add_argument("--format", choices=io.FORMATS, default="ply")
    dc.set_defaults(fn=cmd_decompress)

    e = sub.add_parser("eval", help="quality reports for original/reconstruction pairs")
    e.add_argument("--orig", required=True)
    e.add_argument("--recon", required=True)
    e.add_argument("--containers", help="directory of containers, for compression ratios")
    e.add_argument("--report", required=True)
    e.set_defaults(fn=cmd_eval)

    b = sub.add_parser("bench", help="parameter sweeps on a generated scene")
    b.add_argument("--spec", required=True)
    b.add_argument("--sweep-d", default="0.1:0.5:0.1")
    b.add_argument("--sweep-noise", default="0,0.1,0.3,0.5")
    b.add_argument("--sweep-channels", default="32,64,128")
    b.add_argument("--axes", default="d,noise,channels,strawman,association,variants")
    b.add_argument("-d", type=float, default=0.1, help="threshold for non-d sweeps")
    b.add_argument("--geometry", choices=sorted(GEOMETRY_CODECS), default="quant16")
    b.add_argument("--stream", choices=sorted(STREAM_CODECS), default="deflate")
    b.add_argument("--no-psnr", action="store_true")
    b.add_argument("--report", required=True)
    b.set_defaults(fn=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be at least 1")
    try:
        return args.fn(args)
    except (CodecError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
