"""Command-line front end: ``p2dqa compute|evaluate|sweep|synth``.

Exit status: 0 success, 1 runtime/data error (including partial failures),
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .benchmark import (
    ManifestError,
    ScoreCache,
    StimulusRecord,
    evaluate_manifest,
    read_manifest,
    sweep_k,
    sweep_variants,
    write_manifest,
    write_sweep_csv,
)
from .cloud import COLOR_MATRICES, load_ply, save_ply
from .metrics import METRIC_IDS, POOLINGS, MetricConfig, compute_metrics
from .synth import COLOR_PATTERNS, DEGRADATIONS, SHAPES, DegradationSpec, degrade, make_cloud, pseudo_mos

log = logging.getLogger("p2dqa")

DEFAULT_EVAL_METRICS = ("p2d-g", "p2d-y", "p2d-jgy", "d1-psnr", "y-psnr")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _metric_list(text):
    ids = [t.strip() for t in text.split(",") if t.strip()]
    if not ids:
        raise argparse.ArgumentTypeError("empty metric list")
    unknown = [m for m in ids if m not in METRIC_IDS]
    if unknown:
        raise argparse.ArgumentTypeError(
            f"unknown metric id(s) {', '.join(unknown)}; known: {', '.join(METRIC_IDS)}"
        )
    return ids


def _int_list(text):
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("K values must be positive integers")
    return vals


def _str_list(choices):
    def parse(text):
        vals = [t.strip().lower() for t in text.split(",") if t.strip()]
        bad = [v for v in vals if v not in choices]
        if not vals or bad:
            raise argparse.ArgumentTypeError(f"choose from {', '.join(choices)}")
        return vals
    return parse


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _add_metric_options(p):
    p.add_argument("--k", type=_positive_int, help="neighbourhood size for every P2D metric")
    p.add_argument("--pooling", choices=POOLINGS, default="avg",
                   help="geometry/color fusion for joint metrics")
    p.add_argument("--color-matrix", choices=sorted(COLOR_MATRICES), default="bt709")
    p.add_argument("--threads", type=_positive_int, default=1, help="worker cap")


def _config(args):
    cfg = MetricConfig(fusion_pooling=args.pooling, color_matrix=args.color_matrix)
    if args.k is not None:
        cfg = cfg.with_k(args.k)
    return cfg


def build_parser():
    parser = argparse.ArgumentParser(prog="p2dqa", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compute", help="score one reference/degraded pair")
    p.add_argument("--ref", required=True)
    p.add_argument("--deg", required=True)
    p.add_argument("--metric", required=True, type=_metric_list,
                   help="comma-separated metric ids")
    _add_metric_options(p)
    p.add_argument("--format", choices=("json", "text"), default="text")

    p = sub.add_parser("evaluate", help="fit metrics to MOS over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--metrics", type=_metric_list, default=list(DEFAULT_EVAL_METRICS))
    p.add_argument("--group-by", choices=("codec_tag", "content_tag", "none"),
                   default="codec_tag")
    p.add_argument("--out", required=True, help="JSON report path; the table goes next to it")
    p.add_argument("--cache", help="JSON file caching raw scores between runs")
    _add_metric_options(p)

    p = sub.add_parser("sweep", help="correlation versus K, color component or pooling")
    p.add_argument("--manifest", required=True)
    p.add_argument("--metric", required=True, choices=METRIC_IDS, metavar="ID")
    axis = p.add_mutually_exclusive_group(required=True)
    axis.add_argument("--k", dest="k_values", type=_int_list)
    axis.add_argument("--variant", type=_str_list(("y", "u", "v", "yuv")))
    axis.add_argument("--pooling", dest="poolings", type=_str_list(POOLINGS))
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--color-matrix", choices=sorted(COLOR_MATRICES), default="bt709")
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--cache")

    p = sub.add_parser("synth", help="write a synthetic reference and degraded cloud(s)")
    p.add_argument("--shape", choices=SHAPES, default="sphere")
    p.add_argument("--n", type=_positive_int, default=1000)
    p.add_argument("--color", choices=COLOR_PATTERNS, default="gradient")
    p.add_argument("--value", type=int, default=128, help="gray level for --color constant")
    p.add_argument("--degrade", action="append", required=True, metavar="KIND:MAG[,MAG...]",
                   help=f"kinds: {', '.join(DEGRADATIONS)}; repeatable")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-ref", required=True)
    p.add_argument("--out-deg", required=True)
    p.add_argument("--format", choices=("ascii", "binary"), default="binary")
    p.add_argument("--emit-manifest", help="write manifest rows with a pseudo-MOS")
    p.add_argument("--append-manifest", action="store_true")
    p.add_argument("--codec-tag", help="codec tag for manifest rows (default: degradation kind)")
    return parser


def _fmt(v):
    return "-" if v is None else f"{v:.10g}"


def cmd_compute(args):
    cfg = _config(args)
    ref, deg = load_ply(args.ref), load_ply(args.deg)
    results = compute_metrics(ref, deg, args.metric, cfg, workers=args.threads)
    if args.format == "json":
        doc = {"ref": args.ref, "deg": args.deg, "config": cfg.to_dict(),
               "results": [r.to_dict() for r in results.values()]}
        print(json.dumps(doc, indent=2))
    else:
        print(f"ref: {args.ref} ({len(ref)} points)")
        print(f"deg: {args.deg} ({len(deg)} points)")
        print(f"config: k_geometry={cfg.k_geometry} k_color={cfg.k_color} "
              f"k_joint={cfg.k_joint} pooling={cfg.fusion_pooling} "
              f"color_matrix={cfg.color_matrix}")
        for r in results.values():
            print(f"{r.name:<12} {_fmt(r.value):>16}  ab={_fmt(r.directed_ab)}  "
                  f"ba={_fmt(r.directed_ba)}  [{r.orientation}]")
            for w in r.metadata.get("warnings", []):
                print(f"  warning: {w}")
    return EXIT_OK


def _report_failures(failures):
    for f in failures:
        what = f" [{f['metric']}]" if f["metric"] else ""
        print(f"error: failed: {f['stimulus']}{what}: {f['error']}", file=sys.stderr)


def cmd_evaluate(args):
    cfg = _config(args)
    records = _load_manifest(args.manifest)
    cache = ScoreCache(args.cache)
    group_by = None if args.group_by == "none" else args.group_by
    report = evaluate_manifest(records, args.metrics, cfg, group_by, args.threads, cache)
    cache.save()
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    table = report.format_table()
    with open(os.path.splitext(args.out)[0] + ".txt", "w", encoding="utf-8") as fh:
        fh.write(table)
    sys.stdout.write(table)
    _report_failures(report.failures)
    return EXIT_RUNTIME if report.failures else EXIT_OK


def _load_manifest(path):
    try:
        return read_manifest(path)
    except (ManifestError, FileNotFoundError) as exc:
        raise UsageError(str(exc)) from None


def cmd_sweep(args):
    cfg = MetricConfig(color_matrix=args.color_matrix)
    records = _load_manifest(args.manifest)
    cache = ScoreCache(args.cache)
    if args.k_values:
        rows, failures = sweep_k(records, args.metric, args.k_values, cfg, args.threads, cache)
    elif args.variant:
        rows, failures = sweep_variants(records, args.metric, variants=args.variant, cfg=cfg,
                                        threads=args.threads, cache=cache)
    else:
        rows, failures = sweep_variants(records, args.metric, poolings=args.poolings, cfg=cfg,
                                        threads=args.threads, cache=cache)
    cache.save()
    write_sweep_csv(rows, args.out)
    for r in rows:
        for w in r.warnings:
            log.warning("%s: %s", r.label, w)
    _report_failures(failures)
    return EXIT_RUNTIME if failures else EXIT_OK


def _degradations(items, seed):
    specs = []
    for item in items:
        kind, sep, mags = item.partition(":")
        if not sep:
            raise UsageError(f"--degrade expects KIND:MAG[,MAG...], got {item!r}")
        for mag in mags.split(","):
            try:
                specs.append(DegradationSpec(kind.strip(), float(mag), seed + 1))
            except ValueError as exc:
                raise UsageError(f"--degrade {item!r}: {exc}") from None
    return specs


def cmd_synth(args):
    specs = _degradations(args.degrade, args.seed)
    ref = make_cloud(args.shape, args.n, args.color, args.seed, args.value)
    save_ply(ref, args.out_ref, args.format)
    stem, ext = os.path.splitext(args.out_deg)
    rows = []
    for spec in specs:
        path = args.out_deg if len(specs) == 1 else f"{stem}_{spec.kind}_{spec.magnitude:g}{ext or '.ply'}"
        save_ply(degrade(ref, spec), path, args.format)
        rows.append((path, spec))
    if args.emit_manifest:
        base = os.path.dirname(os.path.abspath(args.emit_manifest))
        records = [
            StimulusRecord(
                os.path.relpath(os.path.abspath(args.out_ref), base),
                os.path.relpath(os.path.abspath(path), base),
                pseudo_mos(spec),
                args.codec_tag or spec.kind,
                args.shape,
            )
            for path, spec in rows
        ]
        write_manifest(args.emit_manifest, records, append=args.append_manifest)
    return EXIT_OK


COMMANDS = {"compute": cmd_compute, "evaluate": cmd_evaluate, "sweep": cmd_sweep,
            "synth": cmd_synth}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"p2dqa {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"p2dqa {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
