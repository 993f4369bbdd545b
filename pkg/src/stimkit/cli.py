"""Command-line entry point: ``stimkit <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure (the failing path or clip is
named on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .augment import AugmentParams, TransformKind, expand_dataset
from .core import ClassLabel
from .dataset import (DatasetError, DatasetManifest, SplitRatios, atomic_write_text, compute_stats,
                      dump_json, load_manifest, read_segments, save_manifest, scan, split,
                      split_summary, trim_dataset)
from .masking import MaskingConfig, NoDetectionPolicy, mask_dataset
from .metrics import evaluate, read_predictions
from .tubemask import PatchSpec, gen_tube_mask, patch_grid

log = logging.getLogger("stimkit")

FILE_FORMATS = """\
file formats:
  clip directory   frame_000000.png, frame_000001.png, ... plus clip.json
                   {"fps": f, "width": n, "height": n, "frame_count": n,
                    "label": "ArmFlapping"|"HeadBanging"|"Spinning"}
  dataset root     <root>/<ClassLabel>/<clip_id>/ clip directories
  manifest         {"schema_version": 1, "entries": [{clip_id, path, label,
                   frame_count, width, height, fps, split, provenance}, ...]}
                   paths are relative to the manifest's directory
  config file      key=value lines named after long flags (--config)
"""


class UsageError(Exception):
    pass


def parse_size(text: str) -> tuple[int, int]:
    """'224x224' -> (224, 224); first number is width."""
    try:
        w, h = (int(p) for p in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError(f"size components must be >= 1, got {text!r}")
    return w, h


def write_manifest_at(manifest: DatasetManifest, path: Path) -> DatasetManifest:
    """Save with entry paths rewritten relative to ``path``'s directory."""
    path = Path(path)
    target = path.parent.resolve()
    entries = []
    for e in manifest.entries:
        abs_path = manifest.resolve(e).resolve()
        rel = Path(os.path.relpath(abs_path, target)).as_posix()
        entries.append(replace(e, path=rel))
    rebased = DatasetManifest(entries, manifest.schema_version, base_dir=path.parent)
    save_manifest(rebased, path)
    return rebased


def class_count_line(manifest: DatasetManifest) -> str:
    counts = manifest.class_counts()
    return " ".join(f"{lab.name}={counts[lab]}" for lab in ClassLabel) + f" total={len(manifest)}"


def delimited(rows: Sequence[Sequence], delimiter: str = ",") -> str:
    buf = io.StringIO()
    csv.writer(buf, delimiter=delimiter, lineterminator="\n").writerows(rows)
    return buf.getvalue()


# ----------------------------------------------------------------------------
# subcommands


def cmd_scan(args) -> int:
    manifest = scan(args.root, jobs=args.jobs)
    out = args.output or Path(args.root) / "manifest.json"
    write_manifest_at(manifest, out)
    print(class_count_line(manifest))
    return 0


def cmd_trim(args) -> int:
    manifest = load_manifest(args.manifest)
    segments = read_segments(args.segments)
    result = trim_dataset(manifest, segments, args.out, jobs=args.jobs)
    write_manifest_at(result, args.output or Path(args.out) / "manifest.json")
    print(class_count_line(result))
    return 0


def cmd_mask(args) -> int:
    manifest = load_manifest(args.manifest)
    config = MaskingConfig(args.size, NoDetectionPolicy(args.on_no_detection))
    result, reports, failures = mask_dataset(manifest, args.detections, args.out, config, jobs=args.jobs)
    out = Path(args.out)
    write_manifest_at(result, args.output or out / "manifest.json")
    report = {
        "target_size": list(config.target_size),
        "on_no_detection": config.on_no_detection.value,
        "clips": [r.to_dict() for r in reports],
        "failures": [{"clip_id": c, "error": m} for c, m in failures],
    }
    atomic_write_text(out / "mask_report.json", dump_json(report))
    hits = sum(r.policy_hits for r in reports)
    print(class_count_line(result) + f" no_detection_frames={hits}")
    for clip_id, msg in failures:
        print(f"error: clip {clip_id}: {msg}", file=sys.stderr)
    return 1 if failures else 0


def cmd_augment(args) -> int:
    if args.all:
        kinds = tuple(TransformKind)
    elif args.transform:
        kinds = tuple(TransformKind(k) for k in args.transform)
    else:
        raise UsageError("augment: choose --all or at least one --transform")
    params = AugmentParams(alpha=args.alpha, theta_deg=args.theta, beta=args.beta)
    manifest = load_manifest(args.manifest)
    result, failures = expand_dataset(manifest, args.out, params, kinds, jobs=args.jobs)
    write_manifest_at(result, args.output or Path(args.out) / "manifest.json")
    print(class_count_line(result))
    for f in failures:
        print(f"error: clip {f.clip_id}: {f.message}", file=sys.stderr)
    if failures:
        print(f"{len(failures)} of {len(manifest)} clips failed", file=sys.stderr)
    return 1 if failures else 0


def cmd_split(args) -> int:
    ratios = SplitRatios.parse(args.ratios, seed=args.seed)
    manifest = load_manifest(args.manifest)
    result = split(manifest, ratios, force=args.force)
    src = Path(args.manifest)
    out = args.output or src.with_name(f"{src.stem}_split.json")
    write_manifest_at(result, out)
    summary = split_summary(result)
    rows = [["class", "train", "val", "test"]]
    rows += [[lab, c["train"], c["val"], c["test"]] for lab, c in summary.items()]
    sys.stdout.write(delimited(rows))
    if args.figure:
        from .plotting import plot_split_counts
        plot_split_counts(summary, args.figure)
    return 0


def cmd_stats(args) -> int:
    manifest = load_manifest(args.manifest)
    table = compute_stats(manifest)
    src = Path(args.manifest)
    json_out = args.output or src.with_name(f"{src.stem}_stats.json")
    csv_out = args.csv or json_out.with_suffix(".csv")
    rows = table.rows()
    atomic_write_text(json_out, dump_json(table.to_dict()))
    atomic_write_text(csv_out, delimited(rows))
    sys.stdout.write(delimited(rows, delimiter="\t"))
    if not args.no_figure:
        from .plotting import plot_class_summary
        labels = list(table.classes)
        plot_class_summary(
            labels,
            [table[lab].n_videos for lab in labels],
            [table[lab].avg_frames for lab in labels],
            [table[lab].avg_duration for lab in labels],
            args.figure or json_out.with_suffix(".png"),
        )
    return 0


def cmd_eval(args) -> int:
    records = read_predictions(args.predictions)
    report = evaluate(records)
    src = Path(args.predictions)
    json_out = args.output or src.with_name(f"{src.stem}_report.json")
    atomic_write_text(json_out, dump_json(report.to_dict()))
    sys.stdout.write(report.to_text())
    if not args.no_figure:
        from .plotting import plot_confusion
        plot_confusion(report.confusion, args.figure or src.with_name(f"{src.stem}_confusion.png"),
                       normalize=args.normalize)
    return 0


def cmd_tubemask(args) -> int:
    h, w = args.size
    spec = PatchSpec(temporal_patch=args.temporal_patch, spatial_patch=(args.patch, args.patch))
    grid = patch_grid((args.frames, h, w), spec)
    mask = gen_tube_mask(grid, args.rho, args.seed)
    doc = {"clip_dims": [args.frames, h, w],
           "patch": [spec.temporal_patch, *spec.spatial_patch], **mask.to_dict()}
    text = json.dumps(doc, indent=2) + "\n"
    if args.output:
        atomic_write_text(args.output, text)
    sys.stdout.write(text)
    return 0


# ----------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subcommand's defaults from overwriting flags given before it
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", type=Path, help="key=value file of flag defaults (flags win)")
    common.add_argument("--jobs", type=int, help="worker threads for clip-parallel stages (default: CPU count)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(
        prog="stimkit", description="Batch preprocessing, augmentation, splitting and evaluation "
        "for gesture-clip datasets.", epilog=FILE_FORMATS,
        formatter_class=argparse.RawDescriptionHelpFormatter, parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", required=True)

    def add(name, func, help_text, epilog=None):
        p = sub.add_parser(name, help=help_text, description=help_text, parents=[common],
                           epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
        p.set_defaults(func=func)
        return p

    p = add("scan", cmd_scan, "Catalog a dataset root into a manifest.", FILE_FORMATS)
    p.add_argument("root", type=Path, help="dataset root with one directory per class label")
    p.add_argument("-o", "--output", type=Path, help="manifest path (default: ROOT/manifest.json)")

    p = add("trim", cmd_trim, "Cut clips into frame segments.",
            "segments file: one 'clip_id start_frame end_frame' line per segment, end exclusive;\n"
            "clips not listed are copied whole.\n\n" + FILE_FORMATS)
    p.add_argument("manifest", type=Path)
    p.add_argument("--segments", type=Path, required=True, help="segments file")
    p.add_argument("--out", type=Path, required=True, help="output dataset root")
    p.add_argument("-o", "--output", type=Path, help="manifest path (default: OUT/manifest.json)")

    p = add("mask", cmd_mask, "Black out everything but the largest detection and resize each frame.",
            "detections: DETECTIONS/<clip_id>.jsonl per clip, one JSON object per frame line\n"
            '  {"frame_index": i, "detections": [{"x1":..,"y1":..,"x2":..,"y2":..,"conf":..,"cls":..}]}\n'
            "frames missing from the file (or clips without a file) have no detections.\n"
            "A per-frame report is written to OUT/mask_report.json.\n\n" + FILE_FORMATS)
    p.add_argument("manifest", type=Path)
    p.add_argument("--detections", type=Path, required=True, help="directory of <clip_id>.jsonl files")
    p.add_argument("--out", type=Path, required=True, help="output dataset root")
    p.add_argument("--size", type=parse_size, default=(224, 224), help="output WIDTHxHEIGHT (default 224x224)")
    p.add_argument("--on-no-detection", choices=[m.value for m in NoDetectionPolicy],
                   default=NoDetectionPolicy.PASSTHROUGH.value,
                   help="frames without detections: resize unmasked, emit black, or drop")
    p.add_argument("-o", "--output", type=Path, help="manifest path (default: OUT/manifest.json)")

    p = add("augment", cmd_augment,
            "Write each clip plus augmented copies (hflip, vflip, upsample, rotate, invert, downsample).",
            "'rotate' is the fixed-angle 'random rotate' augmentation: every frame turns by --theta.\n"
            "--all emits 7 clips per source: the original and one per transform.\n\n" + FILE_FORMATS)
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, required=True, help="output dataset root")
    p.add_argument("--all", action="store_true", help="apply all six transforms")
    p.add_argument("--transform", action="append", choices=[k.value for k in TransformKind],
                   help="apply one transform (repeatable)")
    p.add_argument("--alpha", type=float, default=1.5, help="upsample scale factor (> 1, default 1.5)")
    p.add_argument("--theta", type=float, default=25.0, help="rotation angle in degrees (default 25)")
    p.add_argument("--beta", type=int, default=2, help="temporal downsample factor (default 2)")
    p.add_argument("-o", "--output", type=Path, help="manifest path (default: OUT/manifest.json)")

    p = add("split", cmd_split, "Stratified train/val/test split of a manifest.", FILE_FORMATS)
    p.add_argument("manifest", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratios", default="70:15:15", help="train:val:test weights (default 70:15:15)")
    p.add_argument("--force", action="store_true", help="reassign entries that already have a split")
    p.add_argument("--figure", type=Path, help="also draw per-class split sizes to this image")
    p.add_argument("-o", "--output", type=Path, help="output manifest (default: <manifest>_split.json)")

    p = add("stats", cmd_stats, "Per-class frame count, frame size and duration statistics.",
            "writes JSON, CSV and a PNG summary; the table is also printed tab-separated.\n\n" + FILE_FORMATS)
    p.add_argument("manifest", type=Path)
    p.add_argument("-o", "--output", type=Path, help="JSON report (default: <manifest>_stats.json)")
    p.add_argument("--csv", type=Path, help="CSV table (default: JSON path with .csv)")
    p.add_argument("--figure", type=Path, help="summary figure (default: JSON path with .png)")
    p.add_argument("--no-figure", action="store_true")

    p = add("eval", cmd_eval, "Accuracy, per-class precision/recall/F1, loss and confusion matrix.",
            "predictions file: header 'clip_id,true_label,pred_label,p0,p1,p2', labels as names or 0/1/2;\n"
            "p0..p2 may be empty (loss is then omitted).")
    p.add_argument("predictions", type=Path)
    p.add_argument("-o", "--output", type=Path, help="JSON report (default: <predictions>_report.json)")
    p.add_argument("--figure", type=Path, help="confusion figure (default: <predictions>_confusion.png)")
    p.add_argument("--normalize", action="store_true", help="row-normalise the confusion figure")
    p.add_argument("--no-figure", action="store_true")

    p = add("tubemask", cmd_tubemask, "Token grid and tube mask for a clip geometry, as JSON.",
            "spatial_pattern is a row-major 0/1 string over the H'xW' token positions (1 = masked).")
    p.add_argument("--frames", type=int, required=True, help="clip length T")
    p.add_argument("--size", type=parse_size, required=True, help="frame HxW")
    p.add_argument("--rho", type=float, required=True, help="masking ratio in [0, 1)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temporal-patch", type=int, default=2)
    p.add_argument("--patch", type=int, default=16, help="square spatial patch size")
    p.add_argument("-o", "--output", type=Path, help="also write the JSON here")
    return parser


def read_config(path: Path) -> dict[str, str]:
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DatasetError(f"{path}: cannot read config: {exc}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        values[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return values


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def apply_config(parser: argparse.ArgumentParser, config: dict[str, str]) -> None:
    """Install config values as defaults on every parser so explicit flags still win."""
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    known: set[str] = set()
    for p in [parser, *subparsers.choices.values()]:
        for action in p._actions:
            if action.dest in config:
                known.add(action.dest)
                value = config[action.dest]
                if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                    low = value.lower()
                    if low not in _TRUE | _FALSE:
                        raise UsageError(f"config: {action.dest} expects a boolean, got {value!r}")
                    p.set_defaults(**{action.dest: low in _TRUE})
                elif isinstance(action, argparse._AppendAction):
                    p.set_defaults(**{action.dest: [v.strip() for v in value.split(",") if v.strip()]})
                else:
                    p.set_defaults(**{action.dest: value})
    unknown = sorted(set(config) - known)
    if unknown:
        raise UsageError(f"config: unknown keys {', '.join(unknown)}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    pre_args, _ = pre.parse_known_args(argv)
    try:
        if pre_args.config:
            apply_config(parser, read_config(pre_args.config))
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"stimkit: error: {exc}", file=sys.stderr)
        return 2
    except DatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    if getattr(args, "jobs", None) is None:
        args.jobs = os.cpu_count() or 1
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        parser.print_usage(sys.stderr)
        print("stimkit: error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"stimkit: error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
