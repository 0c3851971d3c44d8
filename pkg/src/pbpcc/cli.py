"""Command line interface: ``pbpcc <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import harness
from .estimators import parse_minkowski_p
from .exceptions import ColorConstancyError
from .imaging import PreprocessConfig, correct_image, load_image, load_mask, preprocess, quantize_8bit, save_png
from .metrics import angular_error, brightness_group_analysis
from .synth import make_suite, write_suite

log = logging.getLogger("pbpcc")


def parse_int_list(text: str) -> list[int]:
    """``"3-12"``, ``"1,4,8"`` or a mix such as ``"1,3-5"``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError(f"empty list: {text!r}")
    return out


def parse_float_list(text: str) -> list[float]:
    values = [float(v) for v in text.split(",") if v.strip()]
    if not values:
        raise argparse.ArgumentTypeError(f"empty list: {text!r}")
    return values


def parse_p_list(text: str) -> list[float]:
    return [parse_minkowski_p(v) for v in text.split(",") if v.strip()]


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("CC_JOBS", "1")))
    except ValueError:
        return 1


def add_method_args(p: argparse.ArgumentParser, default_method: str = "pbp") -> None:
    g = p.add_argument_group("method")
    g.add_argument("--method", default=default_method, choices=harness.METHOD_NAMES)
    g.add_argument("--base", default="gw", help="base Gray-World member for pbp/bp (gw, sog, ggw, ge1, ge2)")
    g.add_argument("--n", type=int, default=1, help="PBP grid factor; grid is 3n x 2n patches")
    g.add_argument("--q", type=int, default=1, help="PBP brightness power")
    g.add_argument("--sample-frac", type=float, help="bright-pixel fraction sigma, e.g. 0.02")
    g.add_argument("--interval", type=int, help="downsampling interval S")
    g.add_argument("--minkowski-p", type=parse_minkowski_p, help="Minkowski order (integer or 'inf')")
    g.add_argument("--smooth-sigma", type=float, help="Gaussian pre-smoothing scale in pixels")
    g.add_argument("--derivative-order", type=int, choices=(0, 1, 2))


def method_from_args(args) -> harness.MethodConfig:
    return harness.make_method(
        args.method,
        base=args.base,
        n=args.n,
        q=args.q,
        sample_fraction=args.sample_frac,
        interval=args.interval,
        minkowski_p=args.minkowski_p,
        smoothing_sigma=args.smooth_sigma,
        derivative_order=args.derivative_order,
    )


def add_preprocess_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("preprocessing")
    g.add_argument("--saturation", type=float, default=1.0, help="mask pixels with any channel above this fraction")
    g.add_argument("--bit-depth", type=int, help="sensor bit depth when smaller than the container")
    g.add_argument("--black-level", type=float, default=0.0)
    g.add_argument("--quantize", action=argparse.BooleanOptionalAction, default=True, help="round to 8 bits")
    g.add_argument("--mask", help="validity mask image (nonzero = valid)")


def add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--jobs", type=int, default=default_jobs(), help="worker processes (default $CC_JOBS or 1)")
    p.add_argument("--no-quantize", action="store_true", help="skip 8-bit quantization")
    p.add_argument("--quantize-first", action="store_true", help="quantize before saturation clipping")


def run_options(args) -> harness.RunOptions:
    return harness.RunOptions(quantize_8bit=not args.no_quantize, clip_before_quantize=not args.quantize_first)


def load_single(args):
    config = PreprocessConfig(
        saturation_fraction=args.saturation,
        source_bit_depth=args.bit_depth,
        quantize_to_8bit=args.quantize,
        black_level=args.black_level,
    )
    image = preprocess(load_image(args.image, config), config)
    if args.mask:
        image = image.with_mask(load_mask(args.mask, image.shape))
    return image


def emit(text: str, path=None) -> None:
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_estimate(args) -> int:
    method = method_from_args(args)
    image = load_single(args)
    est = method.estimate(image)
    out = {"estimate": list(est.rgb)}
    if args.gt:
        out["angular_error"] = angular_error(est, args.gt)
    if args.output:
        corrected = quantize_8bit(correct_image(image, est))
        save_png(args.output, corrected, gamma=args.gamma if args.gamma > 0 else None)
    print(json.dumps(out))
    return 0


def _write_eval_outputs(args, result, method) -> None:
    report = harness.dataset_report(result, method, "camera" if args.group_by == "camera" else "pooled")
    emit(harness.dumps(report), args.json_out)
    if args.errors_csv:
        harness.write_records_csv(args.errors_csv, result.records)
    if args.stats_csv and result.stats:
        stats = harness.camera_averaged_stats(result.records) if args.group_by == "camera" else result.stats
        harness.write_stats_csv(args.stats_csv, stats, method.label)


def cmd_eval(args) -> int:
    entries = harness.read_manifest(args.manifest)
    method = method_from_args(args)
    result = harness.run_dataset(entries, method, run_options(args), args.jobs)
    _write_eval_outputs(args, result, method)
    if result.stats is None:
        log.error("every image failed")
        return 1
    return 0


def cmd_grid(args) -> int:
    entries = harness.read_manifest(args.manifest)
    spec = harness.GridSpec(
        sample_fractions=tuple(args.sample_fracs),
        intervals=tuple(args.intervals),
        minkowski_ps=tuple(args.ps),
        grid_factors=tuple(args.ns),
        brightness_powers=tuple(args.qs),
    )
    result = harness.grid_search(entries, args.base, spec, run_options(args), args.jobs)
    if args.table_csv:
        result.write_csv(args.table_csv)
    else:
        writer = csv.DictWriter(sys.stdout, fieldnames=list(harness.GRID_COLUMNS), extrasaction="ignore")
        writer.writeheader()
        writer.writerows(result.table)
    emit(harness.dumps({"best": result.best, "objective": "mean+median"}), args.json_out)
    return 0


def cmd_sweep(args) -> int:
    entries = harness.read_manifest(args.manifest)
    methods = []
    for name in args.methods.split(","):
        name = name.strip().lower()
        if name.startswith("pbp"):
            base = name.split("+", 1)[1] if "+" in name else "gw"
            methods.append(harness.make_method("pbp", base=base))
        else:
            methods.append(harness.make_method(name))
    rows = harness.downsample_sweep(entries, methods, args.intervals, run_options(args), args.jobs)
    if args.csv:
        harness.write_rows_csv(args.csv, rows, harness.SWEEP_COLUMNS)
    else:
        writer = csv.DictWriter(sys.stdout, fieldnames=list(harness.SWEEP_COLUMNS), extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
    return 0


def cmd_bench(args) -> int:
    method = method_from_args(args)
    image = load_single(args)
    result = harness.bench_single(image, method, args.repeats)
    out = {"method": method.describe(), "image": str(args.image), "size": list(image.shape), "timing": harness.TIMING_NOTE}
    out.update(result.as_dict())
    print(harness.dumps(out))
    return 0


def cmd_gen_synth(args) -> int:
    scenes = make_suite(
        args.seed,
        args.count,
        height=args.height,
        width=args.width,
        white_fraction=args.white_fraction,
        white_patches=args.white_patches,
        distractor_fraction=args.distractor_fraction,
        block=args.block,
        noise=args.noise,
    )
    manifest = write_suite(args.out_dir, scenes, prefix=args.prefix)
    print(str(manifest))
    return 0


def cmd_brightness_groups(args) -> int:
    entries = harness.read_manifest(args.manifest)
    if args.limit:
        entries = entries[: args.limit]
    prepared, failures = harness.prepare_dataset(entries, run_options(args), args.jobs)
    table = []
    for item in prepared:
        try:
            table.append([e for _, e in brightness_group_analysis(item.image, item.gt, args.groups)])
        except ColorConstancyError as exc:
            log.warning("skipping %s: %s", item.image_id, exc)
    if not table:
        log.error("no image could be analyzed")
        return 1
    errs = np.array(table)
    out = open(args.csv, "w", newline="") if args.csv else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["group", "mean_error_deg", "median_error_deg", "images"])
        for g in range(args.groups):
            col = errs[:, g]
            col = col[~np.isnan(col)]
            writer.writerow([g, float(col.mean()) if col.size else "", float(np.median(col)) if col.size else "", col.size])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pbpcc", description="Patch-wise bright pixels color constancy toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate the illuminant of one image")
    p.add_argument("image")
    add_method_args(p)
    add_preprocess_args(p)
    p.add_argument("--gt", type=parse_float_list, help="groundtruth r,g,b to report the angular error")
    p.add_argument("--output", help="write the corrected image as an 8-bit PNG")
    p.add_argument("--gamma", type=float, default=2.2, help="display gamma for --output (0 disables)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("eval", help="evaluate a method over a manifest")
    p.add_argument("manifest")
    add_method_args(p)
    add_run_args(p)
    p.add_argument("--group-by", choices=("none", "camera"), default="none", help="average statistics per camera tag")
    p.add_argument("--json-out", help="write the JSON report here instead of stdout")
    p.add_argument("--errors-csv", help="per-image image_id,error_deg,elapsed_ms")
    p.add_argument("--stats-csv", help="one-row statistics CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="grid search PBP parameters minimizing mean+median error")
    p.add_argument("manifest")
    p.add_argument("--base", default="gw", choices=harness.PBP_BASES)
    p.add_argument("--sample-fracs", type=parse_float_list, default=[0.02, 0.03, 0.04])
    p.add_argument("--intervals", type=parse_int_list, default=list(range(3, 13)))
    p.add_argument("--ps", type=parse_p_list, default=[1, 2, 3])
    p.add_argument("--ns", type=parse_int_list, default=[1])
    p.add_argument("--qs", type=parse_int_list, default=[1])
    p.add_argument("--table-csv", help="write the full score table here instead of stdout")
    p.add_argument("--json-out")
    add_run_args(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("sweep-downsample", help="error and runtime against the downsampling interval")
    p.add_argument("manifest")
    p.add_argument("--methods", default="wp,gw,sog,ggw,ge1,ge2", help="comma list; pbp+<base> for PBP")
    p.add_argument("--intervals", type=parse_int_list, default=list(range(1, 21)))
    p.add_argument("--csv")
    add_run_args(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="time repeated estimation on one preloaded image")
    p.add_argument("image")
    add_method_args(p)
    add_preprocess_args(p)
    p.add_argument("--repeats", type=int, default=20)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gen-synth", help="write a seeded synthetic dataset and manifest")
    p.add_argument("out_dir")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--height", type=int, default=360)
    p.add_argument("--width", type=int, default=540)
    p.add_argument("--white-fraction", type=float, default=0.02)
    p.add_argument("--white-patches", type=int, default=12)
    p.add_argument("--distractor-fraction", type=float, default=0.0)
    p.add_argument("--block", type=int, default=1)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--prefix", default="synth")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("brightness-groups", help="per-brightness-group angular error over a manifest")
    p.add_argument("manifest")
    p.add_argument("--groups", type=int, default=100)
    p.add_argument("--limit", type=int)
    p.add_argument("--csv")
    add_run_args(p)
    p.set_defaults(func=cmd_brightness_groups)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ColorConstancyError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
