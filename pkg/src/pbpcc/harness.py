"""Dataset manifests, batch evaluation, grid search, downsampling sweeps and timing.

Timing brackets the estimation call only. Decoding and preprocessing
(saturation clipping, quantization, masking) happen before the clock starts.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .downsample import equidistant_downsample
from .estimators import PRESETS, GrayFrameworkParams, bright_pixels_estimate, gray_framework_estimate
from .exceptions import ColorConstancyError, ImageFormatError, ParameterError
from .imaging import IlluminantEstimate, LinearImage, PreprocessConfig, load_image, load_mask, preprocess
from .metrics import STAT_FIELDS, ErrorStats, angular_error, average_stats, error_stats
from .pbp import TUNED_PARAMS, PbpParams, pbp_estimate

logger = logging.getLogger(__name__)

MANIFEST_FIELDS = (
    "image_id",
    "image_path",
    "gt_r",
    "gt_g",
    "gt_b",
    "mask_path",
    "bit_depth",
    "saturation_fraction",
    "camera_tag",
)
TIMING_NOTE = "wall time of the estimation call only; excludes decoding and preprocessing"

PathLike = Union[str, os.PathLike]


# ---------------------------------------------------------------------------
# Manifest


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    image_path: str
    gt_rgb: tuple[float, float, float]
    mask_path: Optional[str] = None
    bit_depth: Optional[int] = None
    saturation_fraction: float = 1.0
    camera_tag: Optional[str] = None
    black_level: float = 0.0

    def __post_init__(self):
        if not self.image_id or not self.image_path:
            raise ImageFormatError("manifest entries need an image_id and an image_path")
        if not any(v > 0 for v in self.gt_rgb) or any(v < 0 for v in self.gt_rgb):
            raise ImageFormatError(f"{self.image_id}: groundtruth {self.gt_rgb} needs a positive component")


def read_manifest(path: PathLike) -> list[ManifestEntry]:
    """Parse a manifest CSV. Relative paths resolve against the manifest's folder.

    An optional ``black_level`` column (raw counts) is honored when present.
    """
    path = Path(path)
    base = path.parent
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ImageFormatError(f"cannot read manifest {path}: {exc}") from exc
    entries = []
    with fh:
        reader = csv.DictReader(fh)
        missing = {"image_id", "image_path", "gt_r", "gt_g", "gt_b"} - set(reader.fieldnames or ())
        if missing:
            raise ImageFormatError(f"{path}: manifest lacks columns {sorted(missing)}")
        for line, row in enumerate(reader, start=2):
            try:
                mask = (row.get("mask_path") or "").strip()
                bits = (row.get("bit_depth") or "").strip()
                sat = (row.get("saturation_fraction") or "").strip()
                black = (row.get("black_level") or "").strip()
                entries.append(
                    ManifestEntry(
                        image_id=row["image_id"].strip(),
                        image_path=str(base / row["image_path"].strip()),
                        gt_rgb=(float(row["gt_r"]), float(row["gt_g"]), float(row["gt_b"])),
                        mask_path=str(base / mask) if mask else None,
                        bit_depth=int(bits) if bits else None,
                        saturation_fraction=float(sat) if sat else 1.0,
                        camera_tag=(row.get("camera_tag") or "").strip() or None,
                        black_level=float(black) if black else 0.0,
                    )
                )
            except (TypeError, ValueError) as exc:
                raise ImageFormatError(f"{path}:{line}: {exc}") from exc
    return entries


def write_manifest(path: PathLike, entries: Sequence[ManifestEntry]) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS + ("black_level",))
        for e in entries:
            writer.writerow(
                [
                    e.image_id,
                    os.path.relpath(e.image_path, path.parent),
                    *(repr(float(v)) for v in e.gt_rgb),
                    os.path.relpath(e.mask_path, path.parent) if e.mask_path else "",
                    e.bit_depth if e.bit_depth is not None else "",
                    e.saturation_fraction,
                    e.camera_tag or "",
                    e.black_level,
                ]
            )


# ---------------------------------------------------------------------------
# Methods

METHOD_NAMES = ("gw", "wp", "sog", "ggw", "ge1", "ge2", "bp", "pbp")
PBP_BASES = ("gw", "sog", "ggw", "ge1", "ge2")


@dataclass(frozen=True)
class MethodConfig:
    """A named estimator with its full parameter set.

    ``interval`` downsamples before a baseline; PBP carries its own interval.
    """

    name: str
    params: GrayFrameworkParams
    interval: int = 1
    sample_fraction: Optional[float] = None
    pbp: Optional[PbpParams] = None
    base_name: Optional[str] = None

    def estimate(self, image: LinearImage) -> IlluminantEstimate:
        if self.name == "pbp":
            return pbp_estimate(image, self.pbp)
        if self.interval > 1:
            image = equidistant_downsample(image, self.interval)
        if self.name == "bp":
            return bright_pixels_estimate(image, self.sample_fraction, self.params)
        return gray_framework_estimate(image, self.params)

    def with_interval(self, interval: int) -> "MethodConfig":
        if self.name == "pbp":
            return replace(self, pbp=replace(self.pbp, downsample_interval=interval), interval=interval)
        return replace(self, interval=interval)

    @property
    def label(self) -> str:
        if self.name == "pbp":
            return f"PBP-({self.pbp.grid_factor},{self.pbp.brightness_power})+{self.base_name.upper()}"
        return self.name.upper()

    def describe(self) -> dict:
        p = self.params
        out = {
            "method": self.name,
            "label": self.label,
            "derivative_order": p.derivative_order,
            "minkowski_p": "inf" if p.minkowski_p == math.inf else p.minkowski_p,
            "smoothing_sigma": p.smoothing_sigma,
            "interval": self.interval,
        }
        if self.sample_fraction is not None:
            out["sample_fraction"] = self.sample_fraction
        if self.pbp is not None:
            out.update(
                base=self.base_name,
                n=self.pbp.grid_factor,
                q=self.pbp.brightness_power,
                sample_fraction=self.pbp.sample_fraction,
                interval=self.pbp.downsample_interval,
            )
        return out


def make_method(
    name: str,
    base: str = "gw",
    n: int = 1,
    q: int = 1,
    sample_fraction: Optional[float] = None,
    interval: Optional[int] = None,
    minkowski_p: Optional[float] = None,
    smoothing_sigma: Optional[float] = None,
    derivative_order: Optional[int] = None,
) -> MethodConfig:
    """Build a method from its CLI name plus optional overrides.

    PBP starts from the tuned (sigma, S, p) table for its (n, q) and base,
    falling back to the (1, 1) row for other (n, q). BP defaults to sigma = 2%
    on the GW base. Baselines default to interval 1.
    """
    name = name.lower()
    if name not in METHOD_NAMES:
        raise ParameterError(f"unknown method {name!r}; choose from {', '.join(METHOD_NAMES)}")
    overrides = {}
    if minkowski_p is not None:
        overrides["minkowski_p"] = minkowski_p
    if smoothing_sigma is not None:
        overrides["smoothing_sigma"] = smoothing_sigma
    if derivative_order is not None:
        overrides["derivative_order"] = derivative_order

    if name == "pbp":
        base = base.lower()
        if base not in PBP_BASES:
            raise ParameterError(f"unknown PBP base {base!r}; choose from {', '.join(PBP_BASES)}")
        frac, s, p = TUNED_PARAMS.get((n, q), TUNED_PARAMS[(1, 1)])[base]
        params = PRESETS[base].replace(minkowski_p=p).replace(**overrides)
        pbp = PbpParams(
            grid_factor=n,
            brightness_power=q,
            sample_fraction=sample_fraction if sample_fraction is not None else frac,
            downsample_interval=interval if interval is not None else s,
            base=params,
        )
        return MethodConfig("pbp", params, pbp.downsample_interval, None, pbp, base)

    if name == "bp":
        base = base.lower()
        if base not in PRESETS:
            raise ParameterError(f"unknown BP base {base!r}")
        params = PRESETS[base].replace(**overrides)
        frac = sample_fraction if sample_fraction is not None else 0.02
        return MethodConfig("bp", params, interval or 1, frac, None, base)

    params = PRESETS[name].replace(**overrides)
    return MethodConfig(name, params, interval or 1)


# ---------------------------------------------------------------------------
# Batch evaluation


@dataclass(frozen=True)
class RunOptions:
    quantize_8bit: bool = True
    clip_before_quantize: bool = True


@dataclass(frozen=True, eq=False)
class PreparedImage:
    image_id: str
    image: LinearImage
    gt: tuple[float, float, float]
    camera_tag: Optional[str]
    masked: bool


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    error_deg: float
    elapsed_ms: float
    estimate: tuple[float, float, float]
    camera_tag: Optional[str] = None


@dataclass(frozen=True)
class Failure:
    image_id: str
    kind: str
    message: str


@dataclass
class DatasetResult:
    records: list[ImageRecord]
    failures: list[Failure]
    stats: Optional[ErrorStats]
    mask_used: bool = False

    @property
    def errors(self) -> list[float]:
        return [r.error_deg for r in self.records]

    @property
    def mean_time_ms(self) -> float:
        return float(np.mean([r.elapsed_ms for r in self.records])) if self.records else float("nan")


def prepare_entry(entry: ManifestEntry, options: RunOptions = RunOptions()) -> PreparedImage:
    """Load, preprocess and mask one manifest entry."""
    config = PreprocessConfig(
        saturation_fraction=entry.saturation_fraction,
        source_bit_depth=entry.bit_depth,
        quantize_to_8bit=options.quantize_8bit,
        clip_before_quantize=options.clip_before_quantize,
        black_level=entry.black_level,
    )
    try:
        image = load_image(entry.image_path, config)
    except OSError as exc:
        raise ImageFormatError(f"{entry.image_path}: {exc}") from exc
    image = preprocess(image, config)
    if entry.mask_path:
        image = image.with_mask(load_mask(entry.mask_path, image.shape))
    return PreparedImage(entry.image_id, image, entry.gt_rgb, entry.camera_tag, bool(entry.mask_path))


def _prepare_safe(args):
    entry, options = args
    try:
        return prepare_entry(entry, options), None
    except (ColorConstancyError, OSError) as exc:
        return None, Failure(entry.image_id, type(exc).__name__, str(exc))


def _evaluate_one(prepared: PreparedImage, method: MethodConfig):
    try:
        t0 = time.perf_counter()
        est = method.estimate(prepared.image)
        elapsed = (time.perf_counter() - t0) * 1e3
        err = angular_error(est, prepared.gt)
    except ColorConstancyError as exc:
        return None, Failure(prepared.image_id, type(exc).__name__, str(exc))
    return ImageRecord(prepared.image_id, err, elapsed, est.rgb, prepared.camera_tag), None


def _evaluate_args(args):
    return _evaluate_one(*args)


def _map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def prepare_dataset(
    entries: Sequence[ManifestEntry], options: RunOptions = RunOptions(), jobs: int = 1
) -> tuple[list[PreparedImage], list[Failure]]:
    prepared, failures = [], []
    for image, failure in _map(_prepare_safe, [(e, options) for e in entries], jobs):
        if failure is not None:
            logger.warning("skipping %s: %s", failure.image_id, failure.message)
            failures.append(failure)
        else:
            prepared.append(image)
    return prepared, failures


def evaluate_prepared(
    prepared: Sequence[PreparedImage],
    method: MethodConfig,
    jobs: int = 1,
    failures: Iterable[Failure] = (),
) -> DatasetResult:
    """Estimate every prepared image; failures are counted, not fatal.

    Records come back in input order whatever the worker count.
    """
    failures = list(failures)
    records = []
    for record, failure in _map(_evaluate_args, [(p, method) for p in prepared], jobs):
        if failure is not None:
            logger.warning("estimation failed on %s: %s", failure.image_id, failure.message)
            failures.append(failure)
        else:
            records.append(record)
    stats = error_stats([r.error_deg for r in records]) if records else None
    if failures:
        logger.warning("%d image(s) excluded from statistics", len(failures))
    return DatasetResult(records, failures, stats, any(p.masked for p in prepared))


def run_dataset(
    entries: Sequence[ManifestEntry],
    method: MethodConfig,
    options: RunOptions = RunOptions(),
    jobs: int = 1,
) -> DatasetResult:
    """Load, preprocess, estimate and score every manifest entry."""
    if not entries:
        raise ParameterError("manifest is empty")
    prepared, failures = prepare_dataset(entries, options, jobs)
    return evaluate_prepared(prepared, method, jobs, failures)


def stats_by_camera(records: Sequence[ImageRecord]) -> dict[str, ErrorStats]:
    groups: dict[str, list[float]] = {}
    for r in records:
        groups.setdefault(r.camera_tag or "", []).append(r.error_deg)
    return {tag: error_stats(errs) for tag, errs in sorted(groups.items())}


def camera_averaged_stats(records: Sequence[ImageRecord]) -> ErrorStats:
    """Statistics per camera tag, then averaged field-wise across cameras."""
    return average_stats(list(stats_by_camera(records).values()))


# ---------------------------------------------------------------------------
# Grid search


@dataclass(frozen=True)
class GridSpec:
    sample_fractions: tuple[float, ...] = (0.02, 0.03, 0.04)
    intervals: tuple[int, ...] = tuple(range(3, 13))
    minkowski_ps: tuple[float, ...] = (1, 2, 3)
    grid_factors: tuple[int, ...] = (1,)
    brightness_powers: tuple[int, ...] = (1,)

    def __post_init__(self):
        for name in ("sample_fractions", "intervals", "minkowski_ps", "grid_factors", "brightness_powers"):
            values = tuple(getattr(self, name))
            if not values:
                raise ParameterError(f"grid axis {name} is empty")
            object.__setattr__(self, name, values)
        for f in self.sample_fractions:
            if not 0 < f < 1:
                raise ParameterError(f"sample fraction {f} outside (0, 1)")
        if any(s < 1 for s in self.intervals):
            raise ParameterError("intervals must be >= 1")
        if any(n < 1 for n in self.grid_factors) or any(q < 1 for q in self.brightness_powers):
            raise ParameterError("n and q must be >= 1")

    def combinations(self) -> list[tuple]:
        """(sigma, S, p, n, q) tuples in lexicographic order."""
        return sorted(
            itertools.product(
                self.sample_fractions, self.intervals, self.minkowski_ps, self.grid_factors, self.brightness_powers
            )
        )


GRID_COLUMNS = ("sample_fraction", "interval", "minkowski_p", "n", "q", "objective") + STAT_FIELDS + ("failures",)


@dataclass
class GridResult:
    best: dict
    table: list[dict]

    def write_csv(self, path: PathLike) -> None:
        write_rows_csv(path, self.table, GRID_COLUMNS)


def grid_search(
    entries_or_prepared: Sequence,
    base: str,
    grid: GridSpec,
    options: RunOptions = RunOptions(),
    jobs: int = 1,
) -> GridResult:
    """Exhaustive PBP parameter search minimizing mean + median angular error.

    Ties go to the smaller mean, then to the lexicographically smaller
    (sigma, S, p, n, q). Images are decoded once and reused for every cell.
    """
    if entries_or_prepared and isinstance(entries_or_prepared[0], PreparedImage):
        prepared, failures = list(entries_or_prepared), []
    else:
        prepared, failures = prepare_dataset(entries_or_prepared, options, jobs)
    table = []
    for combo in grid.combinations():
        frac, s, p, n, q = combo
        method = make_method("pbp", base=base, n=n, q=q, sample_fraction=frac, interval=s, minkowski_p=p)
        result = evaluate_prepared(prepared, method, jobs, failures)
        row = dict(sample_fraction=frac, interval=s, minkowski_p=p, n=n, q=q)
        if result.stats is None:
            row.update({f: float("nan") for f in STAT_FIELDS}, objective=math.inf, count=0)
        else:
            row.update(result.stats.as_dict(), objective=result.stats.mean + result.stats.median)
        row["failures"] = len(result.failures)
        table.append(row)

    def key(row):
        mean = row["mean"] if row["objective"] != math.inf else math.inf
        return (row["objective"], mean, (row["sample_fraction"], row["interval"], row["minkowski_p"], row["n"], row["q"]))

    best = min(table, key=key)
    return GridResult(best=best, table=table)


# ---------------------------------------------------------------------------
# Downsampling sweep


SWEEP_COLUMNS = (
    "method",
    "interval",
    "mean",
    "median",
    "time_ms",
    "mean_norm",
    "median_norm",
    "time_norm",
    "failures",
)


def downsample_sweep(
    entries_or_prepared: Sequence,
    methods: Sequence[MethodConfig],
    intervals: Sequence[int],
    options: RunOptions = RunOptions(),
    jobs: int = 1,
) -> list[dict]:
    """Mean/median error and mean time per (method, S), plus max-normalized columns.

    Normalization divides each column by its maximum over the intervals of one
    method, so every curve peaks at 1.
    """
    if not intervals:
        raise ParameterError("no intervals to sweep")
    if any(int(s) != s or s < 1 for s in intervals):
        raise ParameterError("intervals must be integers >= 1")
    if entries_or_prepared and isinstance(entries_or_prepared[0], PreparedImage):
        prepared, failures = list(entries_or_prepared), []
    else:
        prepared, failures = prepare_dataset(entries_or_prepared, options, jobs)
    rows = []
    for method in methods:
        block = []
        for s in intervals:
            result = evaluate_prepared(prepared, method.with_interval(s), jobs, failures)
            stats = result.stats
            block.append(
                dict(
                    method=method.label if method.name == "pbp" else method.name,
                    interval=s,
                    mean=stats.mean if stats else float("nan"),
                    median=stats.median if stats else float("nan"),
                    time_ms=result.mean_time_ms,
                    failures=len(result.failures),
                )
            )
        for col in ("mean", "median", "time_ms"):
            peak = max((r[col] for r in block if not math.isnan(r[col])), default=float("nan"))
            norm = col.replace("_ms", "") + "_norm"
            for r in block:
                r[norm] = r[col] / peak if peak and not math.isnan(peak) else float("nan")
        rows.extend(block)
    return rows


# ---------------------------------------------------------------------------
# Single-image timing


@dataclass(frozen=True)
class BenchResult:
    min_ms: float
    mean_ms: float
    p95_ms: float
    repeats: int
    samples_ms: tuple[float, ...] = field(repr=False, default=())

    def as_dict(self) -> dict:
        out = asdict(self)
        out.pop("samples_ms")
        return out


def bench_single(
    image: Union[LinearImage, PathLike],
    method: MethodConfig,
    repeats: int = 20,
    config: PreprocessConfig = PreprocessConfig(),
) -> BenchResult:
    """Time ``repeats`` estimation calls on one preloaded image, after one warm-up call."""
    if repeats < 1:
        raise ParameterError(f"repeats must be >= 1, got {repeats}")
    if not isinstance(image, LinearImage):
        image = preprocess(load_image(image, config), config)
    method.estimate(image)
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        method.estimate(image)
        samples.append((time.perf_counter() - t0) * 1e3)
    arr = np.array(samples)
    return BenchResult(
        min_ms=float(arr.min()),
        mean_ms=float(arr.mean()),
        p95_ms=float(np.percentile(arr, 95)),
        repeats=repeats,
        samples_ms=tuple(samples),
    )


# ---------------------------------------------------------------------------
# Report writers


def write_rows_csv(path: PathLike, rows: Sequence[dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


def write_records_csv(path: PathLike, records: Sequence[ImageRecord]) -> None:
    """Per-image errors as ``image_id,error_deg,elapsed_ms``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "error_deg", "elapsed_ms"])
        for r in records:
            writer.writerow([r.image_id, repr(r.error_deg), f"{r.elapsed_ms:.6f}"])


def read_records_csv(path: PathLike) -> list[tuple[str, float, float]]:
    with open(path, newline="") as fh:
        return [(row["image_id"], float(row["error_deg"]), float(row["elapsed_ms"])) for row in csv.DictReader(fh)]


def write_stats_csv(path: PathLike, stats: ErrorStats, label: str = "") -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("method",) + STAT_FIELDS)
        writer.writerow([label, *stats.csv_row()])


def dataset_report(result: DatasetResult, method: MethodConfig, grouping: str = "pooled") -> dict:
    """JSON-ready summary including measurement boundary, masking and grouping."""
    report = {
        "method": method.describe(),
        "stats": result.stats.as_dict() if result.stats else None,
        "grouping": grouping,
        "mask_used": result.mask_used,
        "timing": TIMING_NOTE,
        "mean_time_ms": result.mean_time_ms,
        "failures": [asdict(f) for f in result.failures],
    }
    if grouping == "camera" and result.records:
        per_cam = stats_by_camera(result.records)
        report["per_camera"] = {k or "untagged": v.as_dict() for k, v in per_cam.items()}
        report["stats"] = average_stats(list(per_cam.values())).as_dict()
        report["pooled_stats"] = result.stats.as_dict()
    return report


def dumps(obj) -> str:
    def default(o):
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        raise TypeError(type(o).__name__)

    return json.dumps(obj, indent=2, default=default)
