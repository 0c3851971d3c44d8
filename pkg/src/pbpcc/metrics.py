"""Angular error, the benchmark statistics suite and brightness-group analysis."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .exceptions import DegenerateEstimateError, DimensionError, ParameterError
from .imaging import IlluminantEstimate, LinearImage

VectorLike = Union[IlluminantEstimate, Sequence[float], np.ndarray]

STAT_FIELDS = ("mean", "median", "trimean", "best25", "worst25", "geo_mean", "count")


def _vec(v: VectorLike) -> np.ndarray:
    if isinstance(v, IlluminantEstimate):
        return v.as_array()
    return np.asarray(v, dtype=np.float64).reshape(-1)


def angular_error(est: VectorLike, gt: VectorLike) -> float:
    """Angle in degrees between two illuminant directions."""
    a, b = _vec(est), _vec(gt)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateEstimateError("angular error is undefined for a zero vector")
    a, b = a / na, b / nb
    # Same angle as the arccos of the cosine, but without the loss of
    # precision arccos suffers next to 0 and 180 degrees.
    sin = float(np.linalg.norm(np.cross(a, b)))
    return math.degrees(math.atan2(sin, float(a @ b)))


def geometric_mean_of_stats(mean, median, trimean, best25, worst25) -> float:
    """Geometric mean of the five summary statistics, as printed in result tables."""
    values = np.array([mean, median, trimean, best25, worst25], dtype=np.float64)
    if np.any(values < 0):
        raise ParameterError("statistics must be nonnegative")
    if np.any(values == 0):
        return 0.0
    return float(np.exp(np.mean(np.log(values))))


@dataclass(frozen=True)
class ErrorStats:
    mean: float
    median: float
    trimean: float
    best25: float
    worst25: float
    geo_mean: float
    count: int

    def as_dict(self) -> dict:
        return asdict(self)

    def csv_row(self) -> list:
        return [getattr(self, f) for f in STAT_FIELDS]


def error_stats(errors: Iterable[float]) -> ErrorStats:
    """Mean, median, trimean, best/worst 25% means and their geometric mean.

    Quartiles interpolate linearly between order statistics; the best and
    worst quarters hold ceil(count / 4) errors each.
    """
    e = np.sort(np.asarray(list(errors), dtype=np.float64))
    if e.size == 0:
        raise ParameterError("cannot summarize an empty error list")
    if np.any(e < 0) or not np.all(np.isfinite(e)):
        raise ParameterError("errors must be finite and nonnegative")
    q1, q2, q3 = np.percentile(e, [25, 50, 75])
    quarter = math.ceil(e.size / 4)
    mean = float(e.mean())
    median = float(q2)
    trimean = float((q1 + 2 * q2 + q3) / 4)
    best = float(e[:quarter].mean())
    worst = float(e[-quarter:].mean())
    return ErrorStats(
        mean=mean,
        median=median,
        trimean=trimean,
        best25=best,
        worst25=worst,
        geo_mean=geometric_mean_of_stats(mean, median, trimean, best, worst),
        count=int(e.size),
    )


def average_stats(stats: Sequence[ErrorStats]) -> ErrorStats:
    """Field-wise arithmetic mean of several ErrorStats (e.g. one per camera).

    The geometric mean is recomputed from the averaged five statistics.
    """
    if not stats:
        raise ParameterError("no statistics to average")
    fields = {f: float(np.mean([getattr(s, f) for s in stats])) for f in STAT_FIELDS[:5]}
    return ErrorStats(
        **fields,
        geo_mean=geometric_mean_of_stats(*fields.values()),
        count=int(sum(s.count for s in stats)),
    )


def brightness_group_analysis(
    image: LinearImage, gt: VectorLike, groups: int = 100
) -> list[tuple[int, float]]:
    """Angular error of the per-channel mean within each brightness group.

    Unmasked pixels are sorted by R+G+B ascending (stable, so ties keep
    row-major order) and split into ``groups`` contiguous near-equal runs.
    Group 0 is the darkest.
    """
    if groups < 1:
        raise ParameterError(f"groups must be >= 1, got {groups}")
    values = image.data[image.mask]
    if values.shape[0] < groups:
        raise DimensionError(f"{values.shape[0]} unmasked pixels cannot form {groups} groups")
    order = np.argsort(values.sum(axis=1), kind="stable")
    out = []
    for i, idx in enumerate(np.array_split(order, groups)):
        mean = values[idx].mean(axis=0)
        try:
            err = angular_error(mean, gt)
        except DegenerateEstimateError:
            err = float("nan")
        out.append((i, err))
    return out
