"""Gray-World family estimators and the Bright Pixels baseline.

One parameterized pipeline covers GW, WP, SoG, GGW and the first/second
order Gray-Edge: optional Gaussian smoothing, optional derivative magnitude,
then a per-channel Minkowski mean over the participating pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .exceptions import (
    DegenerateEstimateError,
    DimensionError,
    EmptySelectionError,
    ParameterError,
)
from .imaging import IlluminantEstimate, LinearImage


def check_minkowski_p(p: float) -> float:
    if p == math.inf:
        return p
    if not (isinstance(p, (int, float, np.integer, np.floating)) and math.isfinite(p) and p >= 1):
        raise ParameterError(f"Minkowski order must be >= 1 or inf, got {p!r}")
    return p


@dataclass(frozen=True)
class GrayFrameworkParams:
    """(derivative order, Minkowski order, Gaussian pre-smoothing scale)."""

    derivative_order: int = 0
    minkowski_p: float = 1.0
    smoothing_sigma: float = 0.0

    def __post_init__(self):
        if self.derivative_order not in (0, 1, 2):
            raise ParameterError(f"derivative_order must be 0, 1 or 2, got {self.derivative_order}")
        check_minkowski_p(self.minkowski_p)
        if not self.smoothing_sigma >= 0:
            raise ParameterError(f"smoothing_sigma must be >= 0, got {self.smoothing_sigma}")

    def replace(self, **changes) -> "GrayFrameworkParams":
        fields = dict(
            derivative_order=self.derivative_order,
            minkowski_p=self.minkowski_p,
            smoothing_sigma=self.smoothing_sigma,
        )
        fields.update(changes)
        return GrayFrameworkParams(**fields)


PRESETS: dict[str, GrayFrameworkParams] = {
    "gw": GrayFrameworkParams(0, 1, 0),
    "wp": GrayFrameworkParams(0, math.inf, 0),
    "sog": GrayFrameworkParams(0, 7, 0),
    "ggw": GrayFrameworkParams(0, 11, 1),
    "ge1": GrayFrameworkParams(1, 7, 1),
    "ge2": GrayFrameworkParams(2, 7, 1),
}


def parse_minkowski_p(text: str) -> float:
    """Parse a CLI value such as ``7`` or ``inf``."""
    if text.strip().lower() in ("inf", "infinity", "max"):
        return math.inf
    value = float(text)
    check_minkowski_p(value)
    return int(value) if value.is_integer() else value


@dataclass(frozen=True, eq=False)
class PixelSelection:
    """Row-major flat indices into an image of size ``source_dims``.

    Indices are kept sorted, which makes selections comparable as sets and
    makes reductions over them independent of the order they were found in.
    """

    indices: np.ndarray
    source_dims: tuple[int, int]

    def __post_init__(self):
        idx = np.sort(np.asarray(self.indices, dtype=np.int64).reshape(-1))
        h, w = self.source_dims
        if idx.size:
            if idx[0] < 0 or idx[-1] >= h * w:
                raise ParameterError("selection index out of bounds")
            if np.any(idx[1:] == idx[:-1]):
                raise ParameterError("selection contains duplicate pixels")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "source_dims", (int(h), int(w)))

    @classmethod
    def from_coords(cls, rows: Sequence[int], cols: Sequence[int], source_dims: tuple[int, int]) -> "PixelSelection":
        flat = np.ravel_multi_index((np.asarray(rows), np.asarray(cols)), source_dims)
        return cls(flat, source_dims)

    def __len__(self) -> int:
        return int(self.indices.size)

    @property
    def rows(self) -> np.ndarray:
        return self.indices // self.source_dims[1]

    @property
    def cols(self) -> np.ndarray:
        return self.indices % self.source_dims[1]

    def coords(self) -> list[tuple[int, int]]:
        return list(zip(self.rows.tolist(), self.cols.tolist()))

    def same_pixels(self, other: "PixelSelection") -> bool:
        return self.source_dims == other.source_dims and np.array_equal(self.indices, other.indices)


# ---------------------------------------------------------------------------
# Filtering


def gaussian_smooth(image: LinearImage, sigma: float) -> LinearImage:
    """Per-channel Gaussian blur, kernel truncated at ceil(3*sigma), edges replicated."""
    if not sigma >= 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return image
    radius = int(math.ceil(3 * sigma))
    out = ndimage.gaussian_filter(
        image.data, sigma=(sigma, sigma, 0), mode="nearest", radius=(radius, radius, 0)
    )
    np.clip(out, 0.0, 1.0, out=out)
    return LinearImage._wrap(out, image.mask)


def spatial_derivative(image: LinearImage, order: int) -> LinearImage:
    """Per-channel derivative magnitude.

    order 1: sqrt(dx^2 + dy^2); order 2: sqrt(dxx^2 + 2 dxy^2 + dyy^2).
    Central differences inside, one-sided differences on the border. The
    result is not renormalized to [0, 1].
    """
    if order not in (1, 2):
        raise ParameterError(f"derivative order must be 1 or 2, got {order}")
    h, w = image.shape
    if h < 3 or w < 3:
        raise DimensionError(f"derivatives need at least a 3x3 image, got {h}x{w}")
    dy, dx = np.gradient(image.data, axis=(0, 1))
    if order == 1:
        mag = np.sqrt(dx * dx + dy * dy)
    else:
        dxy, dxx = np.gradient(dx, axis=(0, 1))
        dyy = np.gradient(dy, axis=0)
        mag = np.sqrt(dxx * dxx + 2.0 * dxy * dxy + dyy * dyy)
    return LinearImage._wrap(mag, image.mask)


def filter_image(image: LinearImage, params: GrayFrameworkParams) -> LinearImage:
    """Smoothing followed by the derivative, as selected by ``params``."""
    out = gaussian_smooth(image, params.smoothing_sigma)
    if params.derivative_order:
        out = spatial_derivative(out, params.derivative_order)
    return out


# ---------------------------------------------------------------------------
# Minkowski statistics


def minkowski_norm(values: np.ndarray, p: float) -> np.ndarray:
    """Per-channel Minkowski mean of an (n, 3) array, unnormalized.

    Uses (mean v^p)^(1/p); each channel is prescaled by its maximum so large
    orders neither underflow nor overflow.
    """
    if values.shape[0] == 0:
        raise EmptySelectionError("no pixels to estimate from")
    peak = values.max(axis=0)
    if p == math.inf:
        return peak
    if p == 1:
        return values.mean(axis=0)
    safe = np.where(peak > 0, peak, 1.0)
    scaled = values / safe
    return peak * np.power(np.mean(np.power(scaled, p), axis=0), 1.0 / p)


def to_estimate(vector: np.ndarray) -> IlluminantEstimate:
    if not np.any(vector > 0):
        raise DegenerateEstimateError("estimate is all zeros")
    return IlluminantEstimate(tuple(vector))


def minkowski_estimate(
    image: LinearImage, selection: Optional[PixelSelection] = None, p: float = 1.0
) -> IlluminantEstimate:
    """Minkowski-p illuminant over ``selection``, or over all unmasked pixels."""
    check_minkowski_p(p)
    if selection is None:
        values = image.data[image.mask]
    else:
        if selection.source_dims != image.shape:
            raise ParameterError(f"selection indexes {selection.source_dims}, image is {image.shape}")
        values = image.data.reshape(-1, 3)[selection.indices]
    if values.shape[0] == 0:
        raise EmptySelectionError("no unmasked pixels to estimate from")
    return to_estimate(minkowski_norm(values, p))


def gray_framework_estimate(image: LinearImage, params: GrayFrameworkParams) -> IlluminantEstimate:
    """Smooth, differentiate (k >= 1), then Minkowski-p over every unmasked pixel."""
    return minkowski_estimate(filter_image(image, params), None, params.minkowski_p)


# ---------------------------------------------------------------------------
# Bright pixels


def brightness(data: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """R + G + B per pixel, forced to 0 where the mask is False."""
    total = data.sum(axis=2)
    if not mask.all():
        total = np.where(mask, total, 0.0)
    return total


def sample_count(n_pixels: int, fraction: float) -> int:
    """ceil(N * sigma), at least 1.

    The product is rounded to 9 decimals first so representation noise such as
    100 * 0.07 = 7.000000000000001 does not add a pixel.
    """
    return max(1, math.ceil(round(n_pixels * fraction, 9)))


def select_brightest(values: np.ndarray, valid: np.ndarray, k: int) -> np.ndarray:
    """Flat indices of the ``k`` largest valid ``values``, ties to the lower index.

    Runs in linear time: a partition finds the k-th largest value, everything
    above it is taken, and the remaining slots go to the earliest pixels equal
    to it. Returns sorted indices.
    """
    cand = np.flatnonzero(valid)
    if k >= cand.size:
        return cand
    if k <= 0:
        return cand[:0]
    v = values[cand]
    threshold = np.partition(v, cand.size - k)[cand.size - k]
    above = cand[v > threshold]
    ties = cand[v == threshold][: k - above.size]
    return np.sort(np.concatenate((above, ties)))


def check_fraction(fraction: float) -> float:
    if not (0.0 < fraction < 1.0):
        raise ParameterError(f"sample fraction must be in (0, 1), got {fraction}")
    return fraction


def bright_pixels_selection(filtered: LinearImage, fraction: float) -> PixelSelection:
    """Top ceil(N * fraction) unmasked pixels by brightness; N counts all pixels."""
    check_fraction(fraction)
    if not filtered.mask.any():
        raise EmptySelectionError("image has no unmasked pixels")
    h, w = filtered.shape
    k = sample_count(h * w, fraction)
    lum = brightness(filtered.data, filtered.mask).reshape(-1)
    idx = select_brightest(lum, filtered.mask.reshape(-1), k)
    return PixelSelection(idx, (h, w))


def bright_pixels_estimate(
    image: LinearImage, fraction: float, base: GrayFrameworkParams = PRESETS["gw"]
) -> IlluminantEstimate:
    """Bright Pixels: the base framework restricted to the brightest pixels.

    Smoothing and derivatives run on the whole image first; brightness for the
    selection is measured on that filtered image and the Minkowski norm is
    taken over the selected pixels only.
    """
    filtered = filter_image(image, base)
    selection = bright_pixels_selection(filtered, fraction)
    return minkowski_estimate(filtered, selection, base.minkowski_p)
