"""Patch-wise Bright Pixels (PBP) illuminant estimation.

The pipeline: downsample, filter per the base Gray-World member, split the
raster into a grid of near-square patches, give each patch a share of the
bright-pixel budget proportional to its modified brightness (sum of l^q),
take that many brightest pixels from each patch and apply the Minkowski norm
to the union.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .downsample import downsample_views
from .estimators import (
    PRESETS,
    GrayFrameworkParams,
    PixelSelection,
    brightness,
    check_fraction,
    filter_image,
    minkowski_norm,
    sample_count,
    select_brightest,
    to_estimate,
)
from .exceptions import DegenerateBrightnessError, DimensionError, EmptySelectionError, ParameterError
from .imaging import IlluminantEstimate, LinearImage

# (n, q) -> base -> (sample fraction, downsampling interval, Minkowski p)
TUNED_PARAMS: dict[tuple[int, int], dict[str, tuple[float, int, int]]] = {
    (1, 1): {
        "gw": (0.02, 11, 1),
        "sog": (0.005, 4, 1),
        "ggw": (0.02, 3, 3),
        "ge1": (0.04, 3, 1),
        "ge2": (0.04, 6, 1),
    },
    (2, 1): {
        "gw": (0.02, 9, 1),
        "sog": (0.005, 3, 1),
        "ggw": (0.02, 3, 3),
        "ge1": (0.04, 3, 1),
        "ge2": (0.04, 6, 1),
    },
}


@dataclass(frozen=True)
class PbpParams:
    """PBP hyperparameters.

    ``patch_grid`` overrides the 3n x 2n grid with an explicit (rows, cols)
    shape; (1, 1) turns PBP into plain Bright Pixels.
    """

    grid_factor: int = 1
    brightness_power: int = 1
    sample_fraction: float = 0.02
    downsample_interval: int = 1
    base: GrayFrameworkParams = field(default_factory=lambda: PRESETS["gw"])
    patch_grid: Optional[tuple[int, int]] = None

    def __post_init__(self):
        if int(self.grid_factor) != self.grid_factor or self.grid_factor < 1:
            raise ParameterError(f"grid factor n must be an integer >= 1, got {self.grid_factor}")
        if int(self.brightness_power) != self.brightness_power or self.brightness_power < 1:
            raise ParameterError(f"brightness power q must be an integer >= 1, got {self.brightness_power}")
        check_fraction(self.sample_fraction)
        if int(self.downsample_interval) != self.downsample_interval or self.downsample_interval < 1:
            raise ParameterError(f"downsampling interval must be an integer >= 1, got {self.downsample_interval}")
        if self.patch_grid is not None:
            r, c = self.patch_grid
            if r < 1 or c < 1:
                raise ParameterError(f"patch grid must be at least 1x1, got {self.patch_grid}")


def pbp_preset(base: str = "gw", n: int = 1, q: int = 1) -> PbpParams:
    """Tuned (sigma, S, p) for a base method, for (n, q) in {(1, 1), (2, 1)}."""
    try:
        fraction, interval, p = TUNED_PARAMS[(n, q)][base]
    except KeyError:
        raise ParameterError(f"no tuned parameters for base={base!r}, (n, q)=({n}, {q})") from None
    return PbpParams(
        grid_factor=n,
        brightness_power=q,
        sample_fraction=fraction,
        downsample_interval=interval,
        base=PRESETS[base].replace(minkowski_p=p),
    )


@dataclass(frozen=True, eq=False)
class PatchGrid:
    """Near-equal rectangular tiling; edges hold the boundaries along each axis."""

    row_edges: np.ndarray
    col_edges: np.ndarray

    @property
    def rows(self) -> int:
        return len(self.row_edges) - 1

    @property
    def cols(self) -> int:
        return len(self.col_edges) - 1

    def __len__(self) -> int:
        return self.rows * self.cols

    @property
    def patches(self) -> list[tuple[int, int, int, int]]:
        """(row0, row1, col0, col1) half-open bounds, in row-major patch order."""
        re, ce = self.row_edges, self.col_edges
        return [
            (int(re[i]), int(re[i + 1]), int(ce[j]), int(ce[j + 1]))
            for i in range(self.rows)
            for j in range(self.cols)
        ]

    def reduce(self, raster: np.ndarray) -> np.ndarray:
        """Sum a 2-D raster within each patch; returns a (rows, cols) array."""
        part = np.add.reduceat(raster, self.row_edges[:-1], axis=0)
        return np.add.reduceat(part, self.col_edges[:-1], axis=1)


def build_patch_grid(height: int, width: int, n: int = 1, shape: Optional[tuple[int, int]] = None) -> PatchGrid:
    """2n x 3n grid for landscape (width >= height), 3n x 2n for portrait.

    Boundaries fall at floor(r * H / rows) and floor(c * W / cols).
    """
    if shape is None:
        if n < 1:
            raise ParameterError(f"grid factor n must be >= 1, got {n}")
        shape = (2 * n, 3 * n) if width >= height else (3 * n, 2 * n)
    rows, cols = shape
    if height < rows or width < cols:
        raise DimensionError(f"image {height}x{width} is too small for a {rows}x{cols} patch grid")
    row_edges = (np.arange(rows + 1, dtype=np.int64) * height) // rows
    col_edges = (np.arange(cols + 1, dtype=np.int64) * width) // cols
    return PatchGrid(row_edges, col_edges)


@dataclass(frozen=True, eq=False)
class PatchAllocation:
    """Per-patch modified brightness and pixel counts, in row-major patch order."""

    patch_brightness: np.ndarray
    counts: np.ndarray
    capacity: np.ndarray
    shares: np.ndarray
    total_brightness: float
    budget: int


def largest_remainder(shares: np.ndarray, total: int) -> tuple[np.ndarray, np.ndarray]:
    """Round ``shares`` to integers summing to ``total``.

    Returns the counts and the priority order (fractional part descending,
    patch index ascending) used to hand out the leftover units.
    """
    floors = np.floor(shares)
    frac = shares - floors
    counts = floors.astype(np.int64)
    order = np.lexsort((np.arange(shares.size), -frac))
    leftover = int(total - counts.sum())
    if leftover > 0:
        counts[order[:leftover]] += 1
    elif leftover < 0:
        # only reachable through float error; take back from the smallest fractions
        for i in order[::-1]:
            if leftover == 0:
                break
            if counts[i] > 0:
                counts[i] -= 1
                leftover += 1
    return counts, order


def _redistribute(counts: np.ndarray, capacity: np.ndarray, order: np.ndarray) -> np.ndarray:
    """Cap counts at capacity and hand the surplus round-robin in ``order``."""
    surplus = int(np.maximum(counts - capacity, 0).sum())
    counts = np.minimum(counts, capacity)
    while surplus > 0:
        open_ = order[counts[order] < capacity[order]]
        if open_.size == 0:
            break
        if surplus < open_.size:
            counts[open_[:surplus]] += 1
            break
        # full rounds in one step, stopping before any open patch fills up
        rounds = min(int((capacity[open_] - counts[open_]).min()), surplus // open_.size)
        counts[open_] += rounds
        surplus -= rounds * open_.size
    return counts


def allocate_counts(
    brightness_map: np.ndarray,
    grid: PatchGrid,
    q: int,
    fraction: float,
    mask: Optional[np.ndarray] = None,
) -> PatchAllocation:
    """Split the bright-pixel budget across patches by modified brightness.

    The budget is max(1, ceil(N * fraction)) over all N raster pixels. Patch i
    receives the share (L_i / L) * budget with L_i the sum of l^q over the
    patch, rounded by largest remainder and capped at its unmasked pixel count.
    """
    check_fraction(fraction)
    if q < 1:
        raise ParameterError(f"brightness power q must be >= 1, got {q}")
    h, w = brightness_map.shape
    if mask is None:
        mask = np.ones((h, w), dtype=bool)
    budget = sample_count(h * w, fraction)
    powered = brightness_map if q == 1 else np.power(brightness_map, q)
    patch_l = grid.reduce(powered).reshape(-1)
    capacity = grid.reduce(mask.astype(np.int64)).reshape(-1)
    total = float(patch_l.sum())
    if not total > 0:
        raise DegenerateBrightnessError("total modified brightness is zero")
    shares = patch_l / total * budget
    counts, order = largest_remainder(shares, budget)
    if np.any(counts > capacity):
        counts = _redistribute(counts, capacity, order)
    return PatchAllocation(patch_l, counts, capacity, shares, total, budget)


def select_patchwise(
    brightness_map: np.ndarray,
    alloc: PatchAllocation,
    grid: PatchGrid,
    mask: Optional[np.ndarray] = None,
) -> PixelSelection:
    """Union over patches of the N_i brightest unmasked pixels of each patch."""
    h, w = brightness_map.shape
    if mask is None:
        mask = np.ones((h, w), dtype=bool)
    if len(alloc.counts) != len(grid):
        raise ParameterError("allocation does not match the patch grid")
    picked = []
    for (r0, r1, c0, c1), k in zip(grid.patches, alloc.counts.tolist()):
        if k == 0:
            continue
        local = select_brightest(
            brightness_map[r0:r1, c0:c1].reshape(-1), mask[r0:r1, c0:c1].reshape(-1), k
        )
        pw = c1 - c0
        picked.append((r0 + local // pw) * w + (c0 + local % pw))
    if not picked:
        return PixelSelection(np.empty(0, dtype=np.int64), (h, w))
    return PixelSelection(np.concatenate(picked), (h, w))


@dataclass(frozen=True, eq=False)
class PbpResult:
    estimate: IlluminantEstimate
    filtered: LinearImage
    selection: PixelSelection
    grid: PatchGrid
    allocation: PatchAllocation


def pbp_run(image: LinearImage, params: PbpParams) -> PbpResult:
    """Full PBP pipeline, keeping the intermediates (selection, grid, allocation)."""
    data, mask = downsample_views(image.data, image.mask, params.downsample_interval)
    small = LinearImage._wrap(data, mask)
    filtered = filter_image(small, params.base)
    h, w = filtered.shape
    lum = brightness(filtered.data, filtered.mask)
    grid = build_patch_grid(h, w, params.grid_factor, params.patch_grid)
    alloc = allocate_counts(lum, grid, params.brightness_power, params.sample_fraction, filtered.mask)
    selection = select_patchwise(lum, alloc, grid, filtered.mask)
    if len(selection) == 0:
        raise EmptySelectionError("no pixel was selected")
    values = filtered.data.reshape(-1, 3)[selection.indices]
    estimate = to_estimate(minkowski_norm(values, params.base.minkowski_p))
    return PbpResult(estimate, filtered, selection, grid, alloc)


def pbp_estimate(image: LinearImage, params: PbpParams) -> IlluminantEstimate:
    return pbp_run(image, params).estimate
