"""Synthetic scenes with exactly known illuminants.

Each scene is a reflectance map times a drawn illuminant. Reflectances are
uniform in [0, 1]^3 (per pixel, or per ``block`` x ``block`` tile), plus
optional achromatic white squares and saturated-color bright distractors.
Because the white squares reflect the illuminant itself, the groundtruth is
exact.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .exceptions import ParameterError
from .imaging import LinearImage, save_png16


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    image: LinearImage
    illuminant: np.ndarray
    white_mask: np.ndarray


def draw_illuminant(rng: np.random.Generator, peak: float = 0.9) -> np.ndarray:
    """Random positive illuminant with max channel ``peak``."""
    e = rng.uniform(0.25, 1.0, size=3)
    return e / e.max() * peak


def _squares(rng, height, width, area_fraction, count):
    """Corners and side of ``count`` random squares covering about ``area_fraction``."""
    if area_fraction <= 0 or count <= 0:
        return [], 0
    side = max(1, int(round(np.sqrt(area_fraction * height * width / count))))
    side = min(side, height, width)
    corners = [
        (int(rng.integers(0, height - side + 1)), int(rng.integers(0, width - side + 1)))
        for _ in range(count)
    ]
    return corners, side


def make_scene(
    rng: np.random.Generator,
    height: int = 120,
    width: int = 180,
    white_fraction: float = 0.02,
    white_patches: int = 12,
    distractor_fraction: float = 0.0,
    distractor_patches: int = 4,
    block: int = 1,
    illuminant: Optional[Sequence[float]] = None,
    illuminant_peak: float = 0.9,
    noise: float = 0.0,
) -> SyntheticScene:
    """Build one scene.

    Args:
        rng: source of randomness; the scene is a pure function of its state.
        white_fraction: image area covered by white (reflectance 1) squares.
        white_patches: number of squares sharing that area.
        distractor_fraction: area of bright, strongly colored squares.
        block: reflectance tile size; 1 gives independent per-pixel texture.
        illuminant: fixed illuminant; drawn with ``draw_illuminant`` when None.
        illuminant_peak: max channel of a drawn illuminant. Keep it below the
            saturation threshold so the white squares survive clipping.
        noise: std of additive Gaussian sensor noise.
    """
    if height < 1 or width < 1 or block < 1:
        raise ParameterError("scene dimensions and block size must be positive")
    e = np.asarray(illuminant, dtype=np.float64) if illuminant is not None else draw_illuminant(rng, illuminant_peak)
    bh, bw = -(-height // block), -(-width // block)
    refl = rng.uniform(0.0, 1.0, size=(bh, bw, 3))
    if block > 1:
        refl = np.repeat(np.repeat(refl, block, axis=0), block, axis=1)[:height, :width]
    corners, side = _squares(rng, height, width, distractor_fraction, distractor_patches)
    for r, c in corners:
        # strongly colored: one channel at 1, the others low
        color = rng.uniform(0.05, 0.3, size=3)
        color[rng.integers(0, 3)] = 1.0
        refl[r : r + side, c : c + side] = color
    white = np.zeros((height, width), dtype=bool)
    corners, side = _squares(rng, height, width, white_fraction, white_patches)
    for r, c in corners:
        white[r : r + side, c : c + side] = True
    refl[white] = 1.0
    data = refl * e
    if noise > 0:
        data = data + rng.normal(0.0, noise, size=data.shape)
    data = np.clip(data, 0.0, 1.0)
    return SyntheticScene(LinearImage.from_array(data), e, white)


def make_suite(seed: int, count: int, **scene_kwargs) -> list[SyntheticScene]:
    """``count`` scenes from one seed; scene i uses child seed i."""
    seeds = np.random.SeedSequence(seed).spawn(count)
    return [make_scene(np.random.default_rng(s), **scene_kwargs) for s in seeds]


def write_suite(out_dir: os.PathLike | str, scenes: Sequence[SyntheticScene], prefix: str = "synth") -> Path:
    """Write scenes as 16-bit linear PNGs plus a manifest CSV; returns the manifest path."""
    from .harness import MANIFEST_FIELDS

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS)
        for i, scene in enumerate(scenes):
            name = f"{prefix}_{i:04d}"
            save_png16(out / f"{name}.png", scene.image)
            r, g, b = (float(v) for v in scene.illuminant)
            writer.writerow([name, f"{name}.png", repr(r), repr(g), repr(b), "", 16, 1.0, ""])
    return manifest
