"""Pixel-level data model, decoding, preprocessing and display encoding.

Images are held as linear-light float64 rasters in [0, 1] together with a
boolean validity mask. Masked pixels stay in the raster so that spatial
operations keep their geometry; estimators simply skip them.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import png

from .exceptions import (
    DegenerateEstimateError,
    DegenerateIlluminantError,
    ImageFormatError,
    ParameterError,
)

PathLike = Union[str, os.PathLike]


@dataclass(frozen=True, eq=False)
class LinearImage:
    """Immutable H x W x 3 linear RGB raster with a per-pixel validity mask.

    ``mask[i, j]`` is True when pixel (i, j) participates in estimation.
    """

    data: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ImageFormatError(f"expected an H x W x 3 array, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ImageFormatError(f"zero-dimension image {data.shape[:2]}")
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != data.shape[:2]:
            raise ImageFormatError(f"mask shape {mask.shape} does not match image {data.shape[:2]}")
        if data.size and (data.min() < 0.0 or data.max() > 1.0):
            raise ParameterError("pixel values must lie in [0, 1]")
        _freeze(self, data, mask)

    @classmethod
    def from_array(cls, data, mask=None) -> "LinearImage":
        data = np.asarray(data, dtype=np.float64)
        if mask is None:
            mask = np.ones(data.shape[:2], dtype=bool)
        return cls(data, mask)

    @classmethod
    def _wrap(cls, data: np.ndarray, mask: np.ndarray) -> "LinearImage":
        # Internal constructor for trusted arrays; skips the O(N) range check.
        # Also used for derivative magnitudes, which may exceed 1.
        obj = object.__new__(cls)
        _freeze(obj, np.asarray(data, dtype=np.float64), np.asarray(mask, dtype=bool))
        return obj

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]

    @property
    def n_valid(self) -> int:
        return int(np.count_nonzero(self.mask))

    def with_mask(self, mask: np.ndarray) -> "LinearImage":
        """Return a copy whose mask is the logical AND of the current mask and ``mask``."""
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != self.shape:
            raise ImageFormatError(f"mask shape {mask.shape} does not match image {self.shape}")
        return LinearImage._wrap(self.data, self.mask & mask)


def _freeze(obj, data, mask):
    if data.flags.writeable:
        data = data.view()
        data.flags.writeable = False
    if mask.flags.writeable:
        mask = mask.view()
        mask.flags.writeable = False
    object.__setattr__(obj, "data", data)
    object.__setattr__(obj, "mask", mask)


@dataclass(frozen=True)
class IlluminantEstimate:
    """Direction of the light source, stored with unit L2 norm."""

    rgb: tuple[float, float, float]

    def __post_init__(self):
        v = np.asarray(self.rgb, dtype=np.float64).reshape(-1)
        if v.shape != (3,):
            raise ParameterError(f"illuminant must have 3 components, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise DegenerateEstimateError("illuminant has non-finite components")
        if np.any(v < 0):
            raise ParameterError("illuminant components must be nonnegative")
        norm = math.sqrt(float(v @ v))
        if norm == 0.0:
            raise DegenerateEstimateError("illuminant vector is all zeros")
        object.__setattr__(self, "rgb", tuple(float(c) for c in v / norm))

    def as_array(self) -> np.ndarray:
        return np.array(self.rgb)


@dataclass(frozen=True)
class PreprocessConfig:
    """Dataset preprocessing settings.

    Attributes:
        saturation_fraction: pixels with any channel strictly above this
            fraction of full scale are masked out (0.95 Gehler-Shi, 0.97 NUS).
        source_bit_depth: effective sensor bit depth. When None, the container
            depth (PNG bit depth or PPM maxval) sets full scale.
        quantize_to_8bit: round responses to the 8-bit grid.
        clip_before_quantize: order of the two steps above.
        black_level: sensor offset in raw counts, subtracted before normalizing.
    """

    saturation_fraction: float = 1.0
    source_bit_depth: Optional[int] = None
    quantize_to_8bit: bool = False
    clip_before_quantize: bool = True
    black_level: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.saturation_fraction <= 1.0):
            raise ParameterError(f"saturation_fraction must be in (0, 1], got {self.saturation_fraction}")
        if self.source_bit_depth is not None and self.source_bit_depth < 8:
            raise ParameterError(f"source_bit_depth must be >= 8, got {self.source_bit_depth}")
        if self.black_level < 0:
            raise ParameterError("black_level must be nonnegative")


# ---------------------------------------------------------------------------
# Decoding


def _read_netpbm(buf: bytes) -> tuple[np.ndarray, int]:
    """Parse binary P5/P6 into (H x W x C uint array, maxval)."""
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError("not a binary PGM/PPM file")
    channels = 3 if magic == b"P6" else 1
    fields = []
    pos = 2
    n = len(buf)
    while len(fields) < 3:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and buf[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated or malformed netpbm header")
        fields.append(int(buf[start:pos]))
    # exactly one whitespace byte separates header from raster
    if pos >= n or not buf[pos : pos + 1].isspace():
        raise ImageFormatError("truncated or malformed netpbm header")
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ImageFormatError(f"zero-dimension image {height}x{width}")
    if not (1 <= maxval <= 65535):
        raise ImageFormatError(f"unsupported maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    need = count * dtype.itemsize
    if len(buf) - pos < need:
        raise ImageFormatError("truncated netpbm raster")
    raster = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
    return raster.reshape(height, width, channels).astype(np.uint16), maxval


def _read_png(path: PathLike) -> tuple[np.ndarray, int]:
    try:
        width, height, rows, info = png.Reader(filename=os.fspath(path)).asDirect()
        if width < 1 or height < 1:
            raise ImageFormatError(f"zero-dimension image {height}x{width}")
        raster = np.vstack([np.asarray(r, dtype=np.uint16) for r in rows])
    except png.Error as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc
    bitdepth = info["bitdepth"]
    if bitdepth not in (8, 16) and not (info["greyscale"] and bitdepth < 8):
        raise ImageFormatError(f"unsupported PNG bit depth {bitdepth}")
    planes = info["planes"]
    raster = raster.reshape(height, width, planes)
    if info["alpha"]:
        raster = raster[..., :-1]
    return raster, (1 << bitdepth) - 1


def read_raster(path: PathLike) -> tuple[np.ndarray, int]:
    """Decode a PNG or binary PGM/PPM file.

    Returns the raw integer raster (H x W x C, C in {1, 3}) and the container
    full-scale value.
    """
    with open(path, "rb") as fh:
        head = fh.read(8)
        if head.startswith(b"\x89PNG\r\n\x1a\n"):
            fh.close()
            return _read_png(path)
        if head[:2] in (b"P5", b"P6"):
            return _read_netpbm(head + fh.read())
    raise ImageFormatError(f"{path}: unsupported image format")


def load_image(path: PathLike, config: PreprocessConfig = PreprocessConfig()) -> LinearImage:
    """Load a linear-light image normalized to [0, 1] with an all-true mask.

    Values are divided by the container maximum, or by ``2**source_bit_depth - 1``
    when the config sets an explicit sensor depth. No gamma decoding is applied.
    """
    raster, full_scale = read_raster(path)
    if config.source_bit_depth is not None:
        full_scale = (1 << config.source_bit_depth) - 1
    if raster.shape[2] == 1:
        raster = np.repeat(raster, 3, axis=2)
    data = raster.astype(np.float64)
    if config.black_level:
        data = np.maximum(data - config.black_level, 0.0)
        full_scale = full_scale - config.black_level
    data /= full_scale
    np.minimum(data, 1.0, out=data)
    return LinearImage._wrap(data, np.ones(data.shape[:2], dtype=bool))


def load_mask(path: PathLike, shape: Optional[Sequence[int]] = None) -> np.ndarray:
    """Load a single-channel mask file; nonzero pixels are valid."""
    raster, _ = read_raster(path)
    mask = np.any(raster != 0, axis=2)
    if shape is not None and mask.shape != tuple(shape):
        raise ImageFormatError(f"mask {path} has shape {mask.shape}, expected {tuple(shape)}")
    return mask


# ---------------------------------------------------------------------------
# Preprocessing


def clip_saturated(image: LinearImage, config: PreprocessConfig) -> LinearImage:
    """Mask every pixel with any channel strictly above the saturation fraction."""
    saturated = np.any(image.data > config.saturation_fraction, axis=2)
    return LinearImage._wrap(image.data, image.mask & ~saturated)


def quantize_8bit(image: LinearImage) -> LinearImage:
    # round half up, so the grid is the same on every platform
    q = np.floor(image.data * 255.0 + 0.5) / 255.0
    return LinearImage._wrap(q, image.mask)


def preprocess(image: LinearImage, config: PreprocessConfig) -> LinearImage:
    """Apply saturation clipping and optional 8-bit quantization in configured order."""
    if config.quantize_to_8bit and not config.clip_before_quantize:
        image = quantize_8bit(image)
    if config.saturation_fraction < 1.0:
        image = clip_saturated(image, config)
    if config.quantize_to_8bit and config.clip_before_quantize:
        image = quantize_8bit(image)
    return image


# ---------------------------------------------------------------------------
# Correction and display


def correct_image(image: LinearImage, illuminant: Union[IlluminantEstimate, Sequence[float]]) -> LinearImage:
    """Divide out the illuminant, channel by channel.

    The illuminant is rescaled to max 1 first, so a white surface maps to the
    brightest achromatic value; results are clamped to [0, 1].
    """
    e = np.asarray(illuminant.rgb if isinstance(illuminant, IlluminantEstimate) else illuminant, dtype=np.float64)
    if e.shape != (3,):
        raise ParameterError("illuminant must have 3 components")
    if np.any(e <= 0):
        raise DegenerateIlluminantError(f"cannot divide by illuminant {tuple(e)}")
    e = e / e.max()
    out = np.clip(image.data / e, 0.0, 1.0)
    return LinearImage._wrap(out, image.mask)


def gamma_encode(image: LinearImage, gamma: float = 2.2) -> LinearImage:
    """Display encoding v -> v**(1/gamma). Never feed the result back into estimation."""
    if not gamma > 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    return LinearImage._wrap(np.power(image.data, 1.0 / gamma), image.mask)


def to_uint8(image: LinearImage) -> np.ndarray:
    return (np.floor(image.data * 255.0 + 0.5)).astype(np.uint8)


def save_png(path: PathLike, image: LinearImage, gamma: Optional[float] = None) -> None:
    """Write an 8-bit RGB PNG, optionally gamma-encoded for display."""
    if gamma is not None:
        image = gamma_encode(image, gamma)
    pixels = to_uint8(image)
    h, w, _ = pixels.shape
    writer = png.Writer(w, h, greyscale=False, bitdepth=8)
    with open(path, "wb") as fh:
        writer.write(fh, pixels.reshape(h, w * 3))


def save_ppm(path: PathLike, image: LinearImage, bit_depth: int = 8) -> None:
    """Write a binary PPM at 8 or 16 bits per channel (linear values, no gamma)."""
    if bit_depth not in (8, 16):
        raise ParameterError("bit_depth must be 8 or 16")
    maxval = (1 << bit_depth) - 1
    raster = np.floor(image.data * maxval + 0.5)
    raster = raster.astype(">u2" if bit_depth == 16 else "u1")
    h, w, _ = raster.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n%d\n" % (w, h, maxval))
        fh.write(raster.tobytes())


def save_png16(path: PathLike, image: LinearImage) -> None:
    """Write a 16-bit linear RGB PNG."""
    raster = np.floor(image.data * 65535.0 + 0.5).astype(np.uint16)
    h, w, _ = raster.shape
    writer = png.Writer(w, h, greyscale=False, bitdepth=16)
    with open(path, "wb") as fh:
        writer.write(fh, raster.reshape(h, w * 3))


def save_mask(path: PathLike, mask: np.ndarray) -> None:
    """Write a mask as an 8-bit greyscale PNG (255 = valid)."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    writer = png.Writer(w, h, greyscale=True, bitdepth=8)
    with open(path, "wb") as fh:
        writer.write(fh, (mask.astype(np.uint8) * 255))
