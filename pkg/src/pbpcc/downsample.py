"""Equidistant center-pixel downsampling."""

from __future__ import annotations

from dataclasses import dataclass

from .exceptions import DimensionError, ParameterError
from .imaging import LinearImage


@dataclass(frozen=True)
class DownsampleParams:
    interval: int = 1

    def __post_init__(self):
        if int(self.interval) != self.interval or self.interval < 1:
            raise ParameterError(f"downsampling interval must be an integer >= 1, got {self.interval}")


def downsample_views(data, mask, interval: int):
    """Strided views of ``data`` and ``mask`` keeping one center pixel per block.

    Works on raw arrays so hot paths avoid building intermediate images.
    """
    h, w = mask.shape
    if h < interval or w < interval:
        raise DimensionError(f"image {h}x{w} is smaller than downsampling interval {interval}")
    if interval == 1:
        return data, mask
    c = interval // 2
    rows, cols = h // interval, w // interval
    end_r = c + (rows - 1) * interval + 1
    end_c = c + (cols - 1) * interval + 1
    return (
        data[c:end_r:interval, c:end_c:interval],
        mask[c:end_r:interval, c:end_c:interval],
    )


def equidistant_downsample(image: LinearImage, params: DownsampleParams | int) -> LinearImage:
    """Keep pixel (i*S + S//2, j*S + S//2) of every full S x S block.

    Trailing rows and columns that do not fill a whole block are dropped, so the
    output is floor(H/S) x floor(W/S). No interpolation takes place.
    """
    interval = params.interval if isinstance(params, DownsampleParams) else DownsampleParams(params).interval
    data, mask = downsample_views(image.data, image.mask, interval)
    if interval == 1:
        return image
    return LinearImage._wrap(data, mask)
