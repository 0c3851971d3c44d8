"""Exception hierarchy shared by every module in the package."""


class ColorConstancyError(Exception):
    """Base class for all errors raised by pbpcc."""


class ParameterError(ColorConstancyError, ValueError):
    """A parameter is outside its allowed range."""


class ImageFormatError(ColorConstancyError, ValueError):
    """An image or manifest file could not be parsed."""


class DimensionError(ColorConstancyError, ValueError):
    """An image is too small for the requested operation."""


class EmptySelectionError(ColorConstancyError, ValueError):
    """No pixel is available to estimate from."""


class DegenerateEstimateError(ColorConstancyError, ValueError):
    """An estimate or reference vector is all zeros."""


class DegenerateIlluminantError(ColorConstancyError, ValueError):
    """An illuminant has a zero channel and cannot be divided out."""


class DegenerateBrightnessError(ColorConstancyError, ValueError):
    """The total modified brightness of an image is zero."""
