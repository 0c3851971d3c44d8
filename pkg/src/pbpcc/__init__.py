"""Fast learning-free color constancy: patch-wise bright pixels and Gray-World baselines."""

from .downsample import DownsampleParams, equidistant_downsample
from .estimators import (
    PRESETS,
    GrayFrameworkParams,
    PixelSelection,
    bright_pixels_estimate,
    gaussian_smooth,
    gray_framework_estimate,
    minkowski_estimate,
    spatial_derivative,
)
from .exceptions import (
    ColorConstancyError,
    DegenerateBrightnessError,
    DegenerateEstimateError,
    DegenerateIlluminantError,
    DimensionError,
    EmptySelectionError,
    ImageFormatError,
    ParameterError,
)
from .harness import MethodConfig, make_method, read_manifest, run_dataset
from .imaging import (
    IlluminantEstimate,
    LinearImage,
    PreprocessConfig,
    clip_saturated,
    correct_image,
    gamma_encode,
    load_image,
    preprocess,
    quantize_8bit,
)
from .metrics import ErrorStats, angular_error, brightness_group_analysis, error_stats
from .pbp import (
    PatchAllocation,
    PatchGrid,
    PbpParams,
    allocate_counts,
    build_patch_grid,
    pbp_estimate,
    pbp_preset,
    select_patchwise,
)

__version__ = "0.1.0"
