"""Multi-scale bilateral grids for photometric correction of rendered images."""

from .grid import (
    AffineCoeffs,
    BilateralGrid,
    CoeffField,
    DEFAULT_GUIDANCE_FACTORS,
    DEFAULT_LEVEL_SHAPES,
    EnhanceResult,
    MultiScaleGrid,
    apply_coeffs,
    apply_field,
    compose_fields,
    enhance,
    identity_coeffs,
    invert_field,
    level_field,
    slice_grid,
    upsample_bilinear,
)
from .image import (
    GuidanceMap,
    Image,
    downsample_area,
    grayscale,
    l1_error,
    psnr,
    read_ppm,
    ssim,
    write_ppm,
    PpmError,
)
from .diff import (
    central_difference,
    finite_diff_grad,
    loss_and_grad,
    loss_breakdown_and_grad,
    pack_params,
    param_count,
    relative_error,
    unpack_params,
)
from .loss import LossBreakdown, LossConfig, circle_loss, recon_loss, total_loss, tv_loss
from .optim import AdamState, FitConfig, FitResult, adam_step, ema, fit, trace_to_csv
from .synth import Perturbation, SynthPair, fit_global_affine_lstsq, gen_base, make_pair, perturb
from .temporal import GridTimeline, interp_weight, interpolate
from .gridio import (
    GridFileError,
    read_grid_file,
    read_timeline_file,
    write_grid_file,
    write_timeline_file,
)
from .config import MODE_FACTORS, MODE_LRS, MODE_SHAPES, RunConfig, build_config

__version__ = "0.1.0"
