"""Block compressive-sensing reconstruction with a hybrid low-rank + denoiser prior."""

from .denoise import (
    DenoiseRequest,
    DenoiserKind,
    ExternalDenoiser,
    denoise,
    external_denoise,
    native_dct_denoise,
)
from .image import Image, load_image, psnr, save_image
from .lowrank import LowRankStack, WnnmParams, lowrank_pass, svd, wnnm_shrink
from .patches import (
    GroupMatrix,
    PatchGeometry,
    PatchGroupIndex,
    aggregate,
    build_group_index,
    coverage,
    extract_group,
)
from .sensing import (
    BlockSensor,
    Measurements,
    adjoint,
    initial_estimate,
    load_measurements,
    make_sensor,
    measure,
    save_measurements,
)
from .solver import (
    SolverConfig,
    SolverState,
    dual_update,
    gradient,
    reconstruct,
    relative_change,
    x_update,
    z_update,
)

__version__ = "0.1.0"

__all__ = [
    "BlockSensor",
    "DenoiseRequest",
    "DenoiserKind",
    "ExternalDenoiser",
    "GroupMatrix",
    "Image",
    "LowRankStack",
    "Measurements",
    "PatchGeometry",
    "PatchGroupIndex",
    "SolverConfig",
    "SolverState",
    "WnnmParams",
    "adjoint",
    "aggregate",
    "build_group_index",
    "coverage",
    "denoise",
    "dual_update",
    "external_denoise",
    "extract_group",
    "gradient",
    "initial_estimate",
    "load_image",
    "load_measurements",
    "lowrank_pass",
    "make_sensor",
    "measure",
    "native_dct_denoise",
    "psnr",
    "reconstruct",
    "relative_change",
    "save_image",
    "save_measurements",
    "svd",
    "wnnm_shrink",
    "x_update",
    "z_update",
]
