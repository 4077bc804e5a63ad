"""Blind super-resolution with degradation-aware guided diffusion sampling."""

__version__ = "0.1.0"

from .autodiff import Tensor, no_grad
from .daware import DegradationAwareModels, OperatorBackedModels, train_daware
from .degradation import (
    GaussianKernel,
    PairedDataset,
    degrade,
    load_dataset,
    make_kernel,
    sample_kernel,
    save_dataset,
    synth_dataset,
)
from .diffusion import (
    Schedule,
    build_schedule,
    load_diffusion,
    sample_unconditional,
    save_diffusion,
    spaced_subsequence,
    train_eps_model,
)
from .errors import (
    ArchiveError,
    ContractError,
    DimensionError,
    GuidedSRError,
    NotFittedError,
    NumericalError,
    TrainingAbort,
)
from .estimators import (
    BlurKernelRegressor,
    DegradationAwareSR,
    DiffusionPrior,
    GuidedRestorer,
)
from .experiment import Cell, parse_cells, run_experiment
from .guidance import (
    GuidanceConfig,
    perturb_input,
    sample_restore,
    train_kernel_estimator,
)
from .linops import (
    LinearOperator,
    build_avgpool_operator,
    build_conv_stride_operator,
    range_null_rectify,
)
from .metrics import psnr, ssim
from .pnm import load_pnm, save_pgm, save_ppm
from .report import RowResult, aggregate, load_json, read_csv, write_csv, write_json

__all__ = [
    "__version__",
    # tensors and errors
    "Tensor",
    "no_grad",
    "GuidedSRError",
    "DimensionError",
    "ContractError",
    "NumericalError",
    "TrainingAbort",
    "ArchiveError",
    "NotFittedError",
    # data synthesis
    "GaussianKernel",
    "PairedDataset",
    "make_kernel",
    "sample_kernel",
    "degrade",
    "synth_dataset",
    "save_dataset",
    "load_dataset",
    # operators
    "LinearOperator",
    "build_avgpool_operator",
    "build_conv_stride_operator",
    "range_null_rectify",
    # diffusion prior
    "Schedule",
    "build_schedule",
    "spaced_subsequence",
    "train_eps_model",
    "sample_unconditional",
    "save_diffusion",
    "load_diffusion",
    # degradation-aware models
    "DegradationAwareModels",
    "OperatorBackedModels",
    "train_daware",
    # guided sampling
    "GuidanceConfig",
    "perturb_input",
    "sample_restore",
    "train_kernel_estimator",
    # estimator facade
    "DiffusionPrior",
    "DegradationAwareSR",
    "BlurKernelRegressor",
    "GuidedRestorer",
    # evaluation
    "psnr",
    "ssim",
    "Cell",
    "parse_cells",
    "run_experiment",
    "RowResult",
    "write_csv",
    "read_csv",
    "write_json",
    "load_json",
    "aggregate",
    "save_pgm",
    "save_ppm",
    "load_pnm",
]
