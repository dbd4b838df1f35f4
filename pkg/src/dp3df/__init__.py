"""Joint video super-resolution, denoising and low-light enhancement with
per-pixel parametric 3D filters."""

from .errors import ContainerFormatError, ContractViolation, TrainingDiverged
from .filters import (
    FilterField,
    FilterGeometry,
    apply_dp3df,
    apply_dp3df_backward,
    combine_residual,
    identity_field,
    normalize_filters,
    reduce_to_special_case,
)
from .losses import LossWeights, SmoothnessWeights, recon_loss, smoothness_loss, smoothness_weights, total_loss
from .metrics import EvalReport, psnr, ssim
from .predictor import Predictor, PredictorConfig, init_weights
from .trainer import TrainConfig, adam_step, augment, cosine_lr, train

__version__ = "0.1.0"

__all__ = [
    "ContainerFormatError",
    "ContractViolation",
    "TrainingDiverged",
    "FilterField",
    "FilterGeometry",
    "apply_dp3df",
    "apply_dp3df_backward",
    "combine_residual",
    "identity_field",
    "normalize_filters",
    "reduce_to_special_case",
    "LossWeights",
    "SmoothnessWeights",
    "recon_loss",
    "smoothness_loss",
    "smoothness_weights",
    "total_loss",
    "EvalReport",
    "psnr",
    "ssim",
    "Predictor",
    "PredictorConfig",
    "init_weights",
    "TrainConfig",
    "adam_step",
    "augment",
    "cosine_lr",
    "train",
    "__version__",
]
