"""Diffusion image models with hard-shared denoiser weights across tasks.

The package trains a single noise-prediction UNet whose first and last
stages exist once per task while everything between is shared, alongside
unconditional and class-conditional baselines, with ancestral sampling,
separable checkpoints, and pixel-space FID / SSIM evaluation.
"""

from .checkpoint import CheckpointBundle, load_checkpoint, save_checkpoint
from .datasets import (
    TaskDataset,
    batches,
    denormalize,
    load_cifar,
    load_idx,
    normalize,
    partition_tasks,
    synthetic_tasks,
)
from .diffusion import (
    NoiseSchedule,
    build_linear_schedule,
    denoise_from,
    denoise_step,
    diffuse,
    posterior_sigma2,
    sample_chain,
)
from .errors import ConfigError, DataError, NumericError, NumericWarning
from .estimator import DiffusionGenerator
from .metrics import (
    GaussianStats,
    MetricsReport,
    ReportRow,
    evaluate,
    fid,
    fit_gaussian,
    frechet_distance,
    generate_samples,
    pool_features,
    reconstruct,
    ssim,
)
from .training import (
    AdamState,
    LossTrace,
    TrainConfig,
    adam_step,
    fine_tune_new_task,
    gradient_check,
    loss_mse,
    train,
    train_step,
)
from .unet import (
    ModelConfig,
    NoisePredictor,
    chain_predictor,
    init_model,
    predict_noise,
    timestep_embedding,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "CheckpointBundle",
    "ConfigError",
    "DataError",
    "DiffusionGenerator",
    "GaussianStats",
    "LossTrace",
    "MetricsReport",
    "ModelConfig",
    "NoisePredictor",
    "NoiseSchedule",
    "NumericError",
    "NumericWarning",
    "ReportRow",
    "TaskDataset",
    "TrainConfig",
    "adam_step",
    "batches",
    "build_linear_schedule",
    "chain_predictor",
    "denoise_from",
    "denoise_step",
    "denormalize",
    "diffuse",
    "evaluate",
    "fid",
    "fine_tune_new_task",
    "fit_gaussian",
    "frechet_distance",
    "generate_samples",
    "gradient_check",
    "init_model",
    "load_checkpoint",
    "load_cifar",
    "load_idx",
    "loss_mse",
    "normalize",
    "partition_tasks",
    "pool_features",
    "posterior_sigma2",
    "predict_noise",
    "reconstruct",
    "sample_chain",
    "save_checkpoint",
    "ssim",
    "synthetic_tasks",
    "timestep_embedding",
    "train",
    "train_step",
    "__version__",
]
