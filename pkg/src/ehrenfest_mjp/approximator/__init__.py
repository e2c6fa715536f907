from .checkpoint import load_checkpoint, read_tensors, save_checkpoint, write_tensors
from .losses import (
    LOSS_HEADS,
    LossResult,
    SampleBatch,
    bayes_optimal_heads,
    discretized_gaussian_log_masses,
    evaluate_loss,
    grid_batch,
    loss_and_grad,
    loss_cond_exp,
    loss_gauss,
    loss_ml,
    loss_ou,
    loss_taylor,
    loss_taylor2,
    regression_targets,
)
from .networks import (
    FunctionApproximator,
    MLPApproximator,
    TabularApproximator,
    approximator_from_config,
    sinusoidal_embedding,
)
from .training import Adam, TrainConfig, TrainResult, draw_batch, train

__all__ = [
    "Adam",
    "FunctionApproximator",
    "LOSS_HEADS",
    "LossResult",
    "MLPApproximator",
    "SampleBatch",
    "TabularApproximator",
    "TrainConfig",
    "TrainResult",
    "approximator_from_config",
    "bayes_optimal_heads",
    "discretized_gaussian_log_masses",
    "draw_batch",
    "evaluate_loss",
    "grid_batch",
    "load_checkpoint",
    "loss_and_grad",
    "loss_cond_exp",
    "loss_gauss",
    "loss_ml",
    "loss_ou",
    "loss_taylor",
    "loss_taylor2",
    "read_tensors",
    "regression_targets",
    "save_checkpoint",
    "sinusoidal_embedding",
    "train",
    "write_tensors",
]
