from .geometry import ball_query, farthest_point_sampling, three_nn_weights
from .io import load_params, save_params
from .network import (
    DenoiserConfig,
    PointDenoiser,
    backward,
    forward,
    init_params,
    layer_shapes,
    param_count,
    time_embedding,
)
from .train import TrainConfig, TrainingDiverged, fit, loss_and_grad, loss_gradient

__all__ = [
    "DenoiserConfig",
    "PointDenoiser",
    "TrainConfig",
    "TrainingDiverged",
    "backward",
    "ball_query",
    "farthest_point_sampling",
    "fit",
    "forward",
    "init_params",
    "layer_shapes",
    "load_params",
    "loss_and_grad",
    "loss_gradient",
    "param_count",
    "save_params",
    "three_nn_weights",
    "time_embedding",
]
