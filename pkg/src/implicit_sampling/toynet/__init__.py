"""Desk-scale stand-ins for the three implicit-network families."""

from .checkpoint import load_checkpoint, save_checkpoint
from .model import (
    ARCHETYPES,
    ArchConfig,
    ModelConfigError,
    NaNInputError,
    ToyModel,
    backward,
    clamp_to_box,
    default_config,
    forward,
    head,
    init_model,
    loss,
    objective,
    parameter_count,
    predict,
    trilinear,
    value_and_input_grad,
)
from .surface import (
    Extraction,
    MaskedField,
    ModelField,
    ScalarGrid,
    extract_udf_points,
    grid_eval,
    iso_level,
    lattice,
    marching_cubes,
)
from .train import Adam, TrainConfig, TrainingDivergedError, TrainResult, fit_latent, param_hash, train

__all__ = [
    "ARCHETYPES", "Adam", "ArchConfig", "Extraction", "MaskedField", "ModelConfigError",
    "ModelField", "NaNInputError", "ScalarGrid", "ToyModel", "TrainConfig", "TrainResult",
    "TrainingDivergedError", "backward", "clamp_to_box", "default_config", "extract_udf_points",
    "fit_latent", "forward", "grid_eval", "head", "init_model", "iso_level", "lattice",
    "load_checkpoint", "loss", "marching_cubes", "objective", "param_hash", "parameter_count",
    "predict", "save_checkpoint", "train", "trilinear", "value_and_input_grad",
]
