"""Unlearning by local output smoothing, built on a small numpy autodiff engine."""

from jitlab.autodiff import Tensor
from jitlab.data import ForgetSpec, LabeledDataset, split_forget
from jitlab.errors import ConfigError, ContractError, DimensionError, DomainError, FormatError, JitError
from jitlab.models import Model, ModelSpec, TrainConfig, init_model, load_model, save_model, train_sgd
from jitlab.unlearn import UnlearnConfig, jit_loss, jit_unlearn

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "DimensionError", "DomainError", "ForgetSpec", "FormatError", "JitError",
    "LabeledDataset", "Model", "ModelSpec", "Tensor", "TrainConfig", "UnlearnConfig", "init_model", "jit_loss",
    "jit_unlearn", "load_model", "save_model", "split_forget", "train_sgd",
]
