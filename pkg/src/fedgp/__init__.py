"""Federated Gaussian-process regression."""

from .errors import (
    ConfigError,
    FederationError,
    FedGPError,
    InputShapeError,
    NumericalError,
    NumericalWarning,
    ParameterDomainError,
)
from .gp_core import Dataset, GradScaling, Prediction, full_grad, nll, predict, sample_prior
from .kernels import Family, GPParams, KernelSpec, ParamBox, cov_matrix
from .federation import FederationConfig, ScheduleSpec, make_clients_state, run_federation
from .metrics import global_grad_sq_norm, param_sq_error, rmse
from .scenarios import build_scenario, scenario_names
from .config import ExperimentConfig, load_config
from .experiment import run_experiment

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "FederationError", "FedGPError", "InputShapeError", "NumericalError",
    "NumericalWarning", "ParameterDomainError",
    "Dataset", "GradScaling", "Prediction", "full_grad", "nll", "predict", "sample_prior",
    "Family", "GPParams", "KernelSpec", "ParamBox", "cov_matrix",
    "FederationConfig", "ScheduleSpec", "make_clients_state", "run_federation",
    "global_grad_sq_norm", "param_sq_error", "rmse",
    "build_scenario", "scenario_names",
    "ExperimentConfig", "load_config", "run_experiment",
]
