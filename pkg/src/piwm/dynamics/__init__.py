"""Structured second-order latent dynamics with learnable physical parameters."""

from .check import HORIZONS, dyn_grad_suite
from .fit import (DYN_SCHEDULE, FitResult, Windows, evaluate_loss, fit_dynamics, init_theta, make_windows,
                  relative_errors)
from .models import (MODELS, BicycleDynamics, CartPoleDynamics, DynamicsModel, LanderDynamics,
                     OutOfBoundsError, model_for)
from .rollout import DynRollout, dyn_grad, dyn_loss, dyn_step, loss_and_grad, rollout_dyn

__all__ = [
    "DYN_SCHEDULE", "HORIZONS", "BicycleDynamics", "CartPoleDynamics", "DynRollout", "DynamicsModel", "FitResult",
    "LanderDynamics", "MODELS", "OutOfBoundsError", "Windows", "dyn_grad", "dyn_grad_suite", "dyn_loss", "dyn_step",
    "evaluate_loss", "fit_dynamics", "init_theta", "loss_and_grad", "make_windows", "model_for",
    "relative_errors", "rollout_dyn",
]
