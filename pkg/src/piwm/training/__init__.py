"""Staged training pipeline for the four world-model variants."""

from .config import (ARCHITECTURES, DYNAMICS_SCHEDULE, LATENT_KINDS, STAGES, ArchConfig, ConfigError,
                     default_stages, network_schedule)
from .pipeline import (RunArtifact, TrainingDivergedError, WorldModel, dynamics_windows, edge_margin, load_run,
                       run_stage, run_variant, save_run, train_stage_dynamics, train_stage_physical,
                       train_stage_representation, train_stage_vision)
from .recovery import (RECOVERY_EPSILON, RECOVERY_HORIZON, RECOVERY_SCHEDULE, bypass_fit, recovery_dataset,
                       recovery_errors)

__all__ = [
    "ARCHITECTURES", "ArchConfig", "RECOVERY_EPSILON", "RECOVERY_HORIZON", "RECOVERY_SCHEDULE", "ConfigError", "DYNAMICS_SCHEDULE", "LATENT_KINDS", "RunArtifact", "STAGES",
    "TrainingDivergedError", "WorldModel", "bypass_fit", "default_stages", "dynamics_windows", "edge_margin", "load_run",
    "network_schedule", "recovery_dataset", "recovery_errors", "run_stage", "run_variant", "save_run", "train_stage_dynamics", "train_stage_physical",
    "train_stage_representation", "train_stage_vision",
]
