"""Architecture and schedule configuration for a training run."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from ..nncore import TrainSchedule

ARCHITECTURES = ("intrinsic", "extrinsic")
LATENT_KINDS = ("continuous", "discrete")
STAGES = {
    "extrinsic": ("vision", "physical", "dynamics"),
    "intrinsic": ("representation", "dynamics"),
}
DYNAMICS_SCHEDULE = TrainSchedule(lr=0.1, batch_size=512, max_epochs=40, warmup_epochs=5, patience=20)


class ConfigError(ValueError):
    pass


def network_schedule(latent: str) -> TrainSchedule:
    """Adam at 1e-4 (continuous) or 1e-3 (discrete), batch 32, 200 epochs, patience 20."""
    return TrainSchedule(lr=1e-4 if latent == "continuous" else 1e-3)


def default_stages(architecture: str, latent: str) -> dict[str, TrainSchedule]:
    out = {name: network_schedule(latent) for name in STAGES[architecture][:-1]}
    out["dynamics"] = DYNAMICS_SCHEDULE
    return out


@dataclass
class ArchConfig:
    architecture: str
    latent: str
    lambda_interp: float = 1.0
    lambda_latent: float = 0.5
    lambda_reg: float = 1.0
    beta_kl: float = 1.0
    commitment: float = 0.25
    latent_dim: int = 64
    codebook_size: int = 512
    hidden: int = 128
    dyn_horizon: int = 10
    val_fraction: float = 0.1
    val_frames: int = 1024
    max_steps_per_epoch: int | None = None
    restart_dead_codes: bool = True
    stages: dict[str, TrainSchedule] = field(default_factory=dict)

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        if self.latent not in LATENT_KINDS:
            raise ConfigError(f"latent must be one of {LATENT_KINDS}, got {self.latent!r}")
        for name in ("lambda_interp", "lambda_latent", "lambda_reg", "beta_kl", "commitment"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not self.stages:
            self.stages = default_stages(self.architecture, self.latent)
        self.stages = {k: v if isinstance(v, TrainSchedule) else TrainSchedule(**v) for k, v in self.stages.items()}
        expected = STAGES[self.architecture]
        if tuple(self.stages) != expected:
            raise ConfigError(f"{self.architecture} runs need stages {expected} in order, got {tuple(self.stages)}")
        if self.dyn_horizon < 2:
            raise ConfigError("dyn_horizon must be at least 2")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")

    @property
    def variant(self) -> str:
        return f"{self.architecture}-{self.latent}"

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "stages"}
        out["stages"] = {k: asdict(v) for k, v in self.stages.items()}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ArchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def checksum(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def with_schedules(self, **overrides) -> "ArchConfig":
        """Copy with some TrainSchedule fields replaced in every network stage."""
        stages = {}
        for name, sched in self.stages.items():
            if name == "dynamics":
                stages[name] = sched
            else:
                stages[name] = TrainSchedule(**{**asdict(sched), **overrides})
        return ArchConfig.from_dict({**self.to_dict(), "stages": stages})
