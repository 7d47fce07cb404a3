"""Biased-uniform weak supervision.

For each supervised state dimension the label distribution is a uniform
interval of width ``delta * |X_i|`` whose centre is itself shifted away from
the true value by a uniform offset of at most half that width.  Only a
finite set of samples from the interval is ever handed to the learner.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envsim import EnvSpec

DEFAULT_SAMPLES = 50


@dataclass(frozen=True)
class SupervisionConfig:
    delta: float = 0.05
    samples_per_step: int = DEFAULT_SAMPLES
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.delta < 1.0:
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")
        if self.samples_per_step < 1:
            raise ValueError("samples_per_step must be at least 1")


@dataclass(frozen=True)
class ProxySet:
    samples: np.ndarray  # (L, n_supervised)
    center: np.ndarray  # (n_supervised,) shifted interval centre
    half_width: np.ndarray  # (n_supervised,)

    @property
    def size(self) -> int:
        return self.samples.shape[0]


def half_widths(spec: EnvSpec, delta: float) -> np.ndarray:
    return 0.5 * delta * spec.supervised_widths


def sample_supervision(x, spec: EnvSpec, cfg: SupervisionConfig, rng: np.random.Generator) -> ProxySet:
    """Draw one proxy set for the true state ``x``.

    The centre offset is redrawn on every call, i.e. independently per time
    step and per dimension.
    """
    samples, centers = sample_supervision_batch(spec.validate_state(x)[None], spec, cfg, rng)
    return ProxySet(samples[0], centers[0], half_widths(spec, cfg.delta))


def sample_supervision_batch(states: np.ndarray, spec: EnvSpec, cfg: SupervisionConfig,
                             rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Proxy sets for a whole trajectory at once.

    Returns ``(samples, centers)`` of shapes (T, L, D) and (T, D).
    """
    truth = np.asarray(states, dtype=np.float64)[:, list(spec.supervised)]
    steps, dims = truth.shape
    half = half_widths(spec, cfg.delta)
    if cfg.delta == 0.0:
        return np.repeat(truth[:, None, :], cfg.samples_per_step, axis=1), truth.copy()
    centers = truth + rng.uniform(-half, half, size=(steps, dims))
    unit = rng.uniform(-1.0, 1.0, size=(steps, cfg.samples_per_step, dims))
    samples = centers[:, None, :] + unit * half
    return samples, centers


def empirical_mean(samples) -> np.ndarray:
    """Per-dimension arithmetic mean over the sample axis (second to last)."""
    if isinstance(samples, ProxySet):
        samples = samples.samples
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[-2] < 1:
        raise ValueError("empirical mean of an empty proxy set")
    # shifted by the first sample so identical samples give their value exactly
    ref = samples[..., :1, :]
    return ref[..., 0, :] + (samples - ref).mean(axis=-2)
