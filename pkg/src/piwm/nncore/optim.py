"""Adam, the warmup + cosine learning-rate schedule and global-norm clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .layers import Param


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainSchedule:
    lr: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 200
    warmup_epochs: int = 5
    patience: int = 20
    clip_norm: float = 1.0
    min_lr_ratio: float = 0.01

    def __post_init__(self):
        for name in ("lr", "batch_size", "max_epochs", "patience", "clip_norm", "min_lr_ratio"):
            if not getattr(self, name) > 0:
                raise ValueError(f"TrainSchedule.{name} must be positive")
        if self.warmup_epochs < 0:
            raise ValueError("TrainSchedule.warmup_epochs must be non-negative")
        if self.warmup_epochs >= self.max_epochs:
            raise ValueError("warmup must end before max_epochs")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")

    @property
    def min_lr(self) -> float:
        return self.lr * self.min_lr_ratio


def lr_at(schedule: TrainSchedule, epoch: float) -> float:
    """Linear ramp to ``lr`` at ``warmup_epochs``, then cosine down to ``min_lr`` at ``max_epochs``.

    The ramp starts at ``lr / (warmup + 1)`` so epoch 0 still moves.
    """
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    s = schedule
    if epoch < s.warmup_epochs:
        return s.lr * (epoch + 1) / (s.warmup_epochs + 1)
    progress = min((epoch - s.warmup_epochs) / (s.max_epochs - s.warmup_epochs), 1.0)
    return s.min_lr + (s.lr - s.min_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads))


def clip_global_norm(grads, max_norm: float) -> list[np.ndarray]:
    """Rescale all arrays jointly so their global L2 norm is at most ``max_norm``."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return [g * scale for g in grads]


class Adam:
    """Adam with bias correction over a fixed list of ``Param`` objects.

    Frozen parameters are skipped entirely.  A step with any non-finite
    gradient raises before touching anything.
    """

    def __init__(self, params: list[Param], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self, lr: float, grads: list[np.ndarray] | None = None):
        if grads is None:
            grads = [p.grad for p in self.params]
        if len(grads) != len(self.params):
            raise ValueError("one gradient per parameter required")
        for p, g in zip(self.params, grads):
            if g.shape != p.value.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter {p.name!r} shape {p.value.shape}")
            if p.trainable and not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(f"non-finite gradient for parameter {p.name!r}; step rejected")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if not p.trainable:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train_step(params: list[Param], opt: Adam, lr: float, clip_norm: float | None) -> float:
    """Clip the accumulated gradients, apply one Adam step and return the pre-clip norm."""
    live = [p for p in params if p.trainable]
    norm = global_norm([p.grad for p in live])
    grads = [p.grad for p in params]
    if clip_norm is not None and norm > clip_norm:
        grads = [g * (clip_norm / norm) for g in grads]
    opt.step(lr, grads)
    return norm
