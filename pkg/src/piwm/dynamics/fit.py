"""Fitting θ by Adam on the horizon loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..nncore import Adam, Param, TrainSchedule, clip_global_norm, lr_at
from .models import DynamicsModel
from .rollout import dyn_loss, loss_and_grad, rollout_dyn

DYN_SCHEDULE = TrainSchedule(lr=0.02, batch_size=256, max_epochs=200, warmup_epochs=5, patience=40)


@dataclass(frozen=True)
class Windows:
    """Training windows: seed pair, teacher actions and the target at t+H."""

    z0: np.ndarray  # (W, D)
    z1: np.ndarray  # (W, D)
    actions: np.ndarray  # (W, H - 1, A)
    target: np.ndarray  # (W, D)
    trajectory: np.ndarray  # (W,) source trajectory index

    def __len__(self):
        return self.z0.shape[0]

    def take(self, idx) -> "Windows":
        return Windows(self.z0[idx], self.z1[idx], self.actions[idx], self.target[idx], self.trajectory[idx])


def make_windows(latents, actions, targets, horizon: int, stride: int = 1,
                 low=None, high=None, margin=None) -> Windows:
    """Slice every trajectory into windows starting at t = 0, stride, ...

    ``latents`` (N, M, D) supply the seeds, ``targets`` (N, M, D) the
    supervision at t+H and ``actions`` (N, M, A) are indexed so that
    ``actions[:, t]`` drives step t -> t+1.

    With ``low``/``high``/``margin`` given, windows in which any target
    along t..t+H comes within ``margin`` of a range edge are dropped; the
    simulator clamps there, which no smooth model reproduces.
    """
    latents = np.asarray(latents, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    n, m, _ = latents.shape
    if horizon < 2:
        raise ValueError("horizon must be at least 2")
    if horizon > m - 1:
        raise ValueError(f"horizon {horizon} needs trajectories longer than {horizon}, have {m}")
    starts = np.arange(0, m - horizon, stride)
    traj = np.repeat(np.arange(n), len(starts))
    t = np.tile(starts, n)
    if margin is not None:
        near = np.any((targets <= np.asarray(low) + margin) | (targets >= np.asarray(high) - margin), axis=-1)
        # running count lets each window test its whole span in O(1)
        count = np.concatenate([np.zeros((n, 1), int), np.cumsum(near, axis=1)], axis=1)
        ok = count[traj, t + horizon + 1] - count[traj, t] == 0
        traj, t = traj[ok], t[ok]
    steps = t[:, None] + np.arange(1, horizon)[None]
    return Windows(latents[traj, t], latents[traj, t + 1], actions[traj[:, None], steps],
                   targets[traj, t + horizon], traj)


@dataclass
class FitResult:
    theta: np.ndarray
    best_epoch: int
    train_curve: list[float]
    val_curve: list[float]
    theta_curve: list[np.ndarray]
    projected: bool = False  # bound projection fired at some point
    diverged: bool = False
    projected_at_best: bool = False
    notes: list[str] = field(default_factory=list)


def evaluate_loss(model: DynamicsModel, windows: Windows, theta, chunk: int = 4096) -> float:
    total = 0.0
    for s in range(0, len(windows), chunk):
        w = windows.take(slice(s, s + chunk))
        ro = rollout_dyn(model, w.z0, w.z1, w.actions, theta)
        total += dyn_loss(ro, w.target) * len(w)
    return total / len(windows)


def init_theta(model: DynamicsModel, rng: np.random.Generator, low: float = 0.3, high: float = 3.0) -> np.ndarray:
    """Uniform in [low, high] times each parameter's nominal scale, then projected."""
    theta = rng.uniform(low, high, model.n_params) * model.spec.param_scales
    return model.project(theta)[0]


def fit_dynamics(model: DynamicsModel, train: Windows, val: Windows | None, theta0,
                 schedule: TrainSchedule = DYN_SCHEDULE, seed: int = 0, log=None) -> FitResult:
    """Adam on u = θ / scale with global-norm clipping and bound projection.

    Returns the θ with the lowest validation loss (training loss when no
    validation windows are given).  A non-finite loss stops the fit and
    keeps the last finite θ.
    """
    scale = model.spec.param_scales
    theta = model.project(theta0)[0]
    u = Param(theta / scale, "theta_normalized")
    opt = Adam([u])
    rng = np.random.default_rng([seed, 23])
    check = val if val is not None and len(val) else train

    best = evaluate_loss(model, check, theta)
    result = FitResult(theta.copy(), 0, [], [best], [theta.copy()])
    stale = 0
    for epoch in range(schedule.max_epochs):
        lr = lr_at(schedule, epoch)
        order = rng.permutation(len(train))
        losses = []
        try:
            for s in range(0, len(order), schedule.batch_size):
                w = train.take(order[s:s + schedule.batch_size])
                loss, grad = loss_and_grad(model, w.z0, w.z1, w.actions, w.target, u.value * scale)
                if not np.isfinite(loss):
                    raise FloatingPointError("non-finite dynamics loss")
                (g,) = clip_global_norm([grad * scale], schedule.clip_norm)
                opt.step(lr, [g])
                projected, hit = model.project(u.value * scale)
                if hit:
                    result.projected = True
                    u.value[...] = projected / scale
                losses.append(loss)
            val_loss = evaluate_loss(model, check, u.value * scale)
            if not np.isfinite(val_loss):
                raise FloatingPointError("non-finite validation loss")
        except FloatingPointError as exc:
            result.diverged = True
            result.notes.append(f"epoch {epoch}: {exc}; keeping best finite theta")
            break
        theta = u.value * scale
        result.train_curve.append(float(np.mean(losses)))
        result.val_curve.append(val_loss)
        result.theta_curve.append(theta.copy())
        if log is not None:
            log(epoch, lr, result.train_curve[-1], val_loss, theta)
        if val_loss < best:
            best, stale = val_loss, 0
            result.theta, result.best_epoch = theta.copy(), epoch + 1
            lo, hi = model.spec.param_lower, model.spec.param_upper
            result.projected_at_best = bool(np.any((theta <= lo) | (theta >= hi)))
        else:
            stale += 1
            if stale >= schedule.patience:
                break
    return result


def relative_errors(theta, reference) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    return np.abs(theta - reference) / np.abs(reference)
