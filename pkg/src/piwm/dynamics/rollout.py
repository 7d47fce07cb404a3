"""Multi-step latent rollouts, the horizon loss and its exact θ-gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import DynamicsModel


@dataclass(frozen=True)
class DynRollout:
    """Seed pair (z_t, z_{t+1}), actions a_{t+1..t+H-1} and predictions ẑ_{t+2..t+H}."""

    z0: np.ndarray  # (B, D)
    z1: np.ndarray  # (B, D)
    actions: np.ndarray  # (B, H - 1, A)
    predictions: np.ndarray  # (B, H - 1, D)
    sensitivity: np.ndarray | None = None  # (B, D, P): d ẑ_{t+H} / dθ

    @property
    def horizon(self) -> int:
        return self.predictions.shape[1] + 1

    @property
    def final(self) -> np.ndarray:
        return self.predictions[:, -1]

    def states(self) -> np.ndarray:
        """Seeds and predictions stacked: (B, H + 1, D) covering t .. t+H."""
        return np.concatenate([self.z0[:, None], self.z1[:, None], self.predictions], axis=1)


def _batch(z0, z1, actions):
    z0 = np.atleast_2d(np.asarray(z0, dtype=np.float64))
    z1 = np.atleast_2d(np.asarray(z1, dtype=np.float64))
    actions = np.asarray(actions, dtype=np.float64)
    if actions.ndim == 2:
        actions = actions[None]
    return z0, z1, actions


def rollout_dyn(model: DynamicsModel, z0, z1, actions, theta, horizon: int | None = None,
                sensitivities: bool = False) -> DynRollout:
    """Feed each prediction back in as the newest state; never looks at observations.

    With ``sensitivities`` the two-lag recursion
    ``S_k = dφ/dθ + J_curr S_{k-1} + J_prev S_{k-2}`` (seeds have ``S = 0``)
    is carried along and the final ``S`` is returned.
    """
    z0, z1, actions = _batch(z0, z1, actions)
    steps = actions.shape[1] if horizon is None else horizon - 1
    if steps < 1:
        raise ValueError("horizon must be at least 2")
    if actions.shape[1] < steps:
        raise ValueError(f"need {steps} actions for horizon {steps + 1}, got {actions.shape[1]}")
    theta = model.check_theta(theta)
    b, d = z0.shape
    prev, curr = z0, z1
    preds = np.empty((b, steps, d))
    s_prev = s_curr = np.zeros((b, d, model.n_params))
    for k in range(steps):
        if sensitivities:
            nxt, j_prev, j_curr, j_theta = model.phi_jac(prev, curr, actions[:, k], theta)
            s_next = j_theta + j_curr @ s_curr + j_prev @ s_prev
            if not np.all(np.isfinite(s_next)):
                raise FloatingPointError(f"non-finite sensitivity at rollout step {k + 2}")
            s_prev, s_curr = s_curr, s_next
        else:
            nxt = model.phi(prev, curr, actions[:, k], theta)
        if not np.all(np.isfinite(nxt)):
            raise FloatingPointError(f"non-finite prediction at rollout step {k + 2}")
        preds[:, k] = nxt
        prev, curr = curr, nxt
    return DynRollout(z0, z1, actions[:, :steps], preds, s_curr if sensitivities else None)


def dyn_step(model: DynamicsModel, prev, curr, action, theta) -> np.ndarray:
    """Single prediction for unbatched inputs (D,), (D,), (A,)."""
    theta = model.check_theta(theta)
    out = model.phi(np.asarray(prev)[None], np.asarray(curr)[None], np.asarray(action, dtype=np.float64)[None], theta)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"{model.name}: non-finite prediction")
    return out[0]


def dyn_loss(rollout: DynRollout, target) -> float:
    """Batch mean of ``|ẑ_{t+H} - target|^2``; target is the proxy mean at t+H."""
    diff = rollout.final - np.atleast_2d(target)
    return float(np.mean(np.sum(diff * diff, axis=-1)))


def dyn_grad(rollout: DynRollout, target) -> np.ndarray:
    """d dyn_loss / dθ from the carried sensitivity."""
    if rollout.sensitivity is None:
        raise ValueError("rollout was computed without sensitivities")
    diff = rollout.final - np.atleast_2d(target)
    grad = 2.0 * np.einsum("bd,bdp->p", diff, rollout.sensitivity) / diff.shape[0]
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError(f"non-finite gradient at horizon step {rollout.horizon}")
    return grad


def loss_and_grad(model: DynamicsModel, z0, z1, actions, target, theta) -> tuple[float, np.ndarray]:
    ro = rollout_dyn(model, z0, z1, actions, theta, sensitivities=True)
    return dyn_loss(ro, target), dyn_grad(ro, target)
