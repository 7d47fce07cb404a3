"""Finite-difference checks of the rollout loss gradient with respect to θ."""

from __future__ import annotations

import numpy as np

from .. import envsim
from ..nncore.gradcheck import FD_STEP, TOLERANCE, CheckResult, central_difference, relative_error
from .models import model_for
from .rollout import loss_and_grad

HORIZONS = (2, 5, 10, 30)
ENVS = ("cartpole", "lander", "bicycle")


def _instance(spec, horizon: int, rng: np.random.Generator):
    ro = envsim.rollout(envsim.sample_initial_state(spec, rng), spec, "mixed", horizon + 1, rng)
    z = ro.states[:, list(spec.supervised)]
    theta = spec.true_params * rng.uniform(0.7, 1.3, len(spec.true_params))
    target = z[horizon] + rng.normal(0.0, 0.01, z.shape[1])
    return z[0][None], z[1][None], ro.actions[1:horizon][None], target[None], theta


def dyn_grad_suite(horizons=HORIZONS, n_instances: int = 5, seed: int = 0, envs=ENVS,
                   step: float = FD_STEP, tolerance: float = TOLERANCE) -> list[CheckResult]:
    """Compare the sensitivity-based gradient of the final-step loss against central differences."""
    out = []
    for name in envs:
        spec = envsim.get_spec(name)
        model = model_for(spec)
        for h in horizons:
            rng = np.random.default_rng([seed, h, ENVS.index(name) if name in ENVS else 99])
            for i in range(n_instances):
                z0, z1, actions, target, theta = _instance(spec, h, rng)
                _, grad = loss_and_grad(model, z0, z1, actions, target, theta)
                fd = central_difference(lambda: loss_and_grad(model, z0, z1, actions, target, theta)[0],
                                        theta, step)
                out.append(CheckResult(f"dyn_{name}_H{h}", i, relative_error(grad, fd), tolerance))
    return out
