"""Deterministic simulators, renderers and scripted controllers."""

from __future__ import annotations

from types import ModuleType
from typing import NamedTuple

import numpy as np

from . import bicycle, cartpole, lander
from .spec import ActionSpace, EnvSpec, InvalidStateError, ParamSpec, StateDim

ENVS: dict[str, ModuleType] = {m.SPEC.name: m for m in (cartpole, lander, bicycle)}

EPSILON = 0.2  # chance of a random action per step in "mixed" mode
POLICY_MODES = ("scripted", "random", "mixed", "zero")


def get_spec(name: str) -> EnvSpec:
    try:
        return ENVS[name].SPEC
    except KeyError:
        raise KeyError(f"unknown environment {name!r}; choose from {sorted(ENVS)}") from None


def _impl(spec: EnvSpec) -> ModuleType:
    return ENVS[spec.name]


def true_step(state, action, params, spec: EnvSpec) -> np.ndarray:
    """Advance one dt with the true equations of motion; output is range-clamped."""
    x = spec.validate_state(state)
    if not spec.actions.contains(action):
        raise ValueError(f"{spec.name}: action {action!r} outside the action space")
    nxt = _impl(spec).step(x, action, np.asarray(params, dtype=np.float64), spec)
    if not np.all(np.isfinite(nxt)):
        raise InvalidStateError(f"{spec.name}: step produced a non-finite state from {x}")
    return spec.clamp(nxt)


def render(state, spec: EnvSpec) -> np.ndarray:
    """Rasterize a state to an H x W grayscale image in [0, 1]."""
    return _impl(spec).render(spec.clamp(spec.validate_state(state)), spec)


def random_action(spec: EnvSpec, rng: np.random.Generator) -> np.ndarray:
    space = spec.actions
    if space.kind == "discrete":
        return np.array([float(rng.integers(space.n))])
    return rng.uniform(np.asarray(space.low), np.asarray(space.high))


def neutral_action(spec: EnvSpec) -> np.ndarray:
    if spec.actions.kind == "discrete":
        return np.array([0.0])
    return np.zeros(spec.actions.dim)


def controller(state, spec: EnvSpec, mode: str, rng: np.random.Generator | None = None,
               epsilon: float = EPSILON) -> np.ndarray:
    """Pick an action for ``state``.

    ``scripted`` is a deterministic function of the state, ``random`` draws
    uniformly from the action space, ``mixed`` is scripted with probability
    ``1 - epsilon`` and ``zero`` always returns the neutral action.
    """
    x = spec.validate_state(state)
    if mode == "scripted":
        return _impl(spec).scripted(x, spec)
    if mode == "zero":
        return neutral_action(spec)
    if rng is None:
        raise ValueError(f"policy mode {mode!r} needs an rng")
    if mode == "random":
        return random_action(spec, rng)
    if mode == "mixed":
        if rng.random() < epsilon:
            return random_action(spec, rng)
        return _impl(spec).scripted(x, spec)
    raise ValueError(f"unknown policy mode {mode!r}; choose from {POLICY_MODES}")


class Rollout(NamedTuple):
    states: np.ndarray  # (T, state_dim)
    actions: np.ndarray  # (T, action_dim); actions[t] drives states[t] -> states[t + 1]
    observations: np.ndarray  # (T, H, W)
    final_state: np.ndarray  # state after the last action


def rollout(init, spec: EnvSpec, mode: str, steps: int, rng: np.random.Generator | None = None,
            params=None, epsilon: float = EPSILON) -> Rollout:
    if steps < 2:
        raise ValueError("a rollout needs at least 2 steps")
    theta = spec.true_params if params is None else np.asarray(params, dtype=np.float64)
    x = spec.validate_state(init)
    states, actions, images = [], [], []
    for _ in range(steps):
        a = controller(x, spec, mode, rng, epsilon)
        states.append(x)
        actions.append(a)
        images.append(render(x, spec))
        x = true_step(x, a, theta, spec)
    return Rollout(np.array(states), np.array(actions), np.array(images), x)


def sample_initial_state(spec: EnvSpec, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(np.asarray(spec.init_low), np.asarray(spec.init_high))


__all__ = [
    "ActionSpace", "EnvSpec", "InvalidStateError", "ParamSpec", "StateDim", "ENVS",
    "EPSILON", "POLICY_MODES", "Rollout", "controller", "get_spec", "neutral_action",
    "random_action", "render", "rollout", "sample_initial_state", "true_step",
]
