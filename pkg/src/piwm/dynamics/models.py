"""Structured second-order predictors, one per environment.

Each model maps the two most recent positional states and the action that
drives the next transition to the next positional state.  Velocity is the
finite difference of the two states, so the predictor matches a
semi-implicit Euler step exactly.  Evaluating the step on dual numbers
yields the Jacobians with respect to both input states and to θ.
"""

from __future__ import annotations

import numpy as np

from ..envsim import EnvSpec, get_spec
from ..envsim.cartpole import FORCES
from ..envsim.lander import ARM, DRAG, ENGINES
from . import dual
from .dual import Dual


class OutOfBoundsError(ValueError):
    pass


class DynamicsModel:
    """Base class.  Subclasses implement ``accel`` or override ``phi_dual``."""

    name = ""

    def __init__(self, spec: EnvSpec | None = None):
        self.spec = spec or get_spec(self.name)
        self.dt = self.spec.dt
        self.dim = self.spec.n_supervised
        self.n_params = len(self.spec.params)

    @property
    def param_names(self) -> tuple[str, ...]:
        return self.spec.param_names

    def check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ValueError(f"{self.name}: theta must have shape ({self.n_params},), got {theta.shape}")
        lo, hi = self.spec.param_lower, self.spec.param_upper
        bad = (theta < lo) | (theta > hi) | ~np.isfinite(theta)
        if np.any(bad):
            names = [n for n, b in zip(self.param_names, bad) if b]
            raise OutOfBoundsError(f"{self.name}: parameters outside bounds: {names}")
        return theta

    def project(self, theta) -> tuple[np.ndarray, bool]:
        """Clip to the declared bounds; the flag reports whether clipping was needed."""
        theta = np.asarray(theta, dtype=np.float64)
        clipped = np.clip(theta, self.spec.param_lower, self.spec.param_upper)
        return clipped, bool(np.any(clipped != theta))

    def accel(self, q: list[Dual], v: list[Dual], action: np.ndarray, theta: list[Dual]) -> list[Dual]:
        raise NotImplementedError

    def phi_dual(self, prev: list[Dual], curr: list[Dual], action: np.ndarray, theta: list[Dual]) -> list[Dual]:
        dt = self.dt
        v = [(c - p) / dt for p, c in zip(prev, curr)]
        acc = self.accel(curr, v, action, theta)
        return [c + vi * dt + a * (dt * dt) for c, vi, a in zip(curr, v, acc)]

    def phi(self, prev, curr, action, theta) -> np.ndarray:
        """Batched prediction without derivatives; shapes (B, D), (B, D), (B, A), (P,)."""
        out, _ = self._eval(prev, curr, action, theta, need_jac=False)
        return out

    def phi_jac(self, prev, curr, action, theta):
        """Prediction plus Jacobians J_prev (B, D, D), J_curr (B, D, D), J_theta (B, D, P)."""
        out, der = self._eval(prev, curr, action, theta, need_jac=True)
        d = self.dim
        return out, der[:, :, :d], der[:, :, d:2 * d], der[:, :, 2 * d:]

    def _eval(self, prev, curr, action, theta, need_jac: bool):
        prev = np.atleast_2d(np.asarray(prev, dtype=np.float64))
        curr = np.atleast_2d(np.asarray(curr, dtype=np.float64))
        action = np.asarray(action, dtype=np.float64).reshape(prev.shape[0], -1)
        theta = np.asarray(theta, dtype=np.float64)
        b, d = prev.shape
        if curr.shape != (b, d) or d != self.dim:
            raise ValueError(f"{self.name}: state pair shapes {prev.shape}, {curr.shape} (expected D={self.dim})")
        if need_jac:
            inputs = np.concatenate([prev, curr, np.broadcast_to(theta, (b, self.n_params))], axis=1)
            seeds = Dual.seeds(inputs)
        else:
            # zero-width tangents keep the same code path cheap
            seeds = [Dual(col.copy(), np.zeros((b, 0))) for col in
                     np.concatenate([prev, curr, np.broadcast_to(theta, (b, self.n_params))], axis=1).T]
        out = self.phi_dual(seeds[:d], seeds[d:2 * d], action, seeds[2 * d:])
        val = np.stack([o.val for o in out], axis=1)
        der = np.stack([np.broadcast_to(o.der, (b, seeds[0].der.shape[1])) for o in out], axis=1)
        return val, der


class CartPoleDynamics(DynamicsModel):
    """Positional state (cart x, pole angle); θ = (cart mass, pole mass, half length, gravity)."""

    name = "cartpole"
    _forces = np.asarray(FORCES)

    def accel(self, q, v, action, theta):
        mc, mp, half_len, g = theta
        angle, omega = q[1], v[1]
        force = self._forces[action[:, 0].astype(int)]
        s, c = dual.sin(angle), dual.cos(angle)
        total = mc + mp
        temp = (mp * half_len * dual.square(omega) * s + force) / total
        denom = half_len * (4.0 / 3.0 - mp * dual.square(c) / total)
        ang_acc = (g * s - c * temp) / denom
        x_acc = temp - mp * half_len * ang_acc * c / total
        return [x_acc, ang_acc]


class LanderDynamics(DynamicsModel):
    """Positional state (x, y, angle); θ = (mass, gravity, main thrust, side thrust)."""

    name = "lander"
    _engines = np.asarray(ENGINES)

    def accel(self, q, v, action, theta):
        mass, g, f_main, f_side = theta
        engines = self._engines[action[:, 0].astype(int)]
        main, side = engines[:, 0], engines[:, 1]
        s, c = dual.sin(q[2]), dual.cos(q[2])
        thrust_m = f_main * main
        thrust_s = f_side * side
        ax = (c * thrust_s - s * thrust_m - v[0] * DRAG) / mass
        ay = (c * thrust_m + s * thrust_s - v[1] * DRAG) / mass - g
        aa = -thrust_s / (mass * ARM)
        return [ax, ay, aa]


class BicycleDynamics(DynamicsModel):
    """Positional state (x, y, heading); θ = (wheelbase, steer gain, accel gain, drag).

    Speed is hidden, so it is recovered by projecting the last displacement
    onto the current heading, then pushed through the same throttle, turn,
    advance sequence as the simulator.
    """

    name = "bicycle"

    def phi_dual(self, prev, curr, action, theta):
        wheelbase, steer_gain, accel_gain, drag = theta
        dt = self.dt
        steer, throttle = action[:, 0], action[:, 1]
        heading = curr[2]
        c, s = dual.cos(heading), dual.sin(heading)
        speed = ((curr[0] - prev[0]) * c + (curr[1] - prev[1]) * s) / dt
        moving = speed * (1.0 - drag * dt) + accel_gain * throttle * dt
        new_heading = heading + moving * dual.tan(steer_gain * steer) * dt / wheelbase
        step = moving * dt
        return [curr[0] + step * dual.cos(new_heading), curr[1] + step * dual.sin(new_heading), new_heading]


MODELS = {m.name: m for m in (CartPoleDynamics, LanderDynamics, BicycleDynamics)}


def model_for(spec_or_name) -> DynamicsModel:
    name = spec_or_name if isinstance(spec_or_name, str) else spec_or_name.name
    try:
        return MODELS[name]()
    except KeyError:
        raise KeyError(f"no dynamics model for {name!r}") from None
