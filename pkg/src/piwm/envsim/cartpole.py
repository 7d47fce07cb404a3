"""Pole on a cart, classic equations of motion, semi-implicit Euler.

State: (x [m], x_dot [m/s], theta [rad], theta_dot [rad/s]), theta = 0 upright,
positive theta leans toward +x.  Actions are discrete: neutral, push left,
push right with a fixed force magnitude.
"""

from __future__ import annotations

import math

import numpy as np

from .raster import fill_box, fill_oriented_box, level
from .spec import ActionSpace, EnvSpec, ParamSpec, StateDim

FORCE_MAG = 10.0
FORCES = (0.0, -FORCE_MAG, FORCE_MAG)

SPEC = EnvSpec(
    name="cartpole",
    dims=(
        StateDim("x", "m", -2.4, 2.4),
        StateDim("x_dot", "m/s", -5.0, 5.0),
        StateDim("theta", "rad", -math.pi / 3, math.pi / 3),
        StateDim("theta_dot", "rad/s", -8.0, 8.0),
    ),
    supervised=(0, 2),
    actions=ActionSpace("discrete", labels=("neutral", "push_left", "push_right")),
    dt=0.02,
    params=(
        ParamSpec("cart_mass", "kg", 1.0, 1.0, 0.05, 20.0),
        ParamSpec("pole_mass", "kg", 0.1, 0.1, 0.005, 2.0),
        ParamSpec("pole_half_length", "m", 0.5, 0.5, 0.025, 10.0),
        ParamSpec("gravity", "m/s^2", 9.8, 10.0, 0.5, 200.0),
    ),
    image_shape=(32, 32),
    init_low=(-0.5, -0.5, -0.1, -0.1),
    init_high=(0.5, 0.5, 0.1, 0.1),
)

# render geometry, in pixels
PX_PER_M = 26.0 / 4.8
CART_V = 7.0
CART_HALF_W = 3.25  # fractional width: an x shift >= 0.5 px always flips an edge pixel
CART_HALF_H = 2.0
POLE_LEN = 16.0
POLE_HALF_T = 0.9
CART_LEVEL = level(255)
POLE_LEVEL = level(153)


def accelerations(theta, theta_dot, force, params):
    """(x_ddot, theta_ddot) of the cart-pole; broadcasts over arrays."""
    mc, mp, half_len, g = params
    total = mc + mp
    s = np.sin(theta)
    c = np.cos(theta)
    temp = (force + mp * half_len * theta_dot**2 * s) / total
    theta_acc = (g * s - c * temp) / (half_len * (4.0 / 3.0 - mp * c * c / total))
    x_acc = temp - mp * half_len * theta_acc * c / total
    return x_acc, theta_acc


def step(state: np.ndarray, action, params, spec: EnvSpec = SPEC) -> np.ndarray:
    x, x_dot, theta, theta_dot = state
    force = FORCES[int(np.asarray(action).reshape(-1)[0])]
    x_acc, theta_acc = accelerations(theta, theta_dot, force, params)
    x_dot = x_dot + spec.dt * x_acc
    theta_dot = theta_dot + spec.dt * theta_acc
    x = x + spec.dt * x_dot
    theta = theta + spec.dt * theta_dot
    return np.array([x, x_dot, theta, theta_dot], dtype=np.float64)


def render(state: np.ndarray, spec: EnvSpec = SPEC) -> np.ndarray:
    img = np.zeros(spec.image_shape, dtype=np.float64)
    cu = state[0] * PX_PER_M
    fill_box(img, cu, CART_V, CART_HALF_W, CART_HALF_H, CART_LEVEL)
    # pole points up (-v) when theta = 0 and toward +u for theta > 0
    fill_oriented_box(
        img, cu, CART_V - CART_HALF_H, math.sin(state[2]), -math.cos(state[2]),
        (0.0, POLE_LEN), POLE_HALF_T, POLE_LEVEL,
    )
    return img


# PD gains on (x, x_dot, theta, theta_dot); the sign of the law picks the push
GAINS = np.array([0.05, 0.2, 10.0, 1.5])


def scripted(state: np.ndarray, spec: EnvSpec = SPEC) -> np.ndarray:
    """Bang-bang PD: the action whose force best aligns with the PD output.

    Ties (including a zero PD output) go to the lowest index, i.e. neutral.
    """
    u = float(GAINS @ state)
    scores = [u * f for f in FORCES]
    return np.array([float(int(np.argmax(scores)))])
