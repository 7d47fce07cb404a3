"""Planar lander: point mass with an orientation, one main and two side engines.

State: (x, y, angle, x_dot, y_dot, angle_dot), angle counter-clockwise from
upright.  The main engine pushes along the body's up axis; a side engine
pushes along the body's right axis and spins the hull.  Linear aerodynamic
drag with a known coefficient acts on the translational velocity, which is
what makes the mass separable from the two thrust magnitudes.
"""

from __future__ import annotations

import math

import numpy as np

from .raster import fill_oriented_box, level
from .spec import ActionSpace, EnvSpec, ParamSpec, StateDim

DRAG = 0.5  # N s / m, known
ARM = 0.5  # m, side-engine lever arm, known

# (main engine on, side direction) per action index
ENGINES = ((0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (0.0, -1.0))

SPEC = EnvSpec(
    name="lander",
    dims=(
        StateDim("x", "m", -2.0, 2.0),
        StateDim("y", "m", 0.0, 4.0),
        StateDim("angle", "rad", -math.pi / 3, math.pi / 3),
        StateDim("x_dot", "m/s", -3.0, 3.0),
        StateDim("y_dot", "m/s", -3.0, 3.0),
        StateDim("angle_dot", "rad/s", -3.0, 3.0),
    ),
    supervised=(0, 1, 2),
    actions=ActionSpace("discrete", labels=("noop", "main", "left", "right")),
    dt=0.05,
    params=(
        ParamSpec("mass", "kg", 5.0, 5.0, 0.25, 100.0),
        ParamSpec("gravity", "m/s^2", 1.62, 2.0, 0.1, 40.0),
        ParamSpec("main_thrust", "N", 13.0, 10.0, 0.5, 200.0),
        ParamSpec("side_thrust", "N", 2.0, 2.0, 0.1, 40.0),
    ),
    image_shape=(32, 32),
    init_low=(-1.0, 2.5, -0.2, -0.3, -0.3, -0.3),
    init_high=(1.0, 3.5, 0.2, 0.3, 0.3, 0.3),
)

PX_PER_M = 7.0
GROUND_V = 14.0
BODY_HALF_LEN = 3.5
BODY_HALF_H = 1.5
MAST_LEN = 4.5
MAST_HALF_T = 0.6
BODY_LEVEL = level(255)
MAST_LEVEL = level(153)


def accelerations(angle, vel_x, vel_y, main, side, params):
    mass, g, thrust_main, thrust_side = params
    s = np.sin(angle)
    c = np.cos(angle)
    fx = -s * thrust_main * main + c * thrust_side * side - DRAG * vel_x
    fy = c * thrust_main * main + s * thrust_side * side - DRAG * vel_y
    return fx / mass, fy / mass - g, -side * thrust_side / (mass * ARM)


def step(state: np.ndarray, action, params, spec: EnvSpec = SPEC) -> np.ndarray:
    q = state[:3]
    v = state[3:]
    main, side = ENGINES[int(np.asarray(action).reshape(-1)[0])]
    acc = np.array(accelerations(q[2], v[0], v[1], main, side, params))
    v = v + spec.dt * acc
    q = q + spec.dt * v
    return np.concatenate([q, v])


def render(state: np.ndarray, spec: EnvSpec = SPEC) -> np.ndarray:
    img = np.zeros(spec.image_shape, dtype=np.float64)
    cu = state[0] * PX_PER_M
    cv = GROUND_V - state[1] * PX_PER_M
    s, c = math.sin(state[2]), math.cos(state[2])
    # body right axis is (c, -s) on screen, body up axis is (-s, -c)
    fill_oriented_box(img, cu, cv, c, -s, (-BODY_HALF_LEN, BODY_HALF_LEN), BODY_HALF_H, BODY_LEVEL)
    fill_oriented_box(img, cu, cv, -s, -c, (BODY_HALF_H, BODY_HALF_H + MAST_LEN), MAST_HALF_T, MAST_LEVEL)
    return img


HOVER = np.array([0.0, 2.0])


def scripted(state: np.ndarray, spec: EnvSpec = SPEC) -> np.ndarray:
    """PD hover around a fixed point; side engines take priority over the main one."""
    x, y, angle, vx, vy, w = state
    target_angle = float(np.clip(0.4 * (x - HOVER[0]) + 0.6 * vx, -0.4, 0.4))
    spin = -(3.0 * (angle - target_angle) + 1.5 * w)
    if abs(spin) > 0.5:
        return np.array([2.0 if spin < 0 else 3.0])
    climb = 2.0 * (HOVER[1] - y) - 1.5 * vy
    return np.array([1.0 if climb > 0 else 0.0])
