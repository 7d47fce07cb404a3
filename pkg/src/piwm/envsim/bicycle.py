"""Kinematic bicycle on a plane, standing in for a small racing car.

State: (x, y, heading, speed).  Action: (steer, throttle), both in [-1, 1].
One step applies throttle to the speed, turns the heading with the updated
speed, advances the position along the new heading, and finally applies
linear drag to the speed carried into the next step.
"""

from __future__ import annotations

import math

import numpy as np

from .raster import fill_oriented_box, level
from .spec import ActionSpace, EnvSpec, ParamSpec, StateDim

SPEC = EnvSpec(
    name="bicycle",
    dims=(
        StateDim("x", "m", -6.0, 6.0),
        StateDim("y", "m", -6.0, 6.0),
        StateDim("heading", "rad", -math.pi, math.pi),
        StateDim("speed", "m/s", 0.0, 4.0),
    ),
    supervised=(0, 1, 2),
    actions=ActionSpace("continuous", low=(-1.0, -1.0), high=(1.0, 1.0)),
    dt=0.05,
    params=(
        ParamSpec("wheelbase", "m", 0.8, 1.0, 0.05, 20.0),
        ParamSpec("steer_gain", "rad", 0.5, 0.5, 0.025, 1.5),
        ParamSpec("accel_gain", "m/s^2", 2.0, 2.0, 0.1, 40.0),
        ParamSpec("drag", "1/s", 0.3, 0.3, 0.0, 6.0),
    ),
    image_shape=(32, 32),
    init_low=(-5.0, -1.0, -0.3, 1.0),
    init_high=(-3.0, 1.0, 0.3, 2.5),
    reference_known=False,
)

PX_PER_M = 2.5
BODY_HALF_LEN = 2.0
BODY_HALF_W = 1.0
NOSE_LEN = 1.5
NOSE_HALF_W = 0.6
BODY_LEVEL = level(255)
NOSE_LEVEL = level(153)


def step(state: np.ndarray, action, params, spec: EnvSpec = SPEC) -> np.ndarray:
    x, y, heading, speed = state
    steer, throttle = np.asarray(action, dtype=np.float64).reshape(-1)
    wheelbase, steer_gain, accel_gain, drag = params
    lo, hi = spec.dims[3].low, spec.dims[3].high
    moving = min(max(speed + spec.dt * accel_gain * throttle, lo), hi)
    heading = heading + spec.dt * moving * math.tan(steer_gain * steer) / wheelbase
    x = x + spec.dt * moving * math.cos(heading)
    y = y + spec.dt * moving * math.sin(heading)
    return np.array([x, y, heading, moving * (1.0 - drag * spec.dt)])


def render(state: np.ndarray, spec: EnvSpec = SPEC) -> np.ndarray:
    img = np.zeros(spec.image_shape, dtype=np.float64)
    cu = state[0] * PX_PER_M
    cv = -state[1] * PX_PER_M
    fu, fv = math.cos(state[2]), -math.sin(state[2])
    fill_oriented_box(img, cu, cv, fu, fv, (-BODY_HALF_LEN, BODY_HALF_LEN), BODY_HALF_W, BODY_LEVEL)
    fill_oriented_box(img, cu, cv, fu, fv, (BODY_HALF_LEN, BODY_HALF_LEN + NOSE_LEN), NOSE_HALF_W, NOSE_LEVEL)
    return img


# reference road y = ROAD_AMP * sin(ROAD_FREQ * x), followed by pure pursuit
ROAD_AMP = 1.5
ROAD_FREQ = 0.5
LOOKAHEAD = 1.5
CRUISE = 2.0


def scripted(state: np.ndarray, spec: EnvSpec = SPEC) -> np.ndarray:
    x, y, heading, speed = state
    wheelbase, steer_gain, _, _ = (p.scale for p in spec.params)  # nominal, not true
    tx = x + LOOKAHEAD
    ty = ROAD_AMP * math.sin(ROAD_FREQ * tx)
    alpha = math.atan2(ty - y, tx - x) - heading
    steer_angle = math.atan(2.0 * wheelbase * math.sin(alpha) / LOOKAHEAD)
    steer = min(max(steer_angle / steer_gain, -1.0), 1.0)
    throttle = min(max(0.8 * (CRUISE - speed) + 0.3, -1.0), 1.0)
    return np.array([steer, throttle])
