import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from piwm import envsim
from piwm.envsim import InvalidStateError

CARTPOLE = envsim.get_spec("cartpole")
LANDER = envsim.get_spec("lander")
BICYCLE = envsim.get_spec("bicycle")
PUSH_RIGHT = np.array([2.0])


def test_cartpole_upright_rest_is_fixed_point():
    out = envsim.true_step(np.zeros(4), np.array([0.0]), CARTPOLE.true_params, CARTPOLE)
    np.testing.assert_array_equal(out, np.zeros(4))


def test_cartpole_push_regression_value():
    # hand-evaluated once from the cart-pole equations with m_c=1, m_p=0.1, l=0.5, g=9.8, F=+10
    out = envsim.true_step([0.0, 0.0, 0.1, 0.0], PUSH_RIGHT, CARTPOLE.true_params, CARTPOLE)
    expected = [0.0038711238345485533, 0.19355619172742766, 0.09480934398035908, -0.25953280098204656]
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-15)


def test_bicycle_straight_line():
    out = envsim.true_step([0.0, 0.0, 0.0, 1.0], np.zeros(2), BICYCLE.true_params, BICYCLE)
    drag = BICYCLE.true_params[3]
    np.testing.assert_allclose(out, [0.05, 0.0, 0.0, 1.0 - drag * 0.05], atol=1e-15)


def test_lander_free_fall_only_gravity():
    out = envsim.true_step([0.0, 3.0, 0.0, 0.0, 0.0, 0.0], np.array([0.0]), LANDER.true_params, LANDER)
    g, dt = LANDER.true_params[1], LANDER.dt
    np.testing.assert_allclose(out, [0.0, 3.0 - g * dt * dt, 0.0, 0.0, -g * dt, 0.0], atol=1e-15)


def test_invalid_inputs_rejected():
    with pytest.raises(InvalidStateError):
        envsim.true_step([np.nan, 0, 0, 0], PUSH_RIGHT, CARTPOLE.true_params, CARTPOLE)
    with pytest.raises(InvalidStateError):
        envsim.true_step([0, 0, 0], PUSH_RIGHT, CARTPOLE.true_params, CARTPOLE)
    with pytest.raises(ValueError):
        envsim.true_step(np.zeros(4), np.array([5.0]), CARTPOLE.true_params, CARTPOLE)
    with pytest.raises(KeyError):
        envsim.get_spec("acrobot")


@pytest.mark.parametrize("name", ["cartpole", "lander", "bicycle"])
def test_render_deterministic_and_in_unit_range(name):
    spec = envsim.get_spec(name)
    x = envsim.sample_initial_state(spec, np.random.default_rng(3))
    a, b = envsim.render(x, spec), envsim.render(x, spec)
    assert a.shape == spec.image_shape
    np.testing.assert_array_equal(a, b)
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_cartpole_render_mirror_symmetry():
    x = np.array([0.7, 0.0, 0.2, 0.0])
    img = envsim.render(x, CARTPOLE)
    mirrored = envsim.render(x * np.array([-1, 1, -1, 1]), CARTPOLE)
    np.testing.assert_array_equal(img[:, ::-1], mirrored)


@pytest.mark.parametrize("name", ["cartpole", "lander", "bicycle"])
def test_render_distinguishes_states(name):
    spec = envsim.get_spec(name)
    rng = np.random.default_rng(11)
    sup = list(spec.supervised)
    states = rng.uniform(spec.low, spec.high, size=(200, spec.state_dim))
    if name == "lander":
        states[:, 1] = rng.uniform(0.5, spec.high[1], 200)
    images = np.array([envsim.render(s, spec) for s in states]).reshape(200, -1)
    rel = np.abs(states[:, None, sup] - states[None, :, sup]) / spec.supervised_widths
    for i in range(200):
        for j in range(i + 1, 200):
            if rel[i, j].max() >= 0.02:
                assert not np.array_equal(images[i], images[j]), (states[i], states[j])


def test_scripted_cartpole_pushes_toward_lean():
    assert envsim.controller([0.0, 0.0, 0.05, 0.0], CARTPOLE, "scripted")[0] == 2.0
    assert envsim.controller([0.0, 0.0, -0.05, 0.0], CARTPOLE, "scripted")[0] == 1.0


def test_scripted_cartpole_tie_is_neutral():
    assert envsim.controller(np.zeros(4), CARTPOLE, "scripted")[0] == 0.0


def test_random_mode_reproducible():
    a = [envsim.controller(np.zeros(4), CARTPOLE, "random", np.random.default_rng(5)) for _ in range(3)]
    b = [envsim.controller(np.zeros(4), CARTPOLE, "random", np.random.default_rng(5)) for _ in range(3)]
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        envsim.controller(np.zeros(4), CARTPOLE, "random")


def test_rollout_from_equilibrium_zero_policy():
    ro = envsim.rollout(np.zeros(4), CARTPOLE, "zero", 2)
    np.testing.assert_array_equal(ro.states[0], ro.states[1])


def test_rollout_concatenation():
    rng = np.random.default_rng(4)
    x0 = envsim.sample_initial_state(CARTPOLE, rng)
    full = envsim.rollout(x0, CARTPOLE, "mixed", 10, np.random.default_rng(9))
    rng = np.random.default_rng(9)
    first = envsim.rollout(x0, CARTPOLE, "mixed", 5, rng)
    second = envsim.rollout(first.final_state, CARTPOLE, "mixed", 5, rng)
    np.testing.assert_array_equal(full.states, np.concatenate([first.states, second.states]))
    np.testing.assert_array_equal(full.actions, np.concatenate([first.actions, second.actions]))


def test_scripted_cartpole_keeps_pole_up():
    # 100 seeded rollouts from the initial-state box; every one keeps |theta| < 0.5 rad
    ok = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        ro = envsim.rollout(envsim.sample_initial_state(CARTPOLE, rng), CARTPOLE, "scripted", 50)
        ok += bool(np.all(np.abs(ro.states[:, 2]) < 0.5))
    assert ok == 100


@settings(max_examples=50, deadline=None)
@given(st.floats(-2.0, 2.0), st.floats(-4.0, 4.0), st.floats(-0.9, 0.9), st.floats(-6.0, 6.0),
       st.sampled_from([0.0, 1.0, 2.0]))
def test_cartpole_step_stays_in_range(x, xd, th, thd, a):
    out = envsim.true_step([x, xd, th, thd], np.array([a]), CARTPOLE.true_params, CARTPOLE)
    assert np.all(out >= CARTPOLE.low) and np.all(out <= CARTPOLE.high)


def test_param_specs_consistent():
    for spec in (CARTPOLE, LANDER, BICYCLE):
        assert np.all(spec.param_lower < spec.true_params)
        assert 4 <= len(spec.params) <= 10
    assert not BICYCLE.reference_known
    assert math.isclose(CARTPOLE.dt, 0.02)
