import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from piwm import envsim
from piwm.weaksup import (ProxySet, SupervisionConfig, empirical_mean, half_widths, sample_supervision,
                          sample_supervision_batch)

CARTPOLE = envsim.get_spec("cartpole")
LANDER = envsim.get_spec("lander")


def test_zero_delta_is_exact():
    x = np.array([0.3, 1.0, -0.2, 0.5])
    ps = sample_supervision(x, CARTPOLE, SupervisionConfig(delta=0.0, samples_per_step=7), np.random.default_rng(0))
    assert ps.size == 7
    np.testing.assert_array_equal(ps.samples, np.tile(x[[0, 2]], (7, 1)))
    np.testing.assert_array_equal(empirical_mean(ps), x[[0, 2]])


def test_default_sample_count():
    ps = sample_supervision(np.zeros(4), CARTPOLE, SupervisionConfig(delta=0.05), np.random.default_rng(0))
    assert ps.samples.shape == (50, 2)


def test_empirical_mean_two_samples():
    np.testing.assert_allclose(empirical_mean(np.array([[0.2], [0.4]])), [0.3])


def test_empty_proxy_set_rejected():
    with pytest.raises(ValueError):
        empirical_mean(np.zeros((0, 2)))


def test_config_validation():
    with pytest.raises(ValueError):
        SupervisionConfig(delta=-0.1)
    with pytest.raises(ValueError):
        SupervisionConfig(delta=1.0)
    with pytest.raises(ValueError):
        SupervisionConfig(samples_per_step=0)


def test_samples_within_total_band_unit_width():
    # one supervised dim of width 1 behaves like |X_i| = 1, x_i = 0
    widths = CARTPOLE.supervised_widths
    cfg = SupervisionConfig(delta=0.1, samples_per_step=50)
    states = np.zeros((2000, 4))
    samples, _ = sample_supervision_batch(states, CARTPOLE, cfg, np.random.default_rng(1))
    assert np.all(np.abs(samples / widths) <= 0.1)


def test_center_offset_redrawn_per_step():
    cfg = SupervisionConfig(delta=0.1, samples_per_step=5)
    _, centers = sample_supervision_batch(np.zeros((50, 4)), CARTPOLE, cfg, np.random.default_rng(2))
    assert len(np.unique(centers[:, 0])) == 50


def test_mean_concentrates_around_center():
    # |mean - centre| <= half width always; <= 3 sigma of a uniform mean in at least 99% of draws
    cfg = SupervisionConfig(delta=0.1, samples_per_step=50)
    rng = np.random.default_rng(3)
    samples, centers = sample_supervision_batch(np.zeros((100_000, 6)), LANDER, cfg, rng)
    dev = np.abs(samples.mean(axis=1) - centers)
    full = cfg.delta * LANDER.supervised_widths
    assert np.all(dev <= full / 2)
    bound = 3 * full / np.sqrt(12 * cfg.samples_per_step)
    assert np.mean(np.all(dev <= bound, axis=1)) >= 0.99


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 0.5), st.integers(1, 60), st.integers(0, 2**32 - 1))
def test_mean_proximal_bound_property(delta, count, seed):
    rng = np.random.default_rng(seed)
    x = envsim.sample_initial_state(LANDER, rng)
    ps = sample_supervision(x, LANDER, SupervisionConfig(delta=delta, samples_per_step=count), rng)
    assert isinstance(ps, ProxySet)
    truth = x[list(LANDER.supervised)]
    full = delta * LANDER.supervised_widths
    assert np.all(np.abs(ps.samples - truth) <= full * (1 + 1e-12))
    assert np.all(np.abs(ps.center - truth) <= full / 2 * (1 + 1e-12))
    np.testing.assert_allclose(ps.half_width, half_widths(LANDER, delta))
