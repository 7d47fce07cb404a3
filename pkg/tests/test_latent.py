import numpy as np
import pytest

from piwm import envsim
from piwm.latent import (COMMITMENT, Codebook, IntrinsicModel, PhysicalAutoencoder, StageOrderError,
                         VisionAutoencoder, grid_counts, interp_loss, interp_loss_from_samples, kl_loss,
                         physical_grid, physical_readout, quantize, recon_loss, straight_through, vq_losses)
from piwm.nncore.gradcheck import relative_error

CARTPOLE = envsim.get_spec("cartpole")
LANDER = envsim.get_spec("lander")


def _jitter(params, rng, scale=0.05):
    # nonzero biases keep ReLU inputs off the kink for blank background pixels
    for p in params:
        p.value += rng.normal(0.0, scale, p.shape)


def _fd_sample(loss, param, rng, count=12, step=1e-6):
    flat = param.value.reshape(-1)
    idx = rng.choice(flat.size, size=min(count, flat.size), replace=False)
    out = np.empty(len(idx))
    for k, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + step
        up = loss()
        flat[i] = orig - step
        down = loss()
        flat[i] = orig
        out[k] = (up - down) / (2 * step)
    return idx, out


def _images(rng, n=4):
    states = rng.uniform(CARTPOLE.init_low, CARTPOLE.init_high, size=(n, 4)) * 3
    return np.array([envsim.render(s, CARTPOLE) for s in states])


def test_quantize_exact_entry(rng):
    cb = Codebook.plain(8, rng, size=16)
    idx, zq = quantize(cb.entries[7], cb)
    assert idx[0] == 7
    assert vq_losses(cb.entries[7][None], zq) == (0.0, 0.0)


def test_quantize_tie_prefers_lowest_index():
    visual = np.zeros((10, 2))
    visual[2] = [1.0, 0.0]
    visual[9] = [-1.0, 0.0]
    visual[[0, 1, 3, 4, 5, 6, 7, 8]] = 50.0
    idx, _ = quantize(np.zeros((1, 2)), Codebook(visual))
    assert idx[0] == 2


def test_straight_through_is_exact(rng):
    g = rng.normal(size=(5, 64))
    assert straight_through(g) is g


def test_physical_readout_examples():
    cb = Codebook(np.zeros((2, 3)), np.array([[0.5, 0.1], [1.0, 0.0]]))
    np.testing.assert_array_equal(physical_readout(cb, np.array([0])), [[0.5, 0.1]])
    cb = Codebook(np.zeros((2, 3)), np.array([[0.0, 0.0], [1.0, 0.0]]))
    np.testing.assert_allclose(physical_readout(cb, np.array([[0, 1]])), [[0.5, 0.0]])


def test_grid_counts():
    assert grid_counts(2, 512) == (23, 22)
    assert grid_counts(3, 512) == (8, 8, 8)


@pytest.mark.parametrize("spec", [CARTPOLE, LANDER])
def test_grid_covers_range(spec, rng):
    low, high = spec.supervised_low, spec.supervised_high
    grid = physical_grid(low, high, 512)
    cell = (high - low) / np.array(grid_counts(len(low), 512))
    xs = rng.uniform(low, high, size=(2000, len(low)))
    for x in xs:
        assert np.any(np.all(np.abs(grid - x) <= cell / 2 + 1e-12, axis=1))


def test_partitioned_codebook_physical_part_frozen(rng):
    cb = Codebook.partitioned(CARTPOLE.supervised_low, CARTPOLE.supervised_high, 64, rng)
    assert cb.dim == 64 and cb.n_physical == 2
    assert not cb.physical.trainable and cb.visual.trainable
    with pytest.raises(ValueError):
        cb.physical.value[0, 0] = 1.0


def test_interp_and_kl_examples():
    assert interp_loss(np.array([[1.0, 0.0]]), np.zeros((1, 2))) == 1.0
    assert interp_loss(np.array([[0.3, 0.2]]), np.array([[0.3, 0.2]])) == 0.0
    assert interp_loss_from_samples(np.array([[0.5]]), np.array([[[0.2], [0.4]]])) == pytest.approx(0.04)
    assert kl_loss(np.zeros((1, 3)), np.zeros((1, 3))) == 0.0
    assert kl_loss(np.ones((1, 1)), np.zeros((1, 1))) == pytest.approx(0.5)


def test_perfect_intrinsic_point_has_zero_total():
    x = np.random.default_rng(0).random((2, 32, 32))
    mu = np.array([[0.1, 0.2], [0.3, 0.4]])
    total = interp_loss(mu, mu) + recon_loss(x, x) + kl_loss(np.zeros((2, 62)), np.zeros((2, 62)))
    assert total == 0.0


def test_commitment_weight_default():
    assert COMMITMENT == 0.25
    z, e = np.array([[1.0, 2.0]]), np.array([[0.0, 0.0]])
    cb, commit = vq_losses(z, e)
    assert commit == pytest.approx(0.25 * cb)


def test_posterior_sampling_reproducible(rng):
    vae = VisionAutoencoder("continuous", (32, 32), rng)
    post = vae.encode(_images(rng))
    a, _ = post.sample(np.random.default_rng(3))
    b, _ = post.sample(np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)
    assert np.all(np.isfinite(a))


@pytest.mark.parametrize("kind", ["continuous", "discrete"])
def test_untrained_vision_finite_on_dataset(kind, tiny_data, rng):
    vae = VisionAutoencoder(kind, (32, 32), rng)
    frames = tiny_data.pixels.reshape(-1, 32, 32) / 255.0
    if kind == "discrete":
        vae.init_codebook(frames, rng)
    z = vae.latent(frames)
    assert np.all(np.isfinite(z)) and np.abs(z).max() < 1e3
    out = vae.decode(rng.normal(0, 10, size=(5, 64)))
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_vision_deterministic_latent(rng):
    vae = VisionAutoencoder("continuous", (32, 32), rng)
    x = _images(rng)
    np.testing.assert_array_equal(vae.latent(x), vae.latent(x))


def test_continuous_vae_gradient(rng):
    vae = VisionAutoencoder("continuous", (32, 32), rng)
    _jitter(vae.params(), rng)
    x = _images(rng, 3)

    def loss():
        out = vae.loss_and_backward(x, np.random.default_rng(8), backward=False)
        return out["recon"] + out["kl"]

    vae.zero_grad()
    vae.loss_and_backward(x, np.random.default_rng(8))
    for name, p in vae.named_params().items():
        idx, fd = _fd_sample(loss, p, rng)
        assert relative_error(p.grad.reshape(-1)[idx], fd) < 1e-5, name


def test_physical_requires_frozen_vision(rng):
    vae = VisionAutoencoder("discrete", (32, 32), rng)
    phys = PhysicalAutoencoder(vae, CARTPOLE, rng)
    with pytest.raises(StageOrderError):
        phys.physical(_images(rng))
    vae.freeze()
    z = phys.physical(_images(rng))
    assert z.shape == (4, 2)
    # untrained output stays within ten range widths of the supervised box
    assert np.all(np.abs(z - (CARTPOLE.supervised_low + CARTPOLE.supervised_high) / 2)
                  <= 10 * CARTPOLE.supervised_widths)
    np.testing.assert_array_equal(phys.encode(np.ones((1, 64))), phys.encode(np.ones((1, 64))))


def test_physical_gradient_and_lambda_zero(rng):
    vae = VisionAutoencoder("continuous", (32, 32), rng)
    vae.freeze()
    phys = PhysicalAutoencoder(vae, CARTPOLE, rng)
    z = rng.normal(0, 2, size=(6, 64)) + 3.0
    phys.fit_normalizer(z)
    trainable = [p for p in phys.params() if p.trainable]
    _jitter(trainable, rng)
    target = rng.normal(0, 0.3, size=(6, 2))

    def loss(lam=0.5):
        return sum(v for v in phys.loss_and_backward(z, target, 1.0, lam, backward=False).values())

    for p in trainable:
        p.zero_grad()
    phys.loss_and_backward(z, target, 1.0, 0.5)
    for p in trainable:
        idx, fd = _fd_sample(loss, p, rng)
        assert relative_error(p.grad.reshape(-1)[idx], fd) < 1e-5, p.name
    out = phys.loss_and_backward(z, target, 1.0, 0.0, backward=False)
    assert out["latent_recon"] == 0.0
    assert out["interp"] == pytest.approx(interp_loss(phys.encode(z), target))


def test_intrinsic_continuous_gradient(rng):
    model = IntrinsicModel("continuous", CARTPOLE, rng)
    _jitter(model.params(), rng)
    x = _images(rng, 3)
    target = rng.normal(0, 0.3, size=(3, 2))

    def loss():
        out = model.loss_and_backward(x, target, np.random.default_rng(4), backward=False)
        return sum(v for k, v in out.items() if k != "usage")

    model.zero_grad()
    model.loss_and_backward(x, target, np.random.default_rng(4))
    for name, p in model.named_params().items():
        idx, fd = _fd_sample(loss, p, rng)
        assert relative_error(p.grad.reshape(-1)[idx], fd) < 1e-5, name


def test_intrinsic_discrete_reads_frozen_grid(rng):
    model = IntrinsicModel("discrete", CARTPOLE, rng)
    z = model.physical(_images(rng))
    grid = model.codebook.physical.value
    assert all(np.any(np.all(grid == row, axis=1)) for row in z)
    before = grid.tobytes()
    model.zero_grad()
    model.loss_and_backward(_images(rng), np.zeros((4, 2)), rng)
    assert model.codebook.physical.value.tobytes() == before


def test_vq_encoder_gradient_uses_straight_through(rng):
    vae = VisionAutoencoder("discrete", (32, 32), rng)
    x = _images(rng, 3)
    vae.init_codebook(_images(rng, 8), rng)
    h = vae.encode(x)
    _, zq = quantize(h, vae.codebook)
    recon = vae.decoder.forward(zq)
    vae.decoder.zero_grad()
    g_dec = vae.decoder.backward(2.0 * (recon - x) / len(x))
    expected = g_dec + 2.0 * COMMITMENT * (h - zq) / len(x)
    seen = {}
    original = vae.encoder.backward

    def capture(g):
        seen["g"] = g.copy()
        return original(g)

    vae.encoder.backward = capture
    vae.zero_grad()
    vae.loss_and_backward(x, rng)
    np.testing.assert_allclose(seen["g"], expected, rtol=1e-12, atol=1e-15)
