import json

import numpy as np
import pytest

from piwm import envsim
from piwm.dataset import generate_dataset
from piwm.latent import quantize
from piwm.nncore import TrainSchedule, load_checkpoint
from piwm.training import (ArchConfig, ConfigError, WorldModel, default_stages, load_run, run_stage, run_variant,
                           train_stage_dynamics, train_stage_physical)
from piwm.weaksup import SupervisionConfig

QUICK = TrainSchedule(lr=1e-3, batch_size=32, max_epochs=2, warmup_epochs=1, patience=2)
QUICK_DYN = TrainSchedule(lr=0.1, batch_size=256, max_epochs=3, warmup_epochs=1, patience=3)


def quick_config(architecture, latent, **kw):
    names = ("vision", "physical") if architecture == "extrinsic" else ("representation",)
    stages = {name: QUICK for name in names}
    stages["dynamics"] = QUICK_DYN
    return ArchConfig(architecture, latent, stages=stages, dyn_horizon=4, codebook_size=32,
                      max_steps_per_epoch=4, **kw)


@pytest.fixture(scope="module")
def small_data():
    return generate_dataset(envsim.get_spec("cartpole"), 12, 10,
                            SupervisionConfig(delta=0.05, samples_per_step=5, seed=0), seed=0)


def test_config_validation():
    with pytest.raises(ConfigError):
        ArchConfig("hybrid", "discrete")
    with pytest.raises(ConfigError):
        ArchConfig("extrinsic", "gaussian")
    with pytest.raises(ConfigError):
        ArchConfig("extrinsic", "discrete", lambda_latent=-0.1)
    with pytest.raises(ConfigError):
        ArchConfig("intrinsic", "discrete", stages=default_stages("extrinsic", "discrete"))
    with pytest.raises(ConfigError):
        ArchConfig.from_dict({"architecture": "intrinsic", "latent": "discrete", "learning_rate": 1.0})


def test_default_schedules():
    cont = ArchConfig("extrinsic", "continuous")
    disc = ArchConfig("intrinsic", "discrete")
    assert cont.stages["vision"].lr == 1e-4 and disc.stages["representation"].lr == 1e-3
    assert cont.stages["dynamics"].lr == 0.1 and cont.stages["dynamics"].batch_size == 512
    assert cont.lambda_interp == 1.0 and cont.lambda_latent == 0.5 and cont.commitment == 0.25


def test_config_round_trip_and_checksum():
    cfg = quick_config("extrinsic", "discrete")
    back = ArchConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg and back.checksum() == cfg.checksum()
    assert cfg.with_schedules(lr=5e-4).checksum() != cfg.checksum()


def test_dynamics_requires_frozen_stages(small_data):
    model = WorldModel(quick_config("extrinsic", "continuous"), small_data.spec, 0)
    with pytest.raises(ConfigError):
        train_stage_physical(model, small_data, small_data)
    with pytest.raises(ConfigError):
        train_stage_dynamics(model, small_data, small_data)


def test_extrinsic_smoke_run(tmp_path):
    data = generate_dataset(envsim.get_spec("cartpole"), 50, 10,
                            SupervisionConfig(delta=0.05, samples_per_step=5, seed=0), seed=0)
    cfg = ArchConfig.from_dict({**quick_config("extrinsic", "discrete").to_dict(), "codebook_size": 512,
                                "max_steps_per_epoch": None})
    art = run_variant(data, cfg, seed=1, run_dir=tmp_path / "a")
    names = sorted(p.name for p in (tmp_path / "a").glob("*.ckpt"))
    assert names == ["dynamics.ckpt", "physical.ckpt", "vision.ckpt"]
    assert art.theta.shape == (4,) and np.all(np.isfinite(art.theta))
    assert art.model.vision.frozen and art.model.physical_ae.frozen

    frames = data.pixels.reshape(-1, 32, 32) / 255.0
    idx, _ = quantize(art.model.vision.encode(frames), art.model.vision.codebook)
    assert len(np.unique(idx)) > 10

    again = run_variant(data, cfg, seed=1)
    np.testing.assert_array_equal(again.theta, art.theta)


def test_frozen_vision_bytes_survive_later_stages(small_data, tmp_path):
    cfg = quick_config("extrinsic", "continuous")
    run_stage(small_data, cfg, 2, tmp_path, "vision")
    vision_before = {k: v[0].tobytes() for k, v in load_checkpoint(tmp_path / "vision.ckpt")[0].items()}
    art = run_stage(small_data, cfg, 2, tmp_path, "physical")
    after = {k: p.value.tobytes() for k, p in art.model.vision.named_params().items()}
    assert after == vision_before
    phys_before = {k: p.value.tobytes() for k, p in art.model.physical_ae.named_params().items()}
    art = run_stage(small_data, cfg, 2, tmp_path, "dynamics")
    assert {k: p.value.tobytes() for k, p in art.model.physical_ae.named_params().items()} == phys_before
    loaded = load_run(tmp_path)
    np.testing.assert_array_equal(loaded.theta, art.theta)


def test_run_stage_rejects_other_config(small_data, tmp_path):
    cfg = quick_config("intrinsic", "continuous")
    run_stage(small_data, cfg, 0, tmp_path, "representation")
    with pytest.raises(ConfigError):
        run_stage(small_data, quick_config("intrinsic", "continuous", lambda_interp=2.0), 0, tmp_path, "dynamics")
    with pytest.raises(ConfigError):
        run_stage(small_data, cfg, 0, tmp_path, "vision")
    with pytest.raises(FileNotFoundError):
        load_run(tmp_path)
    partial = load_run(tmp_path, upto="representation")
    assert partial.theta is None


def test_intrinsic_discrete_grid_untouched(small_data):
    art = run_variant(small_data, quick_config("intrinsic", "discrete"), seed=0)
    fresh = WorldModel(art.config, small_data.spec, 0)
    np.testing.assert_array_equal(art.model.intrinsic.codebook.physical.value,
                                  fresh.intrinsic.codebook.physical.value)
    z = art.model.encode_pixels(small_data.pixels[:2])
    assert z.shape == (2, 10, 2)


def test_load_missing_run(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_run(tmp_path / "nothing")


def test_vision_reuse_matches_retraining(small_data):
    cfg = quick_config("extrinsic", "discrete")
    relabeled = generate_dataset(envsim.get_spec("cartpole"), 12, 10,
                                 SupervisionConfig(delta=0.1, samples_per_step=5, seed=0), seed=0)
    donor = run_variant(small_data, cfg, seed=3)
    shared = run_variant(relabeled, cfg, seed=3, reuse_vision=donor)
    full = run_variant(relabeled, cfg, seed=3)
    for k, p in full.model.named_params().items():
        assert shared.model.named_params()[k].value.tobytes() == p.value.tobytes(), k
    np.testing.assert_array_equal(shared.theta, full.theta)
    with pytest.raises(ConfigError):
        run_variant(small_data, cfg, seed=4, reuse_vision=donor)
    other = generate_dataset(envsim.get_spec("cartpole"), 12, 10, SupervisionConfig(delta=0.1, seed=0), seed=1)
    with pytest.raises(ConfigError):
        run_variant(other, cfg, seed=3, reuse_vision=donor)
