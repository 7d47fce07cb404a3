"""End-to-end acceptance checks at their stated tolerances.

Each test records a verdict through the ``acceptance`` fixture, so the
terminal summary carries one PASS/FAIL line per criterion.  The full module
takes roughly forty minutes on one CPU core.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from piwm import envsim
from piwm.cli import main
from piwm.dataset import generate_dataset
from piwm.dynamics import HORIZONS, dyn_grad_suite, model_for
from piwm.evaluation import REPORT_COLUMNS, MetricReport, eval_rollout, evaluate_run, oracle_encoder
from piwm.latent import COMMITMENT, VisionAutoencoder, quantize
from piwm.nncore import TrainSchedule
from piwm.nncore.gradcheck import TOLERANCE, kernel_suite
from piwm.training import (ArchConfig, WorldModel, bypass_fit, recovery_dataset, recovery_errors, run_stage,
                           run_variant)
from piwm.weaksup import SupervisionConfig, sample_supervision_batch

CARTPOLE = envsim.get_spec("cartpole")
SEEDS = (0, 1, 2)
DELTAS = (0.0, 0.05, 0.1)

# Static-encoding experiment: 400 trajectories of 50 steps, scaled-down schedules.
STATIC_N, STATIC_M, STATIC_TEST_N, STATIC_EPSILON = 400, 50, 100, 0.2
STATIC_CONFIG = ArchConfig(
    "extrinsic", "discrete", lambda_latent=0.1, dyn_horizon=10,
    stages={"vision": TrainSchedule(lr=1e-3, max_epochs=12, warmup_epochs=5, patience=12),
            "physical": TrainSchedule(lr=2e-3, batch_size=128, max_epochs=120, warmup_epochs=5, patience=120),
            "dynamics": TrainSchedule(lr=0.1, batch_size=512, max_epochs=40, warmup_epochs=5, patience=20)})


def test_criterion_1_gradient_fidelity(acceptance):
    start = time.perf_counter()
    results = kernel_suite(n_instances=20, seed=0) + dyn_grad_suite(HORIZONS, n_instances=20, seed=0)
    elapsed = time.perf_counter() - start
    worst = max(r.error for r in results)
    counts = {}
    for r in results:
        counts[r.kernel] = counts.get(r.kernel, 0) + 1
    ok = all(r.passed for r in results) and min(counts.values()) >= 20 and elapsed <= 60.0
    acceptance(1, ok, f"{len(counts)} kernels x >=20 instances, worst rel err {worst:.2e} "
                      f"(tol {TOLERANCE:g}), {elapsed:.1f}s")
    assert all(r.passed for r in results), [r for r in results if not r.passed][:5]
    assert min(counts.values()) >= 20
    assert elapsed <= 60.0


def _recovery(delta):
    start = time.perf_counter()
    errors = []
    for seed in SEEDS:
        fit = bypass_fit(recovery_dataset(CARTPOLE, delta, seed), seed)
        errors.append(recovery_errors(fit, CARTPOLE))
    return np.array(errors), time.perf_counter() - start


def test_criterion_2_recovery_noise_free(acceptance):
    errors, elapsed = _recovery(0.0)
    ok = bool(np.all(errors <= 0.05)) and elapsed <= 300.0
    acceptance(2, ok, f"worst rel err per seed {np.round(errors.max(axis=1), 4).tolist()} (limit 0.05), "
                      f"{elapsed:.0f}s")
    assert np.all(errors <= 0.05), errors
    assert elapsed <= 300.0


def test_criterion_3_recovery_ten_percent(acceptance):
    errors, elapsed = _recovery(0.1)
    median = np.median(errors, axis=0)
    ok = bool(np.all(median <= 0.15)) and elapsed <= 300.0
    acceptance(3, ok, f"per-parameter 3-seed median rel err {np.round(median, 4).tolist()} (limit 0.15), "
                      f"{elapsed:.0f}s")
    assert np.all(median <= 0.15), errors
    assert elapsed <= 300.0


def test_criterion_4_noise_bounds(acceptance):
    rng = np.random.default_rng(0)
    states = rng.uniform(CARTPOLE.low, CARTPOLE.high, size=(2000, 4))
    truth = states[:, list(CARTPOLE.supervised)]
    widths = CARTPOLE.supervised_widths
    worst = []
    for delta in DELTAS:
        samples, centers = sample_supervision_batch(states, CARTPOLE, SupervisionConfig(delta, 50), rng)
        assert samples.shape[0] * samples.shape[1] == 100_000
        sample_dev = np.abs(samples - truth[:, None]) / widths
        center_dev = np.abs(centers - truth) / widths
        if delta == 0.0:
            assert np.all(samples == truth[:, None]) and np.all(centers == truth)
        assert np.all(sample_dev <= delta * (1 + 1e-12))
        assert np.all(center_dev <= delta / 2 * (1 + 1e-12))
        worst.append(float(sample_dev.max()))
    acceptance(4, True, f"1e5 samples per delta, max |sample - x|/|X| {np.round(worst, 4).tolist()}")


@pytest.fixture(scope="module")
def static_runs():
    """Train the extrinsic-discrete CartPole model for every (seed, delta) pair.

    Frames depend on the seed only, so each seed's vision stage is trained
    once and shared by its three noise levels.
    """
    start = time.perf_counter()
    reports = {}
    for seed in SEEDS:
        donor = None
        for delta in DELTAS:
            data = generate_dataset(CARTPOLE, STATIC_N, STATIC_M, SupervisionConfig(delta, seed=seed), seed=seed,
                                    epsilon=STATIC_EPSILON)
            test = generate_dataset(CARTPOLE, STATIC_TEST_N, STATIC_M, SupervisionConfig(delta, seed=seed + 500),
                                    seed=seed + 500, epsilon=STATIC_EPSILON)
            art = run_variant(data, STATIC_CONFIG, seed=seed, reuse_vision=donor)
            donor = donor or art
            reports[seed, delta] = evaluate_run(art, test)
            print(f"seed {seed} delta {delta}: static {reports[seed, delta].static}", flush=True)
    return reports, time.perf_counter() - start


def test_criterion_5_static_trend(static_runs, acceptance):
    reports, elapsed = static_runs
    means = [np.mean([reports[s, d].static["mse"] for s in SEEDS]) for d in DELTAS]
    baseline = np.mean([reports[s, 0.0].static["baseline_mse"] for s in SEEDS])
    ordered = means[0] < means[1] < means[2]
    ratio = baseline / means[0]
    ok = ordered and ratio >= 5.0 and elapsed <= 1800.0
    acceptance(5, ok, f"mean MSE at delta 0/0.05/0.1 = {[round(m, 5) for m in means]}, "
                      f"baseline/MSE at 0 = {ratio:.1f}x, {elapsed / 60:.1f} min")
    assert ratio >= 5.0
    assert ordered, means
    assert elapsed <= 1800.0


def test_criterion_6_rollout_sanity(static_runs, acceptance):
    reports, _ = static_runs
    step30 = lambda key: float(np.median([reports[s, 0.0].rollout[key][29] for s in SEEDS]))
    model, untrained, cv = step30("rmse"), step30("rmse_untrained"), step30("rmse_constant_velocity")
    test = generate_dataset(CARTPOLE, 20, STATIC_M, SupervisionConfig(0.0), seed=900)
    oracle = eval_rollout(oracle_encoder(test), model_for(CARTPOLE), CARTPOLE.true_params, test, horizon=30)
    ok = model < untrained and model < cv and max(oracle["rmse"]) <= 1e-6
    acceptance(6, ok, f"step-30 median RMSE model {model:.4f} vs untrained {untrained:.4f} vs "
                      f"constant velocity {cv:.4f}; oracle max {max(oracle['rmse']):.1e}")
    assert max(oracle["rmse"]) <= 1e-6
    assert model < untrained
    assert model < cv


def _quick(architecture, latent):
    net = TrainSchedule(lr=1e-3, max_epochs=3, warmup_epochs=1, patience=3)
    names = ("vision", "physical") if architecture == "extrinsic" else ("representation",)
    stages = {n: net for n in names}
    stages["dynamics"] = TrainSchedule(lr=0.1, batch_size=256, max_epochs=4, warmup_epochs=1, patience=4)
    return ArchConfig(architecture, latent, stages=stages, dyn_horizon=4, codebook_size=64)


def _param_bytes(art):
    out = {k: p.value.tobytes() for k, p in art.model.named_params().items()}
    out["theta"] = art.theta.tobytes()
    return out


def test_criterion_7_structural_invariants(tmp_path, acceptance):
    data = generate_dataset(CARTPOLE, 20, 10, SupervisionConfig(0.05, 10, seed=0), seed=0)
    checks = {}

    cfg = _quick("intrinsic", "discrete")
    fresh = WorldModel(cfg, CARTPOLE, 0)
    grid = fresh.intrinsic.codebook.physical.value.tobytes()
    art = run_variant(data, cfg, seed=0)
    checks["frozen grid"] = art.model.intrinsic.codebook.physical.value.tobytes() == grid

    cfg = _quick("extrinsic", "continuous")
    vis = run_stage(data, cfg, 1, tmp_path, "vision")
    vision_bytes = {k: p.value.tobytes() for k, p in vis.model.vision.named_params().items()}
    phys = run_stage(data, cfg, 1, tmp_path, "physical")
    phys_bytes = {k: p.value.tobytes() for k, p in phys.model.physical_ae.named_params().items()}
    dyn = run_stage(data, cfg, 1, tmp_path, "dynamics")
    checks["stage isolation"] = (
        {k: p.value.tobytes() for k, p in dyn.model.vision.named_params().items()} == vision_bytes
        and {k: p.value.tobytes() for k, p in dyn.model.physical_ae.named_params().items()} == phys_bytes)

    rng = np.random.default_rng(3)
    vae = VisionAutoencoder("discrete", (32, 32), rng, codebook_size=64)
    frames = data.pixels[:, :3].reshape(-1, 32, 32) / 255.0
    vae.init_codebook(frames, rng)
    x = frames[:4]
    h = vae.encode(x)
    _, zq = quantize(h, vae.codebook)
    vae.decoder.zero_grad()
    expected = vae.decoder.backward(2.0 * (vae.decoder.forward(zq) - x) / len(x)) + 2 * COMMITMENT * (h - zq) / len(x)
    seen = {}
    original = vae.encoder.backward
    vae.encoder.backward = lambda g: (seen.setdefault("g", g.copy()), original(g))[1]
    vae.zero_grad()
    vae.loss_and_backward(x, rng)
    checks["straight-through"] = np.allclose(seen["g"], expected, rtol=1e-12, atol=1e-15)

    model = model_for(CARTPOLE)
    prev, curr = rng.normal(size=(100, 2)), rng.normal(size=(100, 2))
    prev[:, 1] = curr[:, 1] = 0.0  # upright pole at rest: no angular or cart acceleration without force
    out = model.phi(prev, curr, np.zeros((100, 1)), CARTPOLE.true_params)
    checks["zero acceleration"] = np.max(np.abs(out - (2 * curr - prev))) <= 1e-12

    cfg = _quick("extrinsic", "discrete")
    checks["same-seed run"] = _param_bytes(run_variant(data, cfg, seed=5)) == _param_bytes(
        run_variant(data, cfg, seed=5))

    failed = [k for k, v in checks.items() if not v]
    acceptance(7, not failed, f"{len(checks) - len(failed)}/{len(checks)} invariants hold"
                              + (f"; failed: {failed}" if failed else ""))
    assert not failed


VARIANTS = [("extrinsic", "continuous"), ("extrinsic", "discrete"), ("intrinsic", "continuous"),
            ("intrinsic", "discrete")]


def test_criterion_8_pipeline_smoke(tmp_path, monkeypatch, acceptance):
    monkeypatch.setenv("PIWM_RUNS", str(tmp_path))
    timings = {}
    valid = True
    for arch, latent in VARIANTS:
        start = time.perf_counter()
        codes = [main(["gen", "--env", "cartpole", "--n", "50", "--m", "10", "--delta", "0", "--samples", "50",
                       "--seed", "7"]),
                 main(["train", "--arch", arch, "--latent", latent, "--epochs", "20"]),
                 main(["eval", "all", "--horizon", "30"])]
        timings[f"{arch}-{latent}"] = time.perf_counter() - start
        latest = json.loads((tmp_path / "latest.json").read_text())
        reports = list(Path(latest["run"]).glob("report-*.json"))
        valid &= codes == [0, 0, 0] and len(reports) == 1
        if reports:
            MetricReport.load(reports[0])
    valid &= main(["report", "--out", str(tmp_path / "csv")]) == 0
    header = (tmp_path / "csv" / "rollout.csv").read_text().splitlines()[0].split(",")
    valid &= tuple(header) == REPORT_COLUMNS
    slowest = max(timings.values())
    ok = valid and slowest <= 60.0
    acceptance(8, ok, "gen/train/eval per variant: "
                      + ", ".join(f"{k} {v:.0f}s" for k, v in timings.items()))
    assert valid
    assert slowest <= 60.0
