"""Metrics: static encoding error, multi-step rollout error and parameter recovery.

This is the one place where hidden states are read, inside an explicit
``hidden_state_access`` block.  Rollout errors are normalized per dim by
the range size |X_i|, and the per-dim RMSEs are averaged over dims.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset, hidden_state_access
from .dynamics import DynamicsModel, init_theta, relative_errors, rollout_dyn
from .envsim import EnvSpec
from .latent import GaussianPosterior, kl_loss

NO_GROUND_TRUTH = "no ground truth"
REPORT_COLUMNS = ("step", "rmse_mean", "rmse_std", "delta", "variant", "seed_count")


class EvaluationError(ValueError):
    pass


def _truth(data: Dataset) -> np.ndarray:
    with hidden_state_access():
        return data.states[..., list(data.spec.supervised)]


def eval_static(encode, data: Dataset, kl_fn=None) -> dict:
    """Mean over frames of |z_p*(y) - x_sup|^2, the dataset-mean baseline and optionally mean KL.

    ``encode`` maps uint8 frames (..., H, W) to physical latents (..., D).
    """
    truth = _truth(data)
    pred = encode(data.pixels)
    if pred.shape != truth.shape:
        raise EvaluationError(f"encoder output {pred.shape} does not match supervised states {truth.shape}")
    flat = truth.reshape(-1, truth.shape[-1])
    out = {
        "mse": float(np.mean(np.sum((pred - truth) ** 2, axis=-1))),
        "baseline_mse": float(np.mean(np.sum((flat - flat.mean(axis=0)) ** 2, axis=-1))),
    }
    if kl_fn is not None:
        out["kl"] = float(kl_fn(data.pixels))
    return out


def normalized_rmse(pred, truth, widths) -> np.ndarray:
    """Per-step RMSE over windows, per dim in units of |X_i|, averaged over dims.

    ``pred`` and ``truth`` have shape (W, H, D); the result has shape (H,).
    """
    err = (np.asarray(pred) - truth) / np.asarray(widths)
    return np.sqrt(np.mean(err**2, axis=0)).mean(axis=-1)


@dataclass
class RolloutWindows:
    z0: np.ndarray
    z1: np.ndarray
    actions: np.ndarray  # (W, H, A)
    truth: np.ndarray  # (W, H, D) states at t+2 .. t+H+1


def rollout_windows(latents, data: Dataset, horizon: int, stride: int = 1) -> RolloutWindows:
    m = data.length
    if horizon > m - 2:
        raise EvaluationError(f"horizon {horizon} exceeds trajectory length minus two ({m - 2})")
    truth = _truth(data)
    starts = np.arange(0, m - horizon - 1, stride)
    n = data.n_records
    traj = np.repeat(np.arange(n), len(starts))
    t = np.tile(starts, n)
    steps = t[:, None] + 1 + np.arange(horizon)[None]
    return RolloutWindows(latents[traj, t], latents[traj, t + 1], data.actions[traj[:, None], steps],
                          truth[traj[:, None], steps + 1])


def constant_velocity(z0, z1, horizon: int) -> np.ndarray:
    k = np.arange(1, horizon + 1)[None, :, None]
    return z1[:, None] + k * (z1 - z0)[:, None]


def eval_rollout(encode, dynamics: DynamicsModel, theta, data: Dataset, horizon: int = 30,
                 untrained_theta=None, stride: int = 1) -> dict:
    """RMSE curves over steps 1..H for the model, constant velocity and (optionally) untrained θ."""
    spec = data.spec
    latents = encode(data.pixels)
    w = rollout_windows(latents, data, horizon, stride)
    widths = spec.supervised_widths

    def curve(th):
        ro = rollout_dyn(dynamics, w.z0, w.z1, w.actions, th, horizon + 1)
        return normalized_rmse(ro.predictions, w.truth, widths)

    out = {
        "horizon": horizon,
        "windows": int(len(w.z0)),
        "rmse": curve(theta).tolist(),
        "rmse_constant_velocity": normalized_rmse(constant_velocity(w.z0, w.z1, horizon), w.truth, widths).tolist(),
    }
    if untrained_theta is not None:
        out["rmse_untrained"] = curve(untrained_theta).tolist()
    return out


def eval_params(theta, spec: EnvSpec) -> dict:
    names = list(spec.param_names)
    out = {"names": names, "values": [float(v) for v in theta]}
    if not spec.reference_known:
        out["relative_error"] = NO_GROUND_TRUTH
    else:
        out["relative_error"] = [float(e) for e in relative_errors(theta, spec.true_params)]
    return out


def oracle_encoder(data: Dataset):
    """Encoder fixture that returns the true supervised states of ``data``'s frames."""
    truth = _truth(data)

    def encode(pixels):
        if pixels.shape[:2] != truth.shape[:2]:
            raise EvaluationError("oracle encoder only covers the frames of its own dataset")
        return truth

    return encode


def untrained_theta(dynamics: DynamicsModel, seed: int) -> np.ndarray:
    """The θ a training run with ``seed`` starts its dynamics fit from."""
    return init_theta(dynamics, np.random.default_rng([seed, 5]))


def model_kl(model, pixels) -> float:
    """Mean posterior KL over frames for continuous variants (visual slice only when intrinsic)."""
    flat = pixels.reshape((-1,) + pixels.shape[-2:]) / 255.0
    total, count = 0.0, 0
    for s in range(0, len(flat), 512):
        chunk = flat[s:s + 512]
        if model.vision is not None:
            post: GaussianPosterior = model.vision.encode(chunk)
            mean, logvar = post.mean, post.logvar
        else:
            post = model.intrinsic.encode(chunk)
            mean, logvar = post.mean[:, model.intrinsic.n_phys:], post.logvar
        total += kl_loss(mean, logvar) * len(chunk)
        count += len(chunk)
    return total / count


@dataclass
class MetricReport:
    env: str
    variant: str
    delta: float
    seeds: list[int]
    config_checksum: str
    static: dict = field(default_factory=dict)
    rollout: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def validate(self):
        curve = self.rollout.get("rmse")
        if curve is not None:
            if any(v < 0 for v in curve):
                raise EvaluationError("negative RMSE entry")
            if len(curve) != self.rollout.get("horizon"):
                raise EvaluationError("RMSE curve must cover steps 1..horizon")
        return self

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self.validate()), indent=2, sort_keys=True))
        return path

    @classmethod
    def load(cls, path) -> "MetricReport":
        return cls(**json.loads(Path(path).read_text())).validate()


def evaluate_run(art, data: Dataset, kinds=("static", "rollout", "params"), horizon: int = 30) -> MetricReport:
    model = art.model
    report = MetricReport(art.env, art.config.variant, float(data.manifest["delta"]), [art.seed],
                          art.config.checksum())
    if "static" in kinds:
        kl_fn = (lambda px: model_kl(model, px)) if art.config.latent == "continuous" else None
        report.static = eval_static(model.encode_pixels, data, kl_fn)
    if "rollout" in kinds:
        report.rollout = eval_rollout(model.encode_pixels, model.dynamics, art.theta, data,
                                      min(horizon, data.length - 2), untrained_theta(model.dynamics, art.seed))
    if "params" in kinds:
        report.params = eval_params(art.theta, data.spec)
    return report.validate()


def _latest_with(reports: list[MetricReport], section: str) -> dict[tuple, list[MetricReport]]:
    """Group by (variant, delta); a later report of the same run replaces an earlier one."""
    unique: dict[tuple, MetricReport] = {}
    for r in reports:
        if getattr(r, section):
            unique[(r.variant, r.delta, tuple(r.seeds), r.config_checksum)] = r
    groups: dict[tuple, list[MetricReport]] = {}
    for (variant, delta, _, _), r in unique.items():
        groups.setdefault((variant, delta), []).append(r)
    return groups


def merge_reports(reports: list[MetricReport]) -> list[dict]:
    """Rows of the rollout CSV, grouped by (variant, delta) and averaged over seeds."""
    groups = _latest_with(reports, "rollout")
    rows = []
    for (variant, delta), members in sorted(groups.items()):
        horizon = min(len(m.rollout["rmse"]) for m in members)
        curves = np.array([m.rollout["rmse"][:horizon] for m in members])
        seeds = sorted({s for m in members for s in m.seeds})
        for step in range(horizon):
            rows.append({"step": step + 1, "rmse_mean": float(curves[:, step].mean()),
                         "rmse_std": float(curves[:, step].std()), "delta": delta, "variant": variant,
                         "seed_count": len(seeds)})
    return rows


def write_report(reports: list[MetricReport], out_dir) -> dict[str, Path]:
    """Rollout CSV (fixed column order) plus static and parameter plot-data CSVs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"rollout": out_dir / "rollout.csv", "static": out_dir / "static.csv", "params": out_dir / "params.csv"}
    with open(paths["rollout"], "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        writer.writerows(merge_reports(reports))
    with open(paths["static"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "delta", "mse_mean", "mse_std", "baseline_mse", "seed_count"])
        for (variant, delta), members in sorted(_latest_with(reports, "static").items()):
            vals = [m.static["mse"] for m in members]
            writer.writerow([variant, delta, float(np.mean(vals)), float(np.std(vals)),
                             float(np.mean([m.static["baseline_mse"] for m in members])), len(vals)])
    with open(paths["params"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "delta", "seed", "parameter", "value", "relative_error"])
        for _, members in sorted(_latest_with(reports, "params").items()):
            for r in members:
                errs = r.params["relative_error"]
                for i, name in enumerate(r.params["names"]):
                    err = errs if isinstance(errs, str) else errs[i]
                    writer.writerow([r.variant, r.delta, r.seeds[0], name, r.params["values"][i], err])
    return paths
