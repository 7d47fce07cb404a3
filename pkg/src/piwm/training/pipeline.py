"""Staged training: representation stages first, then the dynamics fit.

Extrinsic runs train the vision autoencoder, freeze it, train the physical
encoder/decoder on its latents, freeze that, and finally fit θ.  Intrinsic
runs train one representation model and then fit θ.  Hidden states are
never touched here.
"""

from __future__ import annotations

import csv
import hashlib
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dataset import Dataset, split_dataset
from ..dynamics import FitResult, fit_dynamics, init_theta, make_windows, model_for, relative_errors
from ..envsim import EnvSpec
from ..latent import IntrinsicModel, PhysicalAutoencoder, VisionAutoencoder
from ..nncore import (Adam, NonFiniteError, NonFiniteGradientError, Param, TrainSchedule, load_checkpoint,
                      lr_at, restore_params, save_checkpoint, train_step)
from .config import ArchConfig, ConfigError

ENCODE_CHUNK = 512
_LOSS_KEYS_SKIP = ("usage", "z_cont")


class TrainingDivergedError(RuntimeError):
    pass


class WorldModel:
    """Representation modules of one variant plus the dynamics parameters."""

    def __init__(self, cfg: ArchConfig, spec: EnvSpec, seed: int):
        self.cfg, self.spec, self.seed = cfg, spec, seed
        rng = np.random.default_rng([seed, 1])
        self.vision = self.physical_ae = self.intrinsic = None
        if cfg.architecture == "extrinsic":
            self.vision = VisionAutoencoder(cfg.latent, spec.image_shape, rng, cfg.latent_dim,
                                            cfg.codebook_size, cfg.beta_kl, cfg.commitment)
            self.physical_ae = PhysicalAutoencoder(self.vision, spec, rng, cfg.hidden)
        else:
            self.intrinsic = IntrinsicModel(cfg.latent, spec, rng, cfg.latent_dim, cfg.codebook_size,
                                            cfg.beta_kl, cfg.commitment)
        self.dynamics = model_for(spec)
        self.theta: np.ndarray | None = None

    def stage_modules(self, stage: str):
        return {"vision": self.vision, "physical": self.physical_ae,
                "representation": self.intrinsic}.get(stage)

    def stage_params(self, stage: str) -> dict[str, Param]:
        if stage == "dynamics":
            theta = Param(self.theta if self.theta is not None else np.zeros(self.dynamics.n_params), "theta")
            return {"dynamics.theta": theta}
        return self.stage_modules(stage).named_params()

    def named_params(self) -> dict[str, Param]:
        out = {}
        for stage in self.cfg.stages:
            if stage != "dynamics":
                out.update(self.stage_params(stage))
        return out

    def physical(self, images) -> np.ndarray:
        """z_p* for a batch of observations (values in state units)."""
        images = np.asarray(images, dtype=np.float64)
        parts = []
        for s in range(0, len(images), ENCODE_CHUNK):
            chunk = images[s:s + ENCODE_CHUNK]
            if self.physical_ae is not None:
                parts.append(self.physical_ae.physical(chunk))
            else:
                parts.append(self.intrinsic.physical(chunk))
        return np.concatenate(parts, axis=0)

    def encode_pixels(self, pixels) -> np.ndarray:
        """Physical latents for uint8 frames of any leading shape (..., H, W)."""
        lead = pixels.shape[:-2]
        flat = pixels.reshape((-1,) + pixels.shape[-2:]) / 255.0
        return self.physical(flat).reshape(lead + (self.spec.n_supervised,))


@dataclass
class RunArtifact:
    config: ArchConfig
    seed: int
    env: str
    dataset_checksum: str
    model: WorldModel
    theta: np.ndarray
    fit: FitResult | None
    curves: dict[str, list[dict]] = field(default_factory=dict)
    checkpoints: dict[str, str] = field(default_factory=dict)
    run_dir: Path | None = None
    pixels_checksum: str | None = None


def _frames(data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    n, m = data.n_records, data.length
    return data.pixels.reshape((n * m,) + data.pixels.shape[2:]), data.proxy_means.reshape(n * m, -1)


def _components(out: dict) -> dict[str, float]:
    return {k: float(v) for k, v in out.items() if k not in _LOSS_KEYS_SKIP}


def _fit_network(name: str, params: dict[str, Param], batch_fn, n_items: int, schedule: TrainSchedule,
                 val_fn, rng: np.random.Generator, max_steps: int | None, epoch_hook=None) -> list[dict]:
    """Generic epoch loop with clipping, cosine schedule, early stopping and best-validation restore."""
    plist = list(params.values())
    opt = Adam(plist)
    best, best_values, stale, rows = np.inf, None, 0, []
    for epoch in range(schedule.max_epochs):
        lr = lr_at(schedule, epoch)
        order = rng.permutation(n_items)
        if max_steps is not None:
            order = order[:max_steps * schedule.batch_size]
        sums, count = defaultdict(float), 0
        for s in range(0, len(order), schedule.batch_size):
            idx = order[s:s + schedule.batch_size]
            for p in plist:
                p.zero_grad()
            try:
                comps = batch_fn(idx)
                if not np.isfinite(sum(comps.values())):
                    raise TrainingDivergedError(f"{name} epoch {epoch}: non-finite loss {comps}")
                train_step(plist, opt, lr, schedule.clip_norm)
            except (NonFiniteError, NonFiniteGradientError) as exc:
                raise TrainingDivergedError(f"{name} epoch {epoch}: {exc}") from exc
            for k, v in comps.items():
                sums[k] += v * len(idx)
            count += len(idx)
        if epoch_hook is not None:
            epoch_hook(epoch)
        val = float(val_fn())
        row = {"epoch": epoch, "lr": lr}
        row.update({k: sums[k] / count for k in sums})
        row["total"] = float(sum(row[k] for k in sums))
        row["val_loss"] = val
        rows.append(row)
        if not np.isfinite(val):
            raise TrainingDivergedError(f"{name} epoch {epoch}: non-finite validation loss")
        if val < best:
            best, stale = val, 0
            best_values = {k: p.value.copy() for k, p in params.items() if p.trainable}
        else:
            stale += 1
            if stale >= schedule.patience:
                break
    if best_values is not None:
        for k, v in best_values.items():
            params[k].value[...] = v
    return rows


def _val_subset(n: int, limit: int, rng: np.random.Generator) -> np.ndarray:
    return np.sort(rng.choice(n, size=min(n, limit), replace=False))


def train_stage_vision(model: WorldModel, train: Dataset, val: Dataset) -> list[dict]:
    cfg, vision = model.cfg, model.vision
    if vision is None:
        raise ConfigError("the vision stage exists only for extrinsic runs")
    sched = cfg.stages["vision"]
    frames, _ = _frames(train)
    val_frames = _frames(val)[0][_val_subset(val.n_records * val.length, cfg.val_frames,
                                             np.random.default_rng([model.seed, 2, 0]))] / 255.0
    rng = np.random.default_rng([model.seed, 2, 1])
    usage = np.zeros(cfg.codebook_size, dtype=np.int64)
    recent: list[np.ndarray] = []
    if vision.kind == "discrete":
        vision.init_codebook(frames[rng.choice(len(frames), size=min(len(frames), 4 * cfg.codebook_size),
                                                replace=False)] / 255.0, rng)

    def batch_fn(idx):
        out = vision.loss_and_backward(frames[idx] / 255.0, rng, cfg.lambda_reg)
        if out["usage"] is not None:
            np.add.at(usage, out["usage"], 1)
            recent.append(out["z_cont"])
        return _components(out)

    def hook(epoch):
        if vision.kind == "discrete" and cfg.restart_dead_codes:
            vision.restart_dead_codes(usage, np.concatenate(recent[-32:]), rng)
        usage[...] = 0
        recent.clear()

    def val_fn():
        out = vision.loss_and_backward(val_frames, np.random.default_rng([model.seed, 2, 2]),
                                       cfg.lambda_reg, backward=False)
        return sum(_components(out).values())

    rows = _fit_network("vision", vision.named_params(), batch_fn, len(frames), sched, val_fn, rng,
                        cfg.max_steps_per_epoch, hook)
    vision.freeze()
    return rows


def _latents(vision: VisionAutoencoder, frames: np.ndarray) -> np.ndarray:
    return np.concatenate([vision.latent(frames[s:s + ENCODE_CHUNK] / 255.0)
                           for s in range(0, len(frames), ENCODE_CHUNK)], axis=0)


def train_stage_physical(model: WorldModel, train: Dataset, val: Dataset) -> list[dict]:
    cfg, phys = model.cfg, model.physical_ae
    if phys is None:
        raise ConfigError("the physical stage exists only for extrinsic runs")
    if not model.vision.frozen:
        raise ConfigError("train and freeze the vision stage first")
    frames, targets = _frames(train)
    vframes, vtargets = _frames(val)
    z = _latents(model.vision, frames)
    phys.fit_normalizer(z)
    sel = _val_subset(len(vframes), cfg.val_frames, np.random.default_rng([model.seed, 3, 0]))
    zv, tv = _latents(model.vision, vframes[sel]), vtargets[sel]
    rng = np.random.default_rng([model.seed, 3, 1])

    def batch_fn(idx):
        return _components(phys.loss_and_backward(z[idx], targets[idx], cfg.lambda_interp, cfg.lambda_latent))

    def val_fn():
        return sum(_components(phys.loss_and_backward(zv, tv, cfg.lambda_interp, cfg.lambda_latent,
                                                      backward=False)).values())

    trainable = {k: p for k, p in phys.named_params().items() if p.trainable}
    rows = _fit_network("physical", trainable, batch_fn, len(frames), cfg.stages["physical"],
                        val_fn, rng, cfg.max_steps_per_epoch)
    phys.freeze()
    return rows


def train_stage_representation(model: WorldModel, train: Dataset, val: Dataset) -> list[dict]:
    cfg, net = model.cfg, model.intrinsic
    if net is None:
        raise ConfigError("the single representation stage exists only for intrinsic runs")
    frames, targets = _frames(train)
    vframes, vtargets = _frames(val)
    sel = _val_subset(len(vframes), cfg.val_frames, np.random.default_rng([model.seed, 4, 0]))
    vf, vt = vframes[sel] / 255.0, vtargets[sel]
    rng = np.random.default_rng([model.seed, 4, 1])

    def batch_fn(idx):
        return _components(net.loss_and_backward(frames[idx] / 255.0, targets[idx], rng,
                                                 cfg.lambda_interp, cfg.lambda_reg))

    def val_fn():
        out = net.loss_and_backward(vf, vt, np.random.default_rng([model.seed, 4, 2]), cfg.lambda_interp,
                                    cfg.lambda_reg, backward=False)
        return sum(_components(out).values())

    rows = _fit_network("representation", net.named_params(), batch_fn, len(frames),
                        cfg.stages["representation"], val_fn, rng, cfg.max_steps_per_epoch)
    net.freeze()
    return rows


def edge_margin(spec: EnvSpec, delta: float) -> np.ndarray:
    """Distance from the range edges inside which dynamics windows are discarded."""
    return (0.5 * delta + 0.02) * spec.supervised_widths


def dynamics_windows(latents, data: Dataset, horizon: int):
    spec = data.spec
    return make_windows(latents, data.actions, data.proxy_means, horizon, low=spec.supervised_low,
                        high=spec.supervised_high, margin=edge_margin(spec, data.manifest["delta"]))


def train_stage_dynamics(model: WorldModel, train: Dataset, val: Dataset, theta0=None) -> tuple[FitResult, list[dict]]:
    cfg = model.cfg
    for stage in cfg.stages:
        if stage != "dynamics" and not model.stage_modules(stage).frozen:
            raise ConfigError(f"stage {stage!r} must be frozen before fitting dynamics")
    # short trajectories get a shorter horizon so every record still yields windows
    horizon = max(2, min(cfg.dyn_horizon, train.length - 2))
    w_train = dynamics_windows(model.encode_pixels(train.pixels), train, horizon)
    w_val = dynamics_windows(model.encode_pixels(val.pixels), val, horizon)
    if len(w_train) == 0:
        raise ConfigError("no usable dynamics windows; trajectories too short for the horizon")
    dyn = model.dynamics
    if theta0 is None:
        theta0 = init_theta(dyn, np.random.default_rng([model.seed, 5]))
    fit = fit_dynamics(dyn, w_train, w_val if len(w_val) else None, theta0, cfg.stages["dynamics"], seed=model.seed)
    model.theta = fit.theta.copy()
    return fit, theta_rows(fit, model.spec)


def theta_rows(fit: FitResult, spec: EnvSpec) -> list[dict]:
    rows = []
    for epoch, theta in enumerate(fit.theta_curve):
        row = {"epoch": epoch, "loss": fit.train_curve[epoch - 1] if epoch else float("nan"),
               "val_loss": fit.val_curve[epoch]}
        row.update({name: float(v) for name, v in zip(spec.param_names, theta)})
        if spec.reference_known:
            errs = relative_errors(theta, spec.true_params)
            row.update({f"relerr_{name}": float(e) for name, e in zip(spec.param_names, errs)})
        rows.append(row)
    return rows


def _write_csv(path: Path, rows: list[dict]):
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(dict.fromkeys(k for row in rows for k in row))
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)


def _train_stages(model: WorldModel, train: Dataset, val: Dataset, stages) -> tuple[dict, FitResult | None]:
    curves: dict[str, list[dict]] = {}
    fit = None
    for stage in stages:
        if stage == "vision":
            curves[stage] = train_stage_vision(model, train, val)
        elif stage == "physical":
            curves[stage] = train_stage_physical(model, train, val)
        elif stage == "representation":
            curves[stage] = train_stage_representation(model, train, val)
        else:
            fit, curves[stage] = train_stage_dynamics(model, train, val)
    return curves, fit


def pixels_checksum(data: Dataset) -> str:
    """Fingerprint of everything the vision stage reads: the frames and their layout."""
    h = hashlib.sha256(repr(data.pixels.shape).encode())
    h.update(np.ascontiguousarray(data.pixels).tobytes())
    return h.hexdigest()


def _adopt_vision(model: WorldModel, donor: RunArtifact, data: Dataset):
    if model.cfg.architecture != "extrinsic":
        raise ConfigError("only extrinsic runs have a vision stage to reuse")
    if donor.config.checksum() != model.cfg.checksum() or donor.seed != model.seed:
        raise ConfigError("the donor run was trained with a different config or seed")
    if donor.model.vision is None or not donor.model.vision.frozen:
        raise ConfigError("the donor run has no finished vision stage")
    if donor.pixels_checksum != pixels_checksum(data):
        raise ConfigError("the donor run saw different frames")
    # frozen and read-only, so sharing the object is safe
    model.vision = model.physical_ae.vision = donor.model.vision


def run_variant(data: Dataset, cfg: ArchConfig, seed: int = 0, run_dir=None,
                reuse_vision: RunArtifact | None = None) -> RunArtifact:
    """Train every stage of ``cfg`` on ``data`` and optionally persist the run.

    The vision stage never sees supervision, so runs that differ only in
    their labels can share it: pass an earlier run as ``reuse_vision`` and
    its frozen vision model is adopted instead of retrained.  Config, seed
    and frames must match.
    """
    spec = data.spec
    train, val = split_dataset(data, cfg.val_fraction, seed)
    model = WorldModel(cfg, spec, seed)
    stages = list(cfg.stages)
    donor_curves = {}
    if reuse_vision is not None:
        _adopt_vision(model, reuse_vision, data)
        stages.remove("vision")
        donor_curves = {"vision": reuse_vision.curves.get("vision", [])}
    curves, fit = _train_stages(model, train, val, stages)
    checksum = data.manifest.get("checksum") or data.checksum()
    art = RunArtifact(cfg, seed, spec.name, checksum, model, model.theta.copy(), fit, {**donor_curves, **curves},
                      pixels_checksum=pixels_checksum(data))
    if run_dir is not None:
        save_run(art, run_dir)
    return art


def run_stage(data: Dataset, cfg: ArchConfig, seed: int, run_dir, stage: str) -> RunArtifact:
    """Train one stage, loading the earlier stages' checkpoints from ``run_dir``.

    Later stages already on disk are discarded, since they depended on the
    weights being replaced.
    """
    if stage not in cfg.stages:
        raise ConfigError(f"{cfg.variant} runs have no stage {stage!r}; choose from {tuple(cfg.stages)}")
    run_dir = Path(run_dir)
    order = list(cfg.stages)
    done = order[:order.index(stage)]
    checksum = data.manifest.get("checksum") or data.checksum()
    if done:
        art = load_run(run_dir, upto=done[-1])
        if art.config.checksum() != cfg.checksum() or art.seed != seed:
            raise ConfigError(f"run in {run_dir} was trained with a different config or seed")
        if art.dataset_checksum != checksum:
            raise ConfigError(f"run in {run_dir} was trained on a different dataset")
        model = art.model
    else:
        model = WorldModel(cfg, data.spec, seed)
    train, val = split_dataset(data, cfg.val_fraction, seed)
    curves, fit = _train_stages(model, train, val, [stage])
    for later in order[order.index(stage) + 1:]:
        (run_dir / f"{later}.ckpt").unlink(missing_ok=True)
    theta = model.theta.copy() if model.theta is not None else None
    art = RunArtifact(cfg, seed, data.spec.name, checksum, model, theta, fit, curves,
                      pixels_checksum=pixels_checksum(data))
    save_run(art, run_dir, stages=done + [stage])
    return art


def save_run(art: RunArtifact, run_dir, stages=None) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    meta = {"config_checksum": art.config.checksum(), "seed": art.seed, "dataset_checksum": art.dataset_checksum}
    snapshot = {"config": art.config.to_dict(), "seed": art.seed, "env": art.env,
                "dataset_checksum": art.dataset_checksum, "config_checksum": meta["config_checksum"]}
    # key order matters: stages are stored in training order
    (run_dir / "config.json").write_text(json.dumps(snapshot, indent=2))
    for stage in stages or art.config.stages:
        path = run_dir / f"{stage}.ckpt"
        save_checkpoint(path, art.model.stage_params(stage), {**meta, "stage": stage})
        art.checkpoints[stage] = str(path)
        if stage in art.curves:
            _write_csv(run_dir / "logs" / f"{stage}.csv", art.curves[stage])
    art.run_dir = run_dir
    return run_dir


def load_run(run_dir, upto: str | None = None) -> RunArtifact:
    """Rebuild a run from its directory; ``upto`` stops after that stage."""
    run_dir = Path(run_dir)
    config_path = run_dir / "config.json"
    if not config_path.exists():
        raise FileNotFoundError(f"no run found in {run_dir}")
    snap = json.loads(config_path.read_text())
    cfg = ArchConfig.from_dict(snap["config"])
    from ..envsim import get_spec

    stages = list(cfg.stages)
    if upto is not None:
        stages = stages[:stages.index(upto) + 1]
    model = WorldModel(cfg, get_spec(snap["env"]), snap["seed"])
    for stage in stages:
        path = run_dir / f"{stage}.ckpt"
        if not path.exists():
            raise FileNotFoundError(f"stage {stage!r} has not been trained in {run_dir}")
        stored, meta = load_checkpoint(path)
        if meta.get("config_checksum") != snap["config_checksum"]:
            raise ConfigError(f"{path.name} belongs to a different config")
        if stage == "dynamics":
            model.theta = stored["dynamics.theta"][0].copy()
        else:
            restore_params(model.stage_modules(stage).named_params(), stored)
    ckpts = {s: str(run_dir / f"{s}.ckpt") for s in stages}
    theta = model.theta.copy() if model.theta is not None else None
    return RunArtifact(cfg, snap["seed"], snap["env"], snap["dataset_checksum"], model, theta,
                       None, {}, ckpts, run_dir)
