"""Command-line entry point: ``piwm gen | train | eval | gradcheck | report``.

Files live under a run root taken from ``$PIWM_RUNS`` (default ``./piwm_runs``).
``gen`` and ``train`` record what they produced in ``<root>/latest.json`` so the
next command can omit ``--data`` / ``--run``.  Failures print one JSON line
``{"category": ..., "message": ...}`` to stderr and exit with a code per category.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import envsim
from .dataset import DatasetError, generate_dataset, load_dataset, save_dataset
from .dynamics import HORIZONS, dyn_grad_suite
from .evaluation import EvaluationError, MetricReport, evaluate_run, write_report
from .nncore import CheckpointError, TrainSchedule
from .nncore.gradcheck import kernel_suite
from .training import STAGES, ArchConfig, ConfigError, TrainingDivergedError, load_run, run_stage, run_variant
from .weaksup import DEFAULT_SAMPLES, SupervisionConfig

RUNS_ENV = "PIWM_RUNS"
EXIT_CODES = {"usage": 2, "config": 3, "data": 4, "checkpoint": 5, "diverged": 6, "evaluation": 7,
              "gradcheck": 8, "io": 9}
EVAL_KINDS = ("static", "rollout", "params")


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def run_root() -> Path:
    return Path(os.environ.get(RUNS_ENV, "piwm_runs"))


def _latest_path() -> Path:
    return run_root() / "latest.json"


def _read_latest() -> dict:
    path = _latest_path()
    return json.loads(path.read_text()) if path.exists() else {}


def _update_latest(**entries):
    path = _latest_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({**_read_latest(), **entries}, indent=2))


def _resolve(value, key: str, flag: str) -> Path:
    if value:
        return Path(value)
    latest = _read_latest().get(key)
    if latest is None:
        raise CliError("usage", f"no {key} recorded under {run_root()}; pass {flag}")
    return Path(latest)


def _fmt(x: float) -> str:
    return f"{x:g}".replace(".", "p")


def _load_data(path: Path):
    if not path.exists():
        raise CliError("data", f"dataset {path} does not exist")
    return load_dataset(path)


def _load_run(path: Path):
    try:
        return load_run(path)
    except FileNotFoundError as exc:
        raise CliError("checkpoint", str(exc)) from exc


def cmd_gen(args) -> int:
    spec = envsim.get_spec(args.env)
    cfg = SupervisionConfig(delta=args.delta, samples_per_step=args.samples,
                            seed=args.seed if args.supervision_seed is None else args.supervision_seed)
    data = generate_dataset(spec, args.n, args.m, cfg, policy=args.policy, seed=args.seed,
                            random_fraction=args.random_fraction, epsilon=args.epsilon)
    out = Path(args.out) if args.out else (
        run_root() / "data" / f"{spec.name}-n{args.n}-m{args.m}-d{_fmt(args.delta)}-s{args.seed}.piwm")
    save_dataset(data, out)
    _update_latest(data=str(out))
    print(json.dumps({"dataset": str(out), "checksum": data.manifest["checksum"]}))
    return 0


def _build_config(args) -> ArchConfig:
    if args.config:
        base = json.loads(Path(args.config).read_text())
        base.setdefault("architecture", args.arch)
        base.setdefault("latent", args.latent)
        cfg = ArchConfig.from_dict(base)
    else:
        fields = {k: getattr(args, k) for k in ("lambda_interp", "lambda_latent", "lambda_reg", "beta_kl",
                                               "codebook_size", "dyn_horizon", "max_steps_per_epoch")
                  if getattr(args, k) is not None}
        cfg = ArchConfig(args.arch, args.latent, **fields)
    overrides = {k: v for k, v in (("max_epochs", args.epochs), ("batch_size", args.batch_size), ("lr", args.lr))
                 if v is not None}
    if overrides:
        if "max_epochs" in overrides:
            overrides["warmup_epochs"] = min(5, overrides["max_epochs"] - 1)
            overrides["patience"] = overrides["max_epochs"]
        cfg = cfg.with_schedules(**overrides)
    if args.dyn_epochs is not None:
        stages = dict(cfg.stages)
        old = stages["dynamics"]
        stages["dynamics"] = TrainSchedule(lr=old.lr, batch_size=old.batch_size, max_epochs=args.dyn_epochs,
                                           warmup_epochs=min(old.warmup_epochs, args.dyn_epochs - 1),
                                           patience=min(old.patience, args.dyn_epochs),
                                           clip_norm=old.clip_norm, min_lr_ratio=old.min_lr_ratio)
        cfg = ArchConfig.from_dict({**cfg.to_dict(), "stages": stages})
    return cfg


def cmd_train(args) -> int:
    data_path = _resolve(args.data, "data", "--data")
    data = _load_data(data_path)
    cfg = _build_config(args)
    run_dir = Path(args.run_dir) if args.run_dir else (
        run_root() / "runs" / f"{data_path.stem}-{args.arch}-{args.latent}-s{args.seed}")
    if args.stage == "all":
        art = run_variant(data, cfg, seed=args.seed, run_dir=run_dir)
    else:
        art = run_stage(data, cfg, args.seed, run_dir, args.stage)
    _update_latest(run=str(run_dir), run_data=str(data_path))
    summary = {"run_dir": str(run_dir), "stages": list(art.curves)}
    if art.theta is not None:
        summary["theta"] = dict(zip(data.spec.param_names, map(float, art.theta)))
    print(json.dumps(summary))
    return 0


def cmd_eval(args) -> int:
    run_dir = _resolve(args.run, "run", "--run")
    art = _load_run(run_dir)
    latest = _read_latest()
    key = "run_data" if latest.get("run") == str(run_dir) else "data"
    data = _load_data(_resolve(args.data, key, "--data"))
    if art.theta is None and args.kind in ("rollout", "params", "all"):
        raise CliError("evaluation", f"run in {run_dir} has no fitted dynamics yet")
    if art.env != data.spec.name:
        raise CliError("evaluation", f"run is for {art.env} but the dataset is {data.spec.name}")
    kinds = EVAL_KINDS if args.kind == "all" else (args.kind,)
    horizon = args.horizon
    if "rollout" in kinds and horizon > data.length - 2:
        print(f"note: horizon {horizon} clipped to {data.length - 2} (trajectory length {data.length})",
              file=sys.stderr)
    report = evaluate_run(art, data, kinds, horizon)
    out = Path(args.out) if args.out else run_dir / f"report-{args.kind}-d{_fmt(report.delta)}.json"
    report.save(out)
    print(json.dumps({"report": str(out)}))
    return 0


def cmd_gradcheck(args) -> int:
    results = kernel_suite(n_instances=args.instances, seed=args.seed)
    results += dyn_grad_suite(HORIZONS, n_instances=args.dyn_instances, seed=args.seed)
    worst: dict[str, tuple[float, bool, int]] = {}
    for r in results:
        err, ok, count = worst.get(r.kernel, (0.0, True, 0))
        worst[r.kernel] = (max(err, r.error) if np.isfinite(r.error) else np.inf, ok and r.passed, count + 1)
    for name, (err, ok, count) in worst.items():
        print(f"{name:24s} n={count:3d} max_rel_err={err:.3e} {'ok' if ok else 'FAIL'}")
    failed = [name for name, (_, ok, _) in worst.items() if not ok]
    if failed:
        raise CliError("gradcheck", f"kernels over tolerance: {', '.join(failed)}")
    return 0


def cmd_report(args) -> int:
    paths = args.reports or sorted(glob.glob(str(run_root() / "**" / "report-*.json"), recursive=True))
    if not paths:
        raise CliError("io", f"no report files given or found under {run_root()}")
    reports = [MetricReport.load(p) for p in paths]
    out = Path(args.out) if args.out else run_root() / "report"
    written = write_report(reports, out)
    print(json.dumps({k: str(v) for k, v in written.items()}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="piwm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="simulate a dataset with weak supervision")
    gen.add_argument("--env", choices=sorted(envsim.ENVS), default="cartpole")
    gen.add_argument("--n", type=int, default=2000, help="number of trajectories")
    gen.add_argument("--m", type=int, default=50, help="steps per trajectory")
    gen.add_argument("--delta", type=float, default=0.05, help="supervision noise level, fraction of each range")
    gen.add_argument("--samples", type=int, default=DEFAULT_SAMPLES, help="proxy samples per step")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--supervision-seed", type=int, default=None, help="defaults to --seed")
    gen.add_argument("--policy", choices=envsim.POLICY_MODES, default="mixed")
    gen.add_argument("--epsilon", type=float, default=envsim.EPSILON, help="random-action rate of 'mixed'")
    gen.add_argument("--random-fraction", type=float, default=0.0, help="share of fully random trajectories")
    gen.add_argument("--out", help="dataset path (default under the run root)")
    gen.set_defaults(func=cmd_gen)

    train = sub.add_parser("train", help="train a variant, or one stage of it")
    train.add_argument("--arch", choices=tuple(STAGES), default="extrinsic")
    train.add_argument("--latent", choices=("continuous", "discrete"), default="discrete")
    train.add_argument("--stage", default="all", help="'all' or one stage name of the architecture")
    train.add_argument("--data", help="dataset path (default: last generated)")
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--run-dir", help="output directory (default under the run root)")
    train.add_argument("--config", help="JSON file with ArchConfig fields")
    train.add_argument("--epochs", type=int, help="max epochs of every network stage")
    train.add_argument("--batch-size", type=int, help="batch size of every network stage")
    train.add_argument("--lr", type=float, help="peak learning rate of every network stage")
    train.add_argument("--dyn-epochs", type=int, help="max epochs of the dynamics fit")
    train.add_argument("--dyn-horizon", type=int, help="rollout length of dynamics training windows")
    train.add_argument("--max-steps-per-epoch", type=int, help="cap on batches per network epoch")
    train.add_argument("--lambda-interp", type=float)
    train.add_argument("--lambda-latent", type=float)
    train.add_argument("--lambda-reg", type=float)
    train.add_argument("--beta-kl", type=float)
    train.add_argument("--codebook-size", type=int)
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a trained run and write a MetricReport")
    ev.add_argument("kind", choices=EVAL_KINDS + ("all",))
    ev.add_argument("--run", help="run directory (default: last trained)")
    ev.add_argument("--data", help="evaluation dataset (default: the one the last run was trained on)")
    ev.add_argument("--horizon", type=int, default=30, help="rollout steps; clipped to trajectory length - 2")
    ev.add_argument("--out", help="report path (default inside the run directory)")
    ev.set_defaults(func=cmd_eval)

    gc = sub.add_parser("gradcheck", help="finite-difference checks of every differentiable kernel")
    gc.add_argument("--instances", type=int, default=20, help="random instances per network kernel")
    gc.add_argument("--dyn-instances", type=int, default=5, help="instances per env and horizon")
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=cmd_gradcheck)

    rep = sub.add_parser("report", help="merge MetricReports into CSV plot data")
    rep.add_argument("reports", nargs="*", help="report JSON files (default: all under the run root)")
    rep.add_argument("--out", help="output directory (default <root>/report)")
    rep.set_defaults(func=cmd_report)
    return parser


def _category(exc: Exception) -> str:
    if isinstance(exc, CliError):
        return exc.category
    if isinstance(exc, TrainingDivergedError):
        return "diverged"
    if isinstance(exc, CheckpointError):
        return "checkpoint"
    if isinstance(exc, (DatasetError, KeyError)):
        return "data"
    if isinstance(exc, EvaluationError):
        return "evaluation"
    if isinstance(exc, (ConfigError, ValueError)):
        return "config"
    return "io"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, TrainingDivergedError, CheckpointError, DatasetError, EvaluationError, ConfigError,
            ValueError, KeyError, OSError) as exc:
        category = _category(exc)
        print(json.dumps({"category": category, "message": str(exc)}), file=sys.stderr)
        return EXIT_CODES[category]


if __name__ == "__main__":
    sys.exit(main())
