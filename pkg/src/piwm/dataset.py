"""Trajectory datasets: generation, the binary file format, and batching.

File layout (little-endian throughout)::

    header   struct '<8sH16sIIHHIHHHdQQdd32s'
             magic b"PIWMDATA", format version, env name (NUL padded),
             N, M, H, W, L, D (supervised dims), S (state dims), A (action dims),
             delta, seed, supervision seed, random_fraction, epsilon,
             sha256 of the payload
    payload  N record blocks, each
             pixels   uint8   (M, H, W)   intensity * 255
             actions  float64 (M, A)      actions[t] drives x_t -> x_{t+1}
             proxies  float64 (M, L, D)
             centers  float64 (M, D)      shifted interval centres
             states   float64 (M, S)      hidden, evaluation only

A JSON copy of the header fields sits next to the file as ``<path>.json``.
"""

from __future__ import annotations

import contextlib
import contextvars
import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from . import envsim
from .envsim import EnvSpec
from .weaksup import SupervisionConfig, empirical_mean, half_widths, sample_supervision_batch

MAGIC = b"PIWMDATA"
FORMAT_VERSION = 1
HEADER = struct.Struct("<8sH16sIIHHIHHHdQQdd32s")

DEFAULT_N = 2000
DEFAULT_M = 50


class DatasetError(Exception):
    """Base class for dataset file problems."""


class DatasetChecksumError(DatasetError):
    pass


class DatasetVersionError(DatasetError):
    pass


class DatasetTruncatedError(DatasetError):
    pass


class HiddenStateAccessError(RuntimeError):
    """Hidden ground-truth states were read outside an evaluation scope."""


_hidden_access = contextvars.ContextVar("piwm_hidden_access", default=False)


@contextlib.contextmanager
def hidden_state_access():
    """Grant read access to hidden states for the duration of the block."""
    token = _hidden_access.set(True)
    try:
        yield
    finally:
        _hidden_access.reset(token)


def _check_access():
    if not _hidden_access.get():
        raise HiddenStateAccessError(
            "hidden states are evaluation-only; wrap the access in hidden_state_access()"
        )


@dataclass(frozen=True)
class TrajectoryRecord:
    pixels: np.ndarray  # (M, H, W) uint8
    actions: np.ndarray  # (M, A)
    proxies: np.ndarray  # (M, L, D)
    centers: np.ndarray  # (M, D)
    _states: np.ndarray  # (M, S)

    @property
    def length(self) -> int:
        return self.pixels.shape[0]

    @property
    def observations(self) -> np.ndarray:
        return self.pixels / 255.0

    @property
    def proxy_means(self) -> np.ndarray:
        return empirical_mean(self.proxies)

    @property
    def states(self) -> np.ndarray:
        _check_access()
        return self._states

    def equals(self, other: "TrajectoryRecord") -> bool:
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("pixels", "actions", "proxies", "centers", "_states")
        )


class Dataset:
    """Stacked trajectories plus their manifest.

    Arrays are stored with a leading trajectory axis so batching is a
    fancy-index away; ``record(i)`` gives a per-trajectory view.
    """

    def __init__(self, manifest: dict, pixels, actions, proxies, centers, states):
        self.manifest = manifest
        self.pixels = pixels
        self.actions = actions
        self.proxies = proxies
        self.centers = centers
        self._states = states
        self._proxy_means = None

    @property
    def spec(self) -> EnvSpec:
        return envsim.get_spec(self.manifest["env"])

    @property
    def n_records(self) -> int:
        return self.pixels.shape[0]

    @property
    def length(self) -> int:
        return self.pixels.shape[1]

    def __len__(self) -> int:
        return self.n_records

    @property
    def proxy_means(self) -> np.ndarray:
        if self._proxy_means is None:
            self._proxy_means = empirical_mean(self.proxies)
        return self._proxy_means

    @property
    def half_width(self) -> np.ndarray:
        return half_widths(self.spec, self.manifest["delta"])

    @property
    def states(self) -> np.ndarray:
        _check_access()
        return self._states

    def record(self, i: int) -> TrajectoryRecord:
        return TrajectoryRecord(self.pixels[i], self.actions[i], self.proxies[i],
                                self.centers[i], self._states[i])

    def records(self) -> list[TrajectoryRecord]:
        return [self.record(i) for i in range(self.n_records)]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        manifest = {k: v for k, v in self.manifest.items() if k != "checksum"}
        manifest["n"] = len(idx)
        return Dataset(manifest, self.pixels[idx], self.actions[idx], self.proxies[idx],
                       self.centers[idx], self._states[idx])

    def observations(self, rec_idx, t_idx) -> np.ndarray:
        return self.pixels[rec_idx, t_idx] / 255.0

    def checksum(self) -> str:
        return hashlib.sha256(_payload(self)).hexdigest()


def _trajectory_rng(seed: int, index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, index, stream])


def generate_dataset(spec: EnvSpec, n: int = DEFAULT_N, m: int = DEFAULT_M,
                     cfg: SupervisionConfig | None = None, policy: str = "mixed",
                     seed: int = 0, random_fraction: float = 0.0,
                     epsilon: float = envsim.EPSILON) -> Dataset:
    """Simulate ``n`` trajectories of length ``m`` with proxy labels.

    Trajectory ``i`` uses simulation stream ``(seed, i)`` and supervision
    stream ``(cfg.seed, i)``, so two datasets that differ only in ``delta``
    share images, actions and hidden states.
    """
    cfg = cfg or SupervisionConfig()
    if n < 1 or m < 3:
        raise ValueError("need n >= 1 trajectories of length m >= 3")
    if policy not in envsim.POLICY_MODES:
        raise ValueError(f"unknown policy {policy!r}")
    if not 0.0 <= random_fraction <= 1.0:
        raise ValueError("random_fraction must lie in [0, 1]")
    h, w = spec.image_shape
    pixels = np.empty((n, m, h, w), dtype=np.uint8)
    actions = np.empty((n, m, spec.actions.dim))
    proxies = np.empty((n, m, cfg.samples_per_step, spec.n_supervised))
    centers = np.empty((n, m, spec.n_supervised))
    states = np.empty((n, m, spec.state_dim))
    for i in range(n):
        sim_rng = _trajectory_rng(seed, i, 0)
        mode = "random" if sim_rng.random() < random_fraction else policy
        x0 = envsim.sample_initial_state(spec, sim_rng)
        traj = envsim.rollout(x0, spec, mode, m, sim_rng, epsilon=epsilon)
        pixels[i] = np.rint(traj.observations * 255.0).astype(np.uint8)
        actions[i] = traj.actions
        states[i] = traj.states
        proxies[i], centers[i] = sample_supervision_batch(
            traj.states, spec, cfg, _trajectory_rng(cfg.seed, i, 1))
    manifest = {
        "format_version": FORMAT_VERSION, "env": spec.name, "n": n, "m": m,
        "height": h, "width": w, "samples_per_step": cfg.samples_per_step,
        "n_supervised": spec.n_supervised, "state_dim": spec.state_dim,
        "action_dim": spec.actions.dim, "delta": float(cfg.delta), "seed": int(seed),
        "supervision_seed": int(cfg.seed), "policy": policy,
        "random_fraction": float(random_fraction), "epsilon": float(epsilon),
    }
    data = Dataset(manifest, pixels, actions, proxies, centers, states)
    data.manifest["checksum"] = data.checksum()
    return data


def _payload(data: Dataset) -> bytes:
    parts = []
    for i in range(data.n_records):
        parts.append(np.ascontiguousarray(data.pixels[i], dtype="u1").tobytes())
        for arr in (data.actions[i], data.proxies[i], data.centers[i], data._states[i]):
            parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def _record_nbytes(mf: dict) -> int:
    m = mf["m"]
    floats = m * (mf["action_dim"] + mf["samples_per_step"] * mf["n_supervised"]
                  + mf["n_supervised"] + mf["state_dim"])
    return m * mf["height"] * mf["width"] + 8 * floats


def save_dataset(data: Dataset, path) -> Path:
    path = Path(path)
    mf = data.manifest
    payload = _payload(data)
    digest = hashlib.sha256(payload).digest()
    header = HEADER.pack(
        MAGIC, FORMAT_VERSION, mf["env"].encode("ascii").ljust(16, b"\0"),
        data.n_records, mf["m"], mf["height"], mf["width"],
        mf["samples_per_step"], mf["n_supervised"], mf["state_dim"], mf["action_dim"],
        mf["delta"], mf["seed"], mf["supervision_seed"], mf["random_fraction"], mf["epsilon"],
        digest,
    )
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(header + payload)
    except OSError as exc:
        raise DatasetError(f"cannot write dataset to {path}: {exc}") from exc
    sidecar = dict(mf, n=data.n_records, checksum=digest.hex())
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return path


def _parse_header(raw: bytes, path) -> dict:
    if len(raw) < HEADER.size:
        raise DatasetTruncatedError(f"{path}: file shorter than the {HEADER.size}-byte header")
    (magic, version, env, n, m, h, w, ell, d, s, a, delta, seed, sup_seed, rnd_frac, eps,
     digest) = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DatasetError(f"{path}: not a dataset file (bad magic {magic!r})")
    if version != FORMAT_VERSION:
        raise DatasetVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    return {
        "format_version": version, "env": env.rstrip(b"\0").decode("ascii"), "n": n, "m": m,
        "height": h, "width": w, "samples_per_step": ell, "n_supervised": d,
        "state_dim": s, "action_dim": a, "delta": delta, "seed": seed,
        "supervision_seed": sup_seed, "random_fraction": rnd_frac, "epsilon": eps, "checksum": digest.hex(),
    }


def read_manifest(path) -> dict:
    """Header fields only; the payload is not read."""
    with open(path, "rb") as fh:
        return _parse_header(fh.read(HEADER.size), path)


def load_dataset(path) -> Dataset:
    path = Path(path)
    raw = path.read_bytes()
    mf = _parse_header(raw, path)
    payload = memoryview(raw)[HEADER.size:]
    expected = mf["n"] * _record_nbytes(mf)
    if len(payload) < expected:
        raise DatasetTruncatedError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    if len(payload) > expected:
        raise DatasetError(f"{path}: {len(payload) - expected} trailing bytes after the payload")
    if hashlib.sha256(payload).hexdigest() != mf["checksum"]:
        raise DatasetChecksumError(f"{path}: payload checksum mismatch")
    sidecar = Path(str(path) + ".json")
    if sidecar.exists():
        extra = json.loads(sidecar.read_text())
        if "policy" in extra:
            mf["policy"] = extra["policy"]

    n, m, h, w = mf["n"], mf["m"], mf["height"], mf["width"]
    ell, d, s, a = mf["samples_per_step"], mf["n_supervised"], mf["state_dim"], mf["action_dim"]
    pixels = np.empty((n, m, h, w), dtype=np.uint8)
    actions = np.empty((n, m, a))
    proxies = np.empty((n, m, ell, d))
    centers = np.empty((n, m, d))
    states = np.empty((n, m, s))
    off = 0
    for i in range(n):
        for dst, dtype in ((pixels, "u1"), (actions, "<f8"), (proxies, "<f8"),
                           (centers, "<f8"), (states, "<f8")):
            count = dst[i].size
            size = count * np.dtype(dtype).itemsize
            dst[i] = np.frombuffer(payload[off:off + size], dtype=dtype).reshape(dst[i].shape)
            off += size
    return Dataset(mf, pixels, actions, proxies, centers, states)


def split_dataset(data: Dataset, val_fraction: float = 0.1, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded split by trajectory; at least one validation trajectory when n >= 2."""
    n = data.n_records
    perm = np.random.default_rng([seed, 7]).permutation(n)
    n_val = min(max(int(round(val_fraction * n)), 1 if n >= 2 else 0), n - 1)
    return data.subset(np.sort(perm[n_val:])), data.subset(np.sort(perm[:n_val]))


@dataclass(frozen=True)
class Batch:
    """Windows of ``window`` consecutive steps starting at ``t``."""

    record: np.ndarray  # (B,)
    t: np.ndarray  # (B,)
    images: np.ndarray  # (B, window, H, W)
    actions: np.ndarray  # (B, window, A)
    proxies: np.ndarray  # (B, window, L, D)

    @property
    def size(self) -> int:
        return self.record.shape[0]

    @property
    def transition_action(self) -> np.ndarray:
        """a_{t+1}: the action that moves step t+1 to t+2."""
        return self.actions[:, 1]

    @property
    def proxy_means(self) -> np.ndarray:
        return empirical_mean(self.proxies)


def window_index(n_records: int, length: int, window: int) -> tuple[np.ndarray, np.ndarray]:
    starts = length - window + 1
    if starts < 1:
        raise ValueError(f"window {window} longer than trajectories of length {length}")
    rec, t = np.meshgrid(np.arange(n_records), np.arange(starts), indexing="ij")
    return rec.ravel(), t.ravel()


def make_batches(data: Dataset, batch_size: int, seed: int, window: int = 3) -> Iterator[Batch]:
    """Seeded shuffle over every valid window; the final partial batch is kept."""
    if data.n_records < 1:
        raise ValueError("cannot batch an empty dataset")
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    rec, t = window_index(data.n_records, data.length, window)
    order = np.random.default_rng([seed, 11]).permutation(rec.size)
    steps = np.arange(window)
    for lo in range(0, order.size, batch_size):
        sel = order[lo:lo + batch_size]
        r, t0 = rec[sel], t[sel]
        tt = t0[:, None] + steps
        rr = r[:, None]
        yield Batch(r, t0, data.pixels[rr, tt] / 255.0, data.actions[rr, tt], data.proxies[rr, tt])
