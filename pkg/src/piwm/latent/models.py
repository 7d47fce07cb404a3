"""Encoders, decoders and the four latent parameterizations.

Every model exposes ``loss_and_backward`` (accumulates gradients into its
trainable parameters and returns loss components) and ``physical`` (the
deterministic physical readout used downstream by dynamics and evaluation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..envsim import EnvSpec
from ..nncore import (Conv2d, ConvTranspose2d, Dense, Param, ReLU, Reshape, Sequential,
                      ShapeError, Sigmoid, mlp)
from . import losses as L
from .codebook import Codebook, quantize

LATENT_DIM = 64
HIDDEN = 128


class StageOrderError(RuntimeError):
    """A later stage was used before the stage it depends on was frozen."""


def vision_encoder(rng, image_shape, out_dim: int) -> Sequential:
    h, w = image_shape
    if h % 4 or w % 4:
        raise ShapeError("image sides must be multiples of 4")
    return Sequential(
        Reshape(1, h, w),
        Conv2d(1, 8, rng), ReLU(),
        Conv2d(8, 16, rng), ReLU(),
        Reshape(-1),
        Dense(16 * (h // 4) * (w // 4), out_dim, rng, gain=1.0),
    )


def vision_decoder(rng, image_shape, in_dim: int) -> Sequential:
    h, w = image_shape
    return Sequential(
        Dense(in_dim, 16 * (h // 4) * (w // 4), rng), ReLU(),
        Reshape(16, h // 4, w // 4),
        ConvTranspose2d(16, 8, rng), ReLU(),
        ConvTranspose2d(8, 1, rng), Sigmoid(),
        Reshape(h, w),
    )


@dataclass(frozen=True)
class GaussianPosterior:
    mean: np.ndarray
    logvar: np.ndarray

    def sample(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Reparameterized draw; returns (sample, noise)."""
        eps = rng.standard_normal(self.mean.shape)
        return self.mean + np.exp(0.5 * self.logvar) * eps, eps


def _split_posterior(h, n_mean):
    mean, raw = h[:, :n_mean], h[:, n_mean:]
    logvar = np.clip(raw, -L.LOGVAR_CLAMP, L.LOGVAR_CLAMP)
    inside = (raw > -L.LOGVAR_CLAMP) & (raw < L.LOGVAR_CLAMP)
    return GaussianPosterior(mean, logvar), inside


def _check_images(images, shape):
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 2:
        images = images[None]
    if images.shape[1:] != tuple(shape):
        raise ShapeError(f"expected images of shape (B, {shape[0]}, {shape[1]}), got {images.shape}")
    return images


class _Base:
    def named_params(self) -> dict[str, Param]:
        raise NotImplementedError

    def params(self) -> list[Param]:
        return list(self.named_params().values())

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()


def _prefixed(prefix: str, module) -> dict[str, Param]:
    return {f"{prefix}.{k}": v for k, v in module.named_params().items()}


class VisionAutoencoder(_Base):
    """Stage-one autoencoder of the extrinsic variants (continuous VAE or VQ)."""

    def __init__(self, kind: str, image_shape, rng: np.random.Generator, latent_dim: int = LATENT_DIM,
                 codebook_size: int = 512, beta_kl: float = 1.0, commitment: float = L.COMMITMENT):
        if kind not in ("continuous", "discrete"):
            raise ValueError(f"latent kind must be continuous or discrete, got {kind!r}")
        self.kind, self.image_shape, self.latent_dim = kind, tuple(image_shape), latent_dim
        self.beta_kl, self.commitment = beta_kl, commitment
        out = 2 * latent_dim if kind == "continuous" else latent_dim
        self.encoder = vision_encoder(rng, self.image_shape, out)
        self.decoder = vision_decoder(rng, self.image_shape, latent_dim)
        self.codebook = Codebook.plain(latent_dim, rng, codebook_size) if kind == "discrete" else None
        self.codebook_initialized = False

    def named_params(self):
        out = {**_prefixed("vision.encoder", self.encoder), **_prefixed("vision.decoder", self.decoder)}
        if self.codebook is not None:
            out.update({f"vision.{k}": v for k, v in self.codebook.named_params().items()})
        return out

    def freeze(self):
        self.encoder.freeze()
        self.decoder.freeze()
        if self.codebook is not None:
            self.codebook.freeze()

    @property
    def frozen(self) -> bool:
        return self.encoder.frozen

    def encode(self, images):
        """Posterior (continuous) or pre-quantization vector (discrete)."""
        h = self.encoder.forward(_check_images(images, self.image_shape))
        if self.kind == "continuous":
            return _split_posterior(h, self.latent_dim)[0]
        return h

    def latent(self, images) -> np.ndarray:
        """Deterministic latent handed to the physical stage: posterior mean or quantized entry."""
        enc = self.encode(images)
        if self.kind == "continuous":
            return enc.mean
        return quantize(enc, self.codebook)[1]

    def decode(self, z) -> np.ndarray:
        return self.decoder.forward(np.atleast_2d(z))

    def init_codebook(self, images, rng: np.random.Generator):
        """Seed codebook entries with encoder outputs of random frames."""
        z = self.encode(images)
        pick = rng.choice(len(z), size=self.codebook.size, replace=len(z) < self.codebook.size)
        self.codebook.visual.value[...] = z[pick] + rng.normal(0.0, 1e-3, (self.codebook.size, self.latent_dim))
        self.codebook_initialized = True

    def restart_dead_codes(self, usage: np.ndarray, recent_z: np.ndarray, rng: np.random.Generator) -> int:
        """Move never-selected entries onto random recent encoder outputs."""
        dead = np.flatnonzero(usage == 0)
        if dead.size and len(recent_z):
            pick = rng.choice(len(recent_z), size=dead.size)
            self.codebook.visual.value[dead] = recent_z[pick] + rng.normal(0.0, 1e-3, (dead.size, self.latent_dim))
        return int(dead.size)

    def loss_and_backward(self, images, rng: np.random.Generator, reg_weight: float = 1.0,
                          backward: bool = True) -> dict:
        images = _check_images(images, self.image_shape)
        h = self.encoder.forward(images)
        if self.kind == "continuous":
            post, inside = _split_posterior(h, self.latent_dim)
            z, eps = post.sample(rng)
            recon = self.decoder.forward(z)
            out = {"recon": L.recon_loss(recon, images), "kl": reg_weight * self.beta_kl * L.kl_loss(post.mean, post.logvar)}
            if backward:
                gz = self.decoder.backward(L.recon_grad(recon, images))
                gm, gl = L.kl_grad(post.mean, post.logvar)
                w = reg_weight * self.beta_kl
                d_mean = gz + w * gm
                d_logvar = (gz * eps * 0.5 * np.exp(0.5 * post.logvar) + w * gl) * inside
                self.encoder.backward(np.concatenate([d_mean, d_logvar], axis=1))
            out["usage"] = None
            return out
        index, zq = quantize(h, self.codebook)
        recon = self.decoder.forward(zq)
        cb, commit = L.vq_losses(h, zq, self.commitment)
        out = {"recon": L.recon_loss(recon, images), "codebook": reg_weight * cb, "commitment": reg_weight * commit}
        if backward:
            g_zq = self.decoder.backward(L.recon_grad(recon, images))
            g_entries, g_commit = L.vq_grads(h, zq, self.commitment)
            self.codebook.accumulate(index, reg_weight * g_entries)
            self.encoder.backward(g_zq + reg_weight * g_commit)
        out["usage"] = index
        out["z_cont"] = h
        return out


class _PhysScale:
    """Fixed affine map from unit-scale network outputs to state units."""

    def __init__(self, spec: EnvSpec):
        self.center = 0.5 * (spec.supervised_low + spec.supervised_high)
        self.half = 0.5 * spec.supervised_widths

    def to_state(self, raw):
        return self.center + self.half * raw

    def grad_raw(self, grad_state):
        return grad_state * self.half


class PhysicalAutoencoder(_Base):
    """Stage-two physical encoder/decoder of the extrinsic variants."""

    def __init__(self, vision: VisionAutoencoder, spec: EnvSpec, rng: np.random.Generator, hidden: int = HIDDEN):
        self.vision, self.spec = vision, spec
        d, dz = spec.n_supervised, vision.latent_dim
        self.scale = _PhysScale(spec)
        self.encoder = mlp([dz, hidden, hidden, d], rng)
        self.decoder = mlp([d, hidden, hidden, dz], rng)
        # fixed standardization of the frozen vision latents, set once by fit_normalizer
        self.z_mean = Param(np.zeros(dz), "z_mean")
        self.z_std = Param(np.ones(dz), "z_std")
        self.z_mean.trainable = self.z_std.trainable = False

    def named_params(self):
        return {**_prefixed("physical.encoder", self.encoder), **_prefixed("physical.decoder", self.decoder),
                "physical.z_mean": self.z_mean, "physical.z_std": self.z_std}

    def fit_normalizer(self, z):
        z = np.atleast_2d(z)
        self.z_mean.value[...] = z.mean(axis=0)
        self.z_std.value[...] = np.maximum(z.std(axis=0), 1e-6)

    def freeze(self):
        self.encoder.freeze()
        self.decoder.freeze()
        self.z_mean.freeze()
        self.z_std.freeze()

    def _standardize(self, z):
        return (np.atleast_2d(z) - self.z_mean.value) / self.z_std.value

    @property
    def frozen(self) -> bool:
        return self.encoder.frozen

    def _require_vision(self):
        if not self.vision.frozen:
            raise StageOrderError("the vision autoencoder must be trained and frozen before the physical stage")

    def encode(self, z) -> np.ndarray:
        self._require_vision()
        return self.scale.to_state(self.encoder.forward(self._standardize(z)))

    def decode(self, z_phys) -> np.ndarray:
        return self.z_mean.value + self.z_std.value * self.decoder.forward(self._unit(z_phys))

    def _unit(self, z_phys):
        return (np.atleast_2d(z_phys) - self.scale.center) / self.scale.half

    def physical(self, images) -> np.ndarray:
        return self.encode(self.vision.latent(images))

    def loss_and_backward(self, z, proxy_mean, lambda_interp: float = 1.0, lambda_latent: float = 0.5,
                          backward: bool = True) -> dict:
        """Interp regression plus latent reconstruction on frozen vision latents."""
        self._require_vision()
        z = np.atleast_2d(z)
        z_phys = self.scale.to_state(self.encoder.forward(self._standardize(z)))
        z_hat = self.z_mean.value + self.z_std.value * self.decoder.forward(self._unit(z_phys))
        out = {"interp": lambda_interp * L.interp_loss(z_phys, proxy_mean),
               "latent_recon": lambda_latent * L.recon_loss(z_hat, z)}
        if backward:
            g_unit = self.decoder.backward(lambda_latent * L.recon_grad(z_hat, z) * self.z_std.value)
            g_state = lambda_interp * L.interp_grad(z_phys, proxy_mean) + g_unit / self.scale.half
            self.encoder.backward(self.scale.grad_raw(g_state))
        return out


class IntrinsicModel(_Base):
    """Single-stage encoder whose latent's first D dims are the physical state.

    Continuous: the physical slice is the posterior mean (deterministic);
    only the visual slice is sampled and KL-regularized.
    Discrete: quantization against a codebook whose physical parts are a
    frozen grid over the supervised ranges.
    """

    def __init__(self, kind: str, spec: EnvSpec, rng: np.random.Generator, latent_dim: int = LATENT_DIM,
                 codebook_size: int = 512, beta_kl: float = 1.0, commitment: float = L.COMMITMENT):
        if kind not in ("continuous", "discrete"):
            raise ValueError(f"latent kind must be continuous or discrete, got {kind!r}")
        self.kind, self.spec, self.latent_dim = kind, spec, latent_dim
        self.image_shape = tuple(spec.image_shape)
        self.n_phys = spec.n_supervised
        self.beta_kl, self.commitment = beta_kl, commitment
        self.scale = _PhysScale(spec)
        n_visual = latent_dim - self.n_phys
        out = latent_dim + n_visual if kind == "continuous" else latent_dim
        self.encoder = vision_encoder(rng, self.image_shape, out)
        self.decoder = vision_decoder(rng, self.image_shape, latent_dim)
        self.codebook = None
        if kind == "discrete":
            self.codebook = Codebook.partitioned(spec.supervised_low, spec.supervised_high, latent_dim, rng, codebook_size)

    def named_params(self):
        out = {**_prefixed("intrinsic.encoder", self.encoder), **_prefixed("intrinsic.decoder", self.decoder)}
        if self.codebook is not None:
            out.update({f"intrinsic.{k}": v for k, v in self.codebook.named_params().items()})
        return out

    def freeze(self):
        self.encoder.freeze()
        self.decoder.freeze()
        if self.codebook is not None:
            self.codebook.freeze()

    @property
    def frozen(self) -> bool:
        return self.encoder.frozen

    def _encode_raw(self, images):
        h = self.encoder.forward(_check_images(images, self.image_shape))
        head = np.concatenate([self.scale.to_state(h[:, :self.n_phys]), h[:, self.n_phys:]], axis=1)
        return h, head

    def encode(self, images):
        _, head = self._encode_raw(images)
        if self.kind == "continuous":
            return _split_posterior(head, self.latent_dim)[0]
        return head

    def physical(self, images) -> np.ndarray:
        enc = self.encode(images)
        if self.kind == "continuous":
            return enc.mean[:, :self.n_phys]
        index, _ = quantize(enc, self.codebook)
        return self.codebook.physical.value[index]

    def decode(self, z) -> np.ndarray:
        return self.decoder.forward(np.atleast_2d(z))

    def _head_backward(self, g_head):
        g = g_head.copy()
        g[:, :self.n_phys] = self.scale.grad_raw(g[:, :self.n_phys])
        self.encoder.backward(g)

    def loss_and_backward(self, images, proxy_mean, rng: np.random.Generator, lambda_interp: float = 1.0,
                          reg_weight: float = 1.0, backward: bool = True) -> dict:
        images = _check_images(images, self.image_shape)
        _, head = self._encode_raw(images)
        d = self.n_phys
        if self.kind == "continuous":
            post, inside = _split_posterior(head, self.latent_dim)
            vis_mean, vis_logvar = post.mean[:, d:], post.logvar
            eps = rng.standard_normal(vis_mean.shape)
            sigma = np.exp(0.5 * vis_logvar)
            z = np.concatenate([post.mean[:, :d], vis_mean + sigma * eps], axis=1)
            recon = self.decoder.forward(z)
            w = reg_weight * self.beta_kl
            out = {"recon": L.recon_loss(recon, images),
                   "interp": lambda_interp * L.interp_loss(post.mean[:, :d], proxy_mean),
                   "kl": w * L.kl_loss(vis_mean, vis_logvar)}
            if backward:
                gz = self.decoder.backward(L.recon_grad(recon, images))
                gm, gl = L.kl_grad(vis_mean, vis_logvar)
                d_phys = gz[:, :d] + lambda_interp * L.interp_grad(post.mean[:, :d], proxy_mean)
                d_vis = gz[:, d:] + w * gm
                d_logvar = (gz[:, d:] * eps * 0.5 * sigma + w * gl) * inside
                self._head_backward(np.concatenate([d_phys, d_vis, d_logvar], axis=1))
            out["usage"] = None
            return out
        index, zq = quantize(head, self.codebook)
        recon = self.decoder.forward(zq)
        z_phys = zq[:, :d]
        cb, commit = L.vq_losses(head, zq, self.commitment)
        out = {"recon": L.recon_loss(recon, images),
               "interp": lambda_interp * L.interp_loss(z_phys, proxy_mean),
               "codebook": reg_weight * cb, "commitment": reg_weight * commit}
        if backward:
            g_zq = self.decoder.backward(L.recon_grad(recon, images))
            g_zq[:, :d] += lambda_interp * L.interp_grad(z_phys, proxy_mean)
            g_entries, g_commit = L.vq_grads(head, zq, self.commitment)
            self.codebook.accumulate(index, reg_weight * g_entries)
            self._head_backward(g_zq + reg_weight * g_commit)
        out["usage"] = index
        return out


def encode_vision(model, images):
    """Posterior or pre-quantization latent for a batch of observations."""
    return model.encode(images)


def decode_vision(model, z) -> np.ndarray:
    return model.decode(z)


def encode_physical(model: PhysicalAutoencoder, z) -> np.ndarray:
    return model.encode(z)


def decode_physical(model: PhysicalAutoencoder, z_phys) -> np.ndarray:
    return model.decode(z_phys)
