"""Representation losses with their gradients.

All losses are per-sample sums over feature dims averaged over the batch.
Each ``*_grad`` companion returns gradients of that batch mean.
"""

from __future__ import annotations

import numpy as np

from ..weaksup import empirical_mean

COMMITMENT = 0.25
LOGVAR_CLAMP = 10.0


def _mean_sq(diff) -> float:
    diff = np.atleast_2d(diff)
    return float(np.mean(np.sum(diff.reshape(diff.shape[0], -1) ** 2, axis=1)))


def interp_loss(z_phys, proxy_mean) -> float:
    """Squared distance between the physical latent and the proxy-set mean."""
    return _mean_sq(np.asarray(z_phys, dtype=np.float64) - proxy_mean)


def interp_grad(z_phys, proxy_mean) -> np.ndarray:
    z_phys = np.atleast_2d(z_phys)
    return 2.0 * (z_phys - proxy_mean) / z_phys.shape[0]


def interp_loss_from_samples(z_phys, samples) -> float:
    """Same loss with the proxy mean taken from raw samples (..., L, D)."""
    return interp_loss(z_phys, empirical_mean(samples))


def recon_loss(pred, target) -> float:
    """Per-item summed squared error, batch mean."""
    return _mean_sq(np.asarray(pred) - target)


def recon_grad(pred, target) -> np.ndarray:
    return 2.0 * (pred - target) / pred.shape[0]


def kl_loss(mean, logvar) -> float:
    """KL from N(mean, exp(logvar)) to N(0, I), summed over dims, batch mean."""
    mean, logvar = np.atleast_2d(mean), np.atleast_2d(logvar)
    return float(np.mean(0.5 * np.sum(mean**2 + np.exp(logvar) - 1.0 - logvar, axis=1)))


def kl_grad(mean, logvar) -> tuple[np.ndarray, np.ndarray]:
    mean, logvar = np.atleast_2d(mean), np.atleast_2d(logvar)
    b = mean.shape[0]
    return mean / b, 0.5 * (np.exp(logvar) - 1.0) / b


def vq_losses(z_cont, z_q, beta: float = COMMITMENT) -> tuple[float, float]:
    """(codebook term, commitment term); values are equal up to the β factor."""
    d = _mean_sq(np.asarray(z_cont) - z_q)
    return d, beta * d


def vq_grads(z_cont, z_q, beta: float = COMMITMENT) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the codebook term w.r.t. the selected entries and of the
    commitment term w.r.t. the encoder output; stop-gradients route each
    term to one side only."""
    z_cont, z_q = np.atleast_2d(z_cont), np.atleast_2d(z_q)
    b = z_cont.shape[0]
    return 2.0 * (z_q - z_cont) / b, 2.0 * beta * (z_cont - z_q) / b
