"""Latent parameterizations: vision autoencoders, physical heads, codebooks and losses."""

from .codebook import (Codebook, EmptyCodebookError, grid_counts, physical_grid, physical_readout,
                       quantize, straight_through)
from .losses import (COMMITMENT, interp_grad, interp_loss, interp_loss_from_samples, kl_grad, kl_loss,
                     recon_grad, recon_loss, vq_grads, vq_losses)
from .models import (LATENT_DIM, GaussianPosterior, IntrinsicModel, PhysicalAutoencoder, StageOrderError,
                     VisionAutoencoder, decode_physical, decode_vision, encode_physical, encode_vision)

__all__ = [
    "COMMITMENT", "Codebook", "EmptyCodebookError", "GaussianPosterior", "IntrinsicModel", "LATENT_DIM",
    "PhysicalAutoencoder", "StageOrderError", "VisionAutoencoder", "decode_physical", "decode_vision",
    "encode_physical", "encode_vision", "grid_counts", "interp_grad", "interp_loss",
    "interp_loss_from_samples", "kl_grad", "kl_loss", "physical_grid", "physical_readout", "quantize",
    "recon_grad", "recon_loss", "straight_through", "vq_grads", "vq_losses",
]
