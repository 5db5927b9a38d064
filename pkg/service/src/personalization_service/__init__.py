"""Guidance service: stepwise 2D personalization over a latent denoiser."""

__version__ = "0.1.0"
