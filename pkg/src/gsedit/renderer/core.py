"""Differentiable splatting renderer: forward, analytic backward, masks.

The forward pass composites depth-sorted splats front to back per pixel
and blends the leftover transmittance with the background color. The
backward pass is the exact adjoint of that compositing (restricted to the
rendered subset), chained through every activation: logistic opacity,
exponential scale, quaternion normalization and the SH color decode.

Per-splat pixel support is truncated at `truncate_sigma` standard
deviations of the screen covariance, and compositing stops once the
transmittance falls below STOP_TRANSMITTANCE. Pass truncate_sigma=None
for exact untruncated evaluation (used by gradient checks).
"""

from dataclasses import dataclass

import numpy as np

from . import backend
from .projection import backprop_to_attributes, prepare_splats

STOP_TRANSMITTANCE = 1e-4


@dataclass
class RenderOutput:
    rgb: np.ndarray          # (h, w, 3) in [0, 1]
    alpha: np.ndarray        # (h, w) accumulated opacity
    depth_order: np.ndarray  # scene indices of rendered splats, front to back


@dataclass
class AttributeGradients:
    """Dense per-attribute gradients aligned with scene indices."""

    position: np.ndarray
    opacity_logit: np.ndarray
    scale_log: np.ndarray
    rotation: np.ndarray
    sh_coeffs: np.ndarray

    def __add__(self, other):
        return AttributeGradients(
            self.position + other.position,
            self.opacity_logit + other.opacity_logit,
            self.scale_log + other.scale_log,
            self.rotation + other.rotation,
            self.sh_coeffs + other.sh_coeffs,
        )

    def scaled(self, factor):
        return AttributeGradients(
            self.position * factor,
            self.opacity_logit * factor,
            self.scale_log * factor,
            self.rotation * factor,
            self.sh_coeffs * factor,
        )

    @classmethod
    def zeros(cls, scene):
        n = len(scene)
        return cls(
            np.zeros((n, 3)), np.zeros(n), np.zeros((n, 3)),
            np.zeros((n, 4)), np.zeros((n, scene.num_sh_coeffs, 3)),
        )


def _maha_max(truncate_sigma):
    if truncate_sigma is None or not np.isfinite(truncate_sigma):
        return np.inf
    return float(truncate_sigma) ** 2


def render(scene, pose, K, subset=None, background=(0.0, 0.0, 0.0), truncate_sigma=3.0):
    """Render a scene (or an index subset of it) from one camera."""
    batch = prepare_splats(scene, subset, pose, K, truncate_sigma)
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    kern = backend.get_kernels()
    rgb, alpha = kern.composite_forward(
        batch.mean2d, batch.conic, batch.alpha, batch.color, batch.bbox,
        K.height, K.width, bg, _maha_max(truncate_sigma), STOP_TRANSMITTANCE,
    )
    return RenderOutput(rgb=rgb, alpha=alpha, depth_order=batch.global_idx.copy())


def render_backward(scene, pose, K, grad_rgb, subset=None, background=(0.0, 0.0, 0.0),
                    truncate_sigma=3.0):
    """Gradients of sum(grad_rgb * rgb) with respect to scene attributes.

    Exact adjoint of `render` for the same arguments; Gaussians outside
    `subset` (or culled by the near plane) receive exactly zero.
    """
    batch = prepare_splats(scene, subset, pose, K, truncate_sigma)
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    grad_rgb = np.ascontiguousarray(grad_rgb, dtype=np.float64)
    if grad_rgb.shape != (K.height, K.width, 3):
        raise ValueError(f"grad_rgb shape {grad_rgb.shape} does not match image")
    kern = backend.get_kernels()
    g_mean2d, g_conic, g_alpha, g_color = kern.composite_backward(
        batch.mean2d, batch.conic, batch.alpha, batch.color, batch.bbox,
        K.height, K.width, bg, _maha_max(truncate_sigma), STOP_TRANSMITTANCE, grad_rgb,
    )
    g_pos, g_logit, g_scale, g_rot, g_sh = backprop_to_attributes(
        batch, scene, pose, K, g_mean2d, g_conic, g_alpha, g_color,
    )
    return AttributeGradients(g_pos, g_logit, g_scale, g_rot, g_sh)


def render_instance_mask(scene, pose, K, subset, threshold=0.5, truncate_sigma=3.0):
    """Binary mask where the subset-only render exceeds `threshold` opacity."""
    out = render(scene, pose, K, subset=subset, truncate_sigma=truncate_sigma)
    return out.alpha > threshold
