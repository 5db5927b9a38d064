"""Pure loss and compositing math for the editing stages.

localization_loss rewards a single strong attention response inside the
editing mask and penalizes any response outside it; only the in-mask
maximum is rewarded, because pushing every in-mask value to 1 makes the
generator fill the whole box. The out-of-mask penalty is an unnormalized
sum of squares, exactly as the weight lambda expects; switching to a mean
would silently rescale it.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass
class LocalizationParams:
    lam: float = 0.1

    def __post_init__(self):
        if self.lam < 0:
            raise ValidationError("lambda must be non-negative")


@dataclass
class AttentionMap:
    """Normalized attention response of one keyword, values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValidationError("attention map must be 2D")
        if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise ValidationError("attention values must lie in [0, 1]")

    def resampled(self, shape):
        """Bilinear resample to (height, width)."""
        return AttentionMap(resample_bilinear(self.values, shape))


def resample_bilinear(values, shape):
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape
    out_h, out_w = shape
    if (h, w) == (out_h, out_w):
        return values.copy()
    # sample positions align the corner pixel centers of both grids
    ys = np.linspace(0.0, h - 1.0, out_h)
    xs = np.linspace(0.0, w - 1.0, out_w)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    v00 = values[np.ix_(y0, x0)]
    v01 = values[np.ix_(y0, x1)]
    v10 = values[np.ix_(y1, x0)]
    v11 = values[np.ix_(y1, x1)]
    return (v00 * (1 - fy) * (1 - fx) + v01 * (1 - fy) * fx
            + v10 * fy * (1 - fx) + v11 * fy * fx)


def localization_loss(attention, mask, params=None):
    """(1 - max of attention inside mask) + lambda * sum of squares outside."""
    params = params or LocalizationParams()
    a = attention.values if isinstance(attention, AttentionMap) else np.asarray(attention, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if a.shape != mask.shape:
        raise ValidationError(f"attention shape {a.shape} != mask shape {mask.shape}")
    if not mask.any():
        raise ValidationError("editing mask is empty")
    inside_max = float(a[mask].max())
    outside = a[~mask]
    return (1.0 - inside_max) + params.lam * float(np.sum(outside * outside))


def combine_sds(grad_global, grad_local, gamma):
    """gamma-weighted blend of the global and local pixel gradients."""
    grad_global = np.asarray(grad_global, dtype=np.float64)
    grad_local = np.asarray(grad_local, dtype=np.float64)
    if grad_global.shape != grad_local.shape:
        raise ValidationError("gradient shapes differ")
    if not 0.0 <= gamma <= 1.0:
        raise ValidationError(f"gamma must be in [0, 1], got {gamma}")
    return gamma * grad_global + (1.0 - gamma) * grad_local


def compose_pseudo_gt(denoised, background, mask):
    """Per-pixel select: mask-true pixels from `denoised`, else `background`."""
    denoised = np.asarray(denoised, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if denoised.shape != background.shape or mask.shape != denoised.shape[:2]:
        raise ValidationError("pseudo-GT component shapes differ")
    return np.where(mask[:, :, None], denoised, background)


def mse(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"mse shapes differ: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(d * d))
