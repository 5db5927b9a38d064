"""Noise schedule, sampling helpers and the SDS weighting.

Continuous t in (0, 1) indexes a 1000-step linear-beta alpha-bar table.
w(t) = 1 - alpha_bar(t), the usual epsilon-space weighting.
"""

import numpy as np
import torch

N_STEPS = 1000
_BETAS = np.linspace(1e-4, 0.02, N_STEPS)
# leading 1.0 so that alpha_bar(0) == 1 exactly: zero noise at t = 0
_ALPHA_BAR = np.concatenate([[1.0], np.cumprod(1.0 - _BETAS)])


def alpha_bar(t):
    idx = int(np.clip(round(float(t) * N_STEPS), 0, N_STEPS))
    return float(_ALPHA_BAR[idx])


def sds_weight(t):
    return 1.0 - alpha_bar(t)


def q_sample(z0, t, eps):
    ab = alpha_bar(t)
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def predict_z0(z_t, t, eps_hat):
    ab = alpha_bar(t)
    return (z_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)


@torch.no_grad()
def ddim_denoise(model, z_t, t_start, pose_vec, token_ids, steps=8):
    """Deterministic DDIM from t_start down to 0."""
    ts = np.linspace(t_start, 0.0, steps + 1)
    z = z_t
    for i in range(steps):
        t_cur, t_next = float(ts[i]), float(ts[i + 1])
        eps_hat = model(z.unsqueeze(0), t_cur, pose_vec, token_ids)[0]
        z0 = predict_z0(z, t_cur, eps_hat)
        if t_next <= 0.0:
            z = z0
        else:
            ab = alpha_bar(t_next)
            z = np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps_hat
    return z


@torch.no_grad()
def sample_image(model, codec, token_ids, shape, pose_vec, generator, steps=10):
    """Generate an image from pure noise (used for prior preservation)."""
    h, w = shape
    lat_shape = (12, (h + 1) // 2, (w + 1) // 2)
    z = torch.randn(lat_shape, generator=generator)
    z = ddim_denoise(model, z, 0.98, pose_vec, token_ids, steps=steps)
    img = codec.decode(z, size=shape)
    return torch.clamp(img, 0.0, 1.0)
