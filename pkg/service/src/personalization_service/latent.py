"""Invertible image <-> latent codec.

A 2x2 space-to-depth followed by a fixed orthogonal channel mix. Both maps
are orthogonal, so decoding is exact up to float rounding and the adjoint
of `encode` equals `decode`, which makes the latent-to-pixel gradient
transport of the score responses a plain decode call.
"""

import numpy as np
import torch

LATENT_CHANNELS = 12


def _mix_matrix():
    rng = np.random.default_rng(73)
    q, _ = np.linalg.qr(rng.normal(size=(LATENT_CHANNELS, LATENT_CHANNELS)))
    return torch.tensor(q, dtype=torch.float32)


class LatentCodec:
    """Stateless; odd image sizes are edge-padded and cropped on decode."""

    def __init__(self):
        self.mix = _mix_matrix()

    def encode(self, image):
        """(h, w, 3) image in [0, 1] -> latent (12, ceil(h/2), ceil(w/2))."""
        x = torch.as_tensor(image, dtype=torch.float32).permute(2, 0, 1).unsqueeze(0)
        ph, pw = x.shape[-2] % 2, x.shape[-1] % 2
        if ph or pw:
            x = torch.nn.functional.pad(x, (0, pw, 0, ph), mode="replicate")
        z = torch.nn.functional.pixel_unshuffle(x, 2)  # (1, 12, h/2, w/2)
        z = torch.einsum("bchw,cd->bdhw", z, self.mix)
        return z[0]

    def decode(self, latent, size=None):
        """Inverse of encode; also its adjoint (the map is orthogonal).

        `size` is the original (h, w); without it the padded size is kept.
        """
        z = torch.as_tensor(latent, dtype=torch.float32).unsqueeze(0)
        z = torch.einsum("bdhw,cd->bchw", z, self.mix)
        x = torch.nn.functional.pixel_shuffle(z, 2)
        img = x[0].permute(1, 2, 0)
        if size is not None:
            img = img[: size[0], : size[1]]
        return img

    def decode_np(self, latent, size=None):
        return self.decode(latent, size).detach().cpu().numpy().astype(np.float64)
