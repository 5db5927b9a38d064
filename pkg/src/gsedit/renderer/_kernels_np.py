"""NumPy reference implementation of the compositing kernels.

Semantics (shared bit-for-bit in spirit with the compiled backend):
splats arrive depth-sorted front to back; per pixel, a splat contributes
sigma * T where T is the transmittance accumulated so far, and compositing
stops once T falls below `stop_t`. A splat is skipped at pixels whose
squared Mahalanobis distance exceeds `maha_max` (pass +inf to disable
truncation, e.g. for gradient checking).
"""

import numpy as np


def composite_forward(mean2d, conic, alpha, color, bbox, height, width, bg, maha_max, stop_t):
    """Composite sorted splats; returns (rgb, alpha_image).

    rgb already includes the (1 - alpha) * background term.
    """
    T = np.ones((height, width), dtype=np.float64)
    C = np.zeros((height, width, 3), dtype=np.float64)
    cols = np.arange(width, dtype=np.float64)
    rows = np.arange(height, dtype=np.float64)

    for i in range(mean2d.shape[0]):
        x0, x1, y0, y1 = bbox[i]
        if x0 >= x1 or y0 >= y1:
            continue
        dx = cols[x0:x1] - mean2d[i, 0]
        dy = rows[y0:y1] - mean2d[i, 1]
        a, b, c = conic[i]
        maha = (a * dx * dx)[None, :] + (c * dy * dy)[:, None] + (2.0 * b) * dy[:, None] * dx[None, :]
        sigma = alpha[i] * np.exp(-0.5 * maha)
        Tb = T[y0:y1, x0:x1]
        active = Tb >= stop_t
        if np.isfinite(maha_max):
            active &= maha <= maha_max
        w = np.where(active, sigma * Tb, 0.0)
        C[y0:y1, x0:x1] += w[:, :, None] * color[i]
        T[y0:y1, x0:x1] = np.where(active, Tb * (1.0 - sigma), Tb)

    rgb = C + T[:, :, None] * np.asarray(bg, dtype=np.float64)
    return rgb, 1.0 - T


def composite_backward(mean2d, conic, alpha, color, bbox, height, width, bg, maha_max,
                       stop_t, grad_rgb):
    """Adjoint of composite_forward with respect to the splat parameters.

    Returns (g_mean2d, g_conic, g_alpha, g_color). The suffix color needed
    for d/d(sigma) is recovered as total - prefix, dividing by (1 - sigma);
    the division is guarded, so gradients at sigma == 1 fall back to the
    foreground term only (the logit gradient vanishes there anyway).
    """
    n = mean2d.shape[0]
    total, _ = composite_forward(mean2d, conic, alpha, color, bbox, height, width,
                                 bg, maha_max, stop_t)

    T = np.ones((height, width), dtype=np.float64)
    prefix = np.zeros((height, width, 3), dtype=np.float64)
    cols = np.arange(width, dtype=np.float64)
    rows = np.arange(height, dtype=np.float64)

    g_mean2d = np.zeros((n, 2), dtype=np.float64)
    g_conic = np.zeros((n, 3), dtype=np.float64)
    g_alpha = np.zeros(n, dtype=np.float64)
    g_color = np.zeros((n, 3), dtype=np.float64)

    for i in range(n):
        x0, x1, y0, y1 = bbox[i]
        if x0 >= x1 or y0 >= y1:
            continue
        dx = cols[x0:x1] - mean2d[i, 0]
        dy = rows[y0:y1] - mean2d[i, 1]
        a, b, c = conic[i]
        dx2 = dx * dx
        dy2 = dy * dy
        dxdy = dy[:, None] * dx[None, :]
        maha = (a * dx2)[None, :] + (c * dy2)[:, None] + (2.0 * b) * dxdy
        G = np.exp(-0.5 * maha)
        sigma = alpha[i] * G
        Tb = T[y0:y1, x0:x1]
        active = Tb >= stop_t
        if np.isfinite(maha_max):
            active &= maha <= maha_max
        w = np.where(active, sigma * Tb, 0.0)

        sl = (slice(y0, y1), slice(x0, x1))
        prefix[sl] += w[:, :, None] * color[i]
        suffix = total[sl] - prefix[sl]
        grad_px = grad_rgb[sl]

        g_color[i] = np.einsum("hwc,hw->c", grad_px, w)

        denom = np.maximum(1.0 - sigma, 1e-12)
        d_rgb_d_sigma = Tb[:, :, None] * color[i] - suffix / denom[:, :, None]
        gsig = np.where(active, np.einsum("hwc,hwc->hw", grad_px, d_rgb_d_sigma), 0.0)

        g_alpha[i] = np.sum(gsig * G)
        # d(sigma)/d(mean) = sigma * A (pixel - mean); A = conic matrix
        ad_x = a * dx[None, :] + b * dy[:, None]
        ad_y = b * dx[None, :] + c * dy[:, None]
        g_mean2d[i, 0] = np.sum(gsig * sigma * ad_x)
        g_mean2d[i, 1] = np.sum(gsig * sigma * ad_y)
        g_conic[i, 0] = np.sum(gsig * sigma * (-0.5) * dx2[None, :])
        g_conic[i, 1] = np.sum(gsig * sigma * (-1.0) * dxdy)
        g_conic[i, 2] = np.sum(gsig * sigma * (-0.5) * dy2[:, None])

        T[sl] = np.where(active, Tb * (1.0 - sigma), Tb)

    return g_mean2d, g_conic, g_alpha, g_color
