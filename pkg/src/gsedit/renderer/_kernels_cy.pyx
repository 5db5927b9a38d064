# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled compositing kernels.

Same contract as _kernels_np; the per-pixel loops dominate render time so
they live here. Loop order (sorted splats outer, bbox pixels inner) is
identical to the NumPy backend, so both produce the same arithmetic up to
libm rounding.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def composite_forward(double[:, ::1] mean2d, double[:, ::1] conic, double[::1] alpha,
                      double[:, ::1] color, long[:, ::1] bbox, int height, int width,
                      double[::1] bg, double maha_max, double stop_t):
    cdef int n = mean2d.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] T_arr = np.ones((height, width), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=3] C_arr = np.zeros((height, width, 3), dtype=np.float64)
    cdef double[:, ::1] T = T_arr
    cdef double[:, :, ::1] C = C_arr

    cdef int i, px, py, x0, x1, y0, y1
    cdef double a, b, c, ux, uy, al, dx, dy, maha, sigma, w, t
    cdef double c0, c1, c2

    for i in range(n):
        x0 = bbox[i, 0]; x1 = bbox[i, 1]; y0 = bbox[i, 2]; y1 = bbox[i, 3]
        if x0 >= x1 or y0 >= y1:
            continue
        ux = mean2d[i, 0]; uy = mean2d[i, 1]
        a = conic[i, 0]; b = conic[i, 1]; c = conic[i, 2]
        al = alpha[i]
        c0 = color[i, 0]; c1 = color[i, 1]; c2 = color[i, 2]
        for py in range(y0, y1):
            dy = py - uy
            for px in range(x0, x1):
                t = T[py, px]
                if t < stop_t:
                    continue
                dx = px - ux
                maha = a * dx * dx + c * dy * dy + 2.0 * b * dx * dy
                if maha > maha_max:
                    continue
                sigma = al * exp(-0.5 * maha)
                w = sigma * t
                C[py, px, 0] += w * c0
                C[py, px, 1] += w * c1
                C[py, px, 2] += w * c2
                T[py, px] = t * (1.0 - sigma)

    cdef double b0 = bg[0], b1 = bg[1], b2 = bg[2]
    for py in range(height):
        for px in range(width):
            t = T[py, px]
            C[py, px, 0] += t * b0
            C[py, px, 1] += t * b1
            C[py, px, 2] += t * b2
            T[py, px] = 1.0 - t

    return C_arr, T_arr


def composite_backward(double[:, ::1] mean2d, double[:, ::1] conic, double[::1] alpha,
                       double[:, ::1] color, long[:, ::1] bbox, int height, int width,
                       double[::1] bg, double maha_max, double stop_t,
                       double[:, :, ::1] grad_rgb):
    cdef int n = mean2d.shape[0]

    total_arr, _ = composite_forward(mean2d, conic, alpha, color, bbox, height, width,
                                     bg, maha_max, stop_t)
    cdef double[:, :, ::1] total = total_arr

    cdef cnp.ndarray[cnp.float64_t, ndim=2] T_arr = np.ones((height, width), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=3] P_arr = np.zeros((height, width, 3), dtype=np.float64)
    cdef double[:, ::1] T = T_arr
    cdef double[:, :, ::1] prefix = P_arr

    cdef cnp.ndarray[cnp.float64_t, ndim=2] gm_arr = np.zeros((n, 2), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] gc_arr = np.zeros((n, 3), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ga_arr = np.zeros(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] gcol_arr = np.zeros((n, 3), dtype=np.float64)
    cdef double[:, ::1] g_mean2d = gm_arr
    cdef double[:, ::1] g_conic = gc_arr
    cdef double[::1] g_alpha = ga_arr
    cdef double[:, ::1] g_color = gcol_arr

    cdef int i, px, py, x0, x1, y0, y1
    cdef double a, b, c, ux, uy, al, dx, dy, maha, G, sigma, w, t, denom
    cdef double c0, c1, c2, s0, s1, s2, gr0, gr1, gr2, gsig

    for i in range(n):
        x0 = bbox[i, 0]; x1 = bbox[i, 1]; y0 = bbox[i, 2]; y1 = bbox[i, 3]
        if x0 >= x1 or y0 >= y1:
            continue
        ux = mean2d[i, 0]; uy = mean2d[i, 1]
        a = conic[i, 0]; b = conic[i, 1]; c = conic[i, 2]
        al = alpha[i]
        c0 = color[i, 0]; c1 = color[i, 1]; c2 = color[i, 2]
        for py in range(y0, y1):
            dy = py - uy
            for px in range(x0, x1):
                t = T[py, px]
                if t < stop_t:
                    continue
                dx = px - ux
                maha = a * dx * dx + c * dy * dy + 2.0 * b * dx * dy
                if maha > maha_max:
                    continue
                G = exp(-0.5 * maha)
                sigma = al * G
                w = sigma * t

                prefix[py, px, 0] += w * c0
                prefix[py, px, 1] += w * c1
                prefix[py, px, 2] += w * c2
                s0 = total[py, px, 0] - prefix[py, px, 0]
                s1 = total[py, px, 1] - prefix[py, px, 1]
                s2 = total[py, px, 2] - prefix[py, px, 2]

                gr0 = grad_rgb[py, px, 0]
                gr1 = grad_rgb[py, px, 1]
                gr2 = grad_rgb[py, px, 2]

                g_color[i, 0] += gr0 * w
                g_color[i, 1] += gr1 * w
                g_color[i, 2] += gr2 * w

                denom = 1.0 - sigma
                if denom < 1e-12:
                    denom = 1e-12
                gsig = (gr0 * (t * c0 - s0 / denom)
                        + gr1 * (t * c1 - s1 / denom)
                        + gr2 * (t * c2 - s2 / denom))

                g_alpha[i] += gsig * G
                g_mean2d[i, 0] += gsig * sigma * (a * dx + b * dy)
                g_mean2d[i, 1] += gsig * sigma * (b * dx + c * dy)
                g_conic[i, 0] += gsig * sigma * (-0.5) * dx * dx
                g_conic[i, 1] += gsig * sigma * (-1.0) * dx * dy
                g_conic[i, 2] += gsig * sigma * (-0.5) * dy * dy

                T[py, px] = t * (1.0 - sigma)

    return gm_arr, gc_arr, ga_arr, gcol_arr
