"""Per-Gaussian screen-space preparation and its adjoint.

The forward half turns world-space Gaussians into depth-sorted 2D splats:
pinhole-projected means, local-affine (EWA) screen covariances with a
0.3 px^2 diagonal dilation, view-dependent colors and activation-mapped
opacities. The backward half chains kernel gradients (with respect to the
2D splat parameters) back to the raw scene attributes: position, opacity
logit, log scale, quaternion and SH coefficients.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import RenderNumericalError
from ..scene import sigmoid
from ..transforms import (
    normalize_quat_jacobian,
    quat_to_matrix,
    quat_to_matrix_jacobian,
)
from . import sh

NEAR_PLANE = 0.01
COV2D_DILATION = 0.3


@dataclass
class SplatBatch:
    """Visible Gaussians of one render call, depth-sorted front to back."""

    global_idx: np.ndarray     # (m,) indices into the scene
    z: np.ndarray              # (m,) camera-frame depth
    mean2d: np.ndarray         # (m, 2)
    conic: np.ndarray          # (m, 3) inverse 2D covariance (a, b, c)
    alpha: np.ndarray          # (m,) activated opacity
    color: np.ndarray          # (m, 3) decoded, clipped to [0, 1]
    bbox: np.ndarray           # (m, 4) int64 pixel rect [x0, x1, y0, y1)
    # cached intermediates for the adjoint
    p_cam: np.ndarray
    cov2d: np.ndarray          # (m, 2, 2) before inversion
    cov3d: np.ndarray          # (m, 3, 3)
    m_affine: np.ndarray       # (m, 2, 3) J @ W
    rot_mat: np.ndarray        # (m, 3, 3)
    quat: np.ndarray           # (m, 4) raw (unnormalized) quaternions
    scale: np.ndarray          # (m, 3) exp(scale_log)
    basis: np.ndarray          # (m, k) SH basis values
    color_mask: np.ndarray     # (m, 3) True where the color clip is inactive
    view_dir: np.ndarray       # (m, 3) unit vectors camera center -> mean
    view_dist: np.ndarray      # (m,)


def prepare_splats(scene, subset, pose, K, truncate_sigma=3.0):
    """Project a scene subset into screen space.

    `subset` is an index array or None for the whole scene. Gaussians at or
    behind the near plane are culled. Raises RenderNumericalError when a
    screen covariance is not invertible after dilation.
    """
    if subset is None:
        idx = np.arange(len(scene), dtype=np.int64)
    else:
        idx = np.unique(np.asarray(subset, dtype=np.int64))
        if idx.size and (idx[0] < 0 or idx[-1] >= len(scene)):
            raise IndexError("subset index out of range")

    W = pose.rotation_matrix()
    t = pose.translation
    cam_center = pose.camera_center()

    mu = scene.positions[idx]
    p_cam = mu @ W.T + t
    visible = p_cam[:, 2] > NEAR_PLANE
    idx = idx[visible]
    mu = mu[visible]
    p_cam = p_cam[visible]

    # stable front-to-back order; equal depths keep ascending index order
    order = np.argsort(p_cam[:, 2], kind="stable")
    idx, mu, p_cam = idx[order], mu[order], p_cam[order]
    m = idx.shape[0]

    x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    mean2d = np.stack([K.fx * x / z + K.cx, K.fy * y / z + K.cy], axis=1)

    quat = scene.rotations[idx]
    qn = quat / np.linalg.norm(quat, axis=1, keepdims=True)
    R = quat_to_matrix(qn)
    scale = np.exp(scene.scale_logs[idx])
    M3 = R * scale[:, None, :]
    cov3d = M3 @ np.transpose(M3, (0, 2, 1))

    J = np.zeros((m, 2, 3), dtype=np.float64)
    J[:, 0, 0] = K.fx / z
    J[:, 0, 2] = -K.fx * x / (z * z)
    J[:, 1, 1] = K.fy / z
    J[:, 1, 2] = -K.fy * y / (z * z)
    M = J @ W
    cov2d = M @ cov3d @ np.transpose(M, (0, 2, 1))
    cov2d[:, 0, 0] += COV2D_DILATION
    cov2d[:, 1, 1] += COV2D_DILATION

    a = cov2d[:, 0, 0]
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1]
    det = a * c - b * b
    bad = ~np.isfinite(det) | (det <= 0.0)
    if np.any(bad):
        raise RenderNumericalError(int(idx[np.nonzero(bad)[0][0]]))
    conic = np.stack([c / det, -b / det, a / det], axis=1)

    diff = mu - cam_center
    dist = np.linalg.norm(diff, axis=1)
    dist = np.where(dist == 0.0, 1.0, dist)
    view_dir = diff / dist[:, None]
    basis = sh.sh_basis(view_dir, scene.sh_degree) if m else np.zeros((0, scene.num_sh_coeffs))
    color, color_mask = sh.eval_colors(scene.sh_coeffs[idx], view_dir, scene.sh_degree)

    alpha = sigmoid(scene.opacity_logits[idx])

    bbox = np.zeros((m, 4), dtype=np.int64)
    if truncate_sigma is None or not np.isfinite(truncate_sigma):
        bbox[:, 1] = K.width
        bbox[:, 3] = K.height
    else:
        # the truncation ellipse spans +-r*sqrt(cov_kk) along each axis
        rx = truncate_sigma * np.sqrt(a)
        ry = truncate_sigma * np.sqrt(c)
        bbox[:, 0] = np.clip(np.ceil(mean2d[:, 0] - rx), 0, K.width)
        bbox[:, 1] = np.clip(np.floor(mean2d[:, 0] + rx) + 1, 0, K.width)
        bbox[:, 2] = np.clip(np.ceil(mean2d[:, 1] - ry), 0, K.height)
        bbox[:, 3] = np.clip(np.floor(mean2d[:, 1] + ry) + 1, 0, K.height)

    return SplatBatch(
        global_idx=idx, z=z, mean2d=mean2d, conic=conic, alpha=alpha, color=color,
        bbox=bbox, p_cam=p_cam, cov2d=cov2d, cov3d=cov3d, m_affine=M, rot_mat=R,
        quat=quat, scale=scale, basis=basis, color_mask=color_mask,
        view_dir=view_dir, view_dist=dist,
    )


def backprop_to_attributes(batch, scene, pose, K, g_mean2d, g_conic, g_alpha, g_color):
    """Chain kernel gradients back to raw attribute gradients.

    Returns dense arrays shaped like the scene attributes; rows outside the
    rendered subset stay zero.
    """
    n = len(scene)
    k_sh = scene.num_sh_coeffs
    g_position = np.zeros((n, 3), dtype=np.float64)
    g_logit = np.zeros(n, dtype=np.float64)
    g_scale_log = np.zeros((n, 3), dtype=np.float64)
    g_rotation = np.zeros((n, 4), dtype=np.float64)
    g_sh = np.zeros((n, k_sh, 3), dtype=np.float64)

    m = batch.global_idx.shape[0]
    if m == 0:
        return g_position, g_logit, g_scale_log, g_rotation, g_sh

    W = pose.rotation_matrix()
    idx = batch.global_idx

    # opacity: alpha = logistic(logit)
    al = batch.alpha
    g_logit[idx] = g_alpha * al * (1.0 - al)

    # color: through the clip mask, then SH basis and view direction
    gc = g_color * batch.color_mask
    g_sh[idx] = batch.basis[:, :, None] * gc[:, None, :]
    gdir = np.einsum("mkd,mkc,mc->md", sh.sh_basis_grad(batch.view_dir, scene.sh_degree),
                     scene.sh_coeffs[idx], gc)
    # direction = v / |v|: J = (I - dir dir^T) / |v|
    dd = batch.view_dir
    g_mu_color = (gdir - dd * np.sum(gdir * dd, axis=1, keepdims=True)) / batch.view_dist[:, None]

    # conic -> 2D covariance: A = inv(S'), dA = -A dS' A
    GA = np.empty((m, 2, 2), dtype=np.float64)
    GA[:, 0, 0] = g_conic[:, 0]
    GA[:, 0, 1] = GA[:, 1, 0] = 0.5 * g_conic[:, 1]
    GA[:, 1, 1] = g_conic[:, 2]
    A = np.empty((m, 2, 2), dtype=np.float64)
    A[:, 0, 0] = batch.conic[:, 0]
    A[:, 0, 1] = A[:, 1, 0] = batch.conic[:, 1]
    A[:, 1, 1] = batch.conic[:, 2]
    G_cov2d = -A @ GA @ A

    # 2D covariance -> 3D covariance and (through J) camera point
    M = batch.m_affine
    G_cov3d = np.transpose(M, (0, 2, 1)) @ G_cov2d @ M
    G_M = 2.0 * (G_cov2d @ M @ batch.cov3d)
    G_J = G_M @ W.T

    x, y, z = batch.p_cam[:, 0], batch.p_cam[:, 1], batch.p_cam[:, 2]
    z2 = z * z
    z3 = z2 * z
    g_pcam = np.zeros((m, 3), dtype=np.float64)
    g_pcam[:, 0] = G_J[:, 0, 2] * (-K.fx / z2)
    g_pcam[:, 1] = G_J[:, 1, 2] * (-K.fy / z2)
    g_pcam[:, 2] = (G_J[:, 0, 0] * (-K.fx / z2) + G_J[:, 0, 2] * (2.0 * K.fx * x / z3)
                    + G_J[:, 1, 1] * (-K.fy / z2) + G_J[:, 1, 2] * (2.0 * K.fy * y / z3))

    # 2D mean -> camera point: du/dp is the same Jacobian J
    Jp = np.zeros((m, 2, 3), dtype=np.float64)
    Jp[:, 0, 0] = K.fx / z
    Jp[:, 0, 2] = -K.fx * x / z2
    Jp[:, 1, 1] = K.fy / z
    Jp[:, 1, 2] = -K.fy * y / z2
    g_pcam += np.einsum("mij,mi->mj", Jp, g_mean2d)

    g_position[idx] = g_pcam @ W + g_mu_color

    # 3D covariance -> rotation and scale: cov = (R S)(R S)^T
    M3 = batch.rot_mat * batch.scale[:, None, :]
    G_M3 = 2.0 * (G_cov3d @ M3)
    g_scale = np.einsum("mrk,mrk->mk", batch.rot_mat, G_M3)
    g_scale_log[idx] = g_scale * batch.scale
    G_R = G_M3 * batch.scale[:, None, :]

    for j in range(m):
        dR = quat_to_matrix_jacobian(batch.quat[j] / np.linalg.norm(batch.quat[j]))
        g_qn = np.einsum("qrc,rc->q", dR, G_R[j])
        g_rotation[idx[j]] = normalize_quat_jacobian(batch.quat[j]) @ g_qn

    return g_position, g_logit, g_scale_log, g_rotation, g_sh
