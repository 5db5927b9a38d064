"""Optional densify/prune pass for the editable subset during editing.

Off by default. When enabled it follows the usual splat-training recipe in
reduced form: editable Gaussians with a large position gradient are cloned
(shifted slightly along the gradient), and editable Gaussians that have
become almost transparent are dropped. Fixed Gaussians are never cloned,
moved or pruned, so background payloads stay bit-identical.
"""

import numpy as np

from .scene import EditSet, sigmoid

GRAD_CLONE_QUANTILE = 0.9
PRUNE_ALPHA = 0.005


def densify_and_prune(scene, edit_set, grads):
    rows = edit_set.editable_indices
    if rows.size == 0:
        return scene, edit_set

    gnorm = np.linalg.norm(grads.position[rows], axis=1)
    clone_rows = rows[gnorm >= np.quantile(gnorm, GRAD_CLONE_QUANTILE)] if rows.size > 1 else rows
    keep_mask = np.ones(len(scene), dtype=bool)
    alphas = sigmoid(scene.opacity_logits[rows])
    keep_mask[rows[alphas < PRUNE_ALPHA]] = False
    # never prune everything: keep at least one editable splat
    if not keep_mask[rows].any():
        keep_mask[rows[0]] = True

    clone_rows = clone_rows[keep_mask[clone_rows]]
    clones = scene.take(clone_rows)
    step = 0.01 * np.exp(scene.scale_logs[clone_rows]).mean(axis=1, keepdims=True)
    gdir = grads.position[clone_rows]
    norms = np.linalg.norm(gdir, axis=1, keepdims=True)
    gdir = np.where(norms > 0, gdir / np.maximum(norms, 1e-12), 0.0)
    clones.positions = clones.positions - step * gdir

    kept = np.nonzero(keep_mask)[0]
    new_scene = scene.take(kept).extend(clones)

    remap = -np.ones(len(scene), dtype=np.int64)
    remap[kept] = np.arange(kept.size)
    new_editable = remap[rows]
    new_editable = new_editable[new_editable >= 0]
    new_editable = np.concatenate([
        new_editable, np.arange(kept.size, kept.size + len(clones)),
    ])
    return new_scene, EditSet(new_editable, edit_set.trainable, edit_set.task)
