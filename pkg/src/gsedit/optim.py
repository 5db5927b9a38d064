"""Adam over scene attributes, restricted to an editable row set.

Standard splat-training learning rates; the position rate is additionally
scaled by the scene extent by the caller. Moment state exists only for
the editable rows, so non-editable Gaussians cannot drift even by
accumulated rounding: their memory is never written.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class AdamParams:
    lr_position: float = 1.6e-4
    lr_sh: float = 2.5e-3
    lr_opacity: float = 5e-2
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15


class SceneAdam:
    def __init__(self, scene, edit_set, params=None, position_lr_scale=1.0):
        self.params = params or AdamParams()
        self.rows = np.asarray(edit_set.editable_indices, dtype=np.int64)
        self.trainable = edit_set.trainable
        self.position_lr_scale = float(position_lr_scale)
        self.t = 0
        m = self.rows.size
        k = scene.num_sh_coeffs
        self._state = {
            "position": (np.zeros((m, 3)), np.zeros((m, 3))),
            "opacity": (np.zeros(m), np.zeros(m)),
            "scale": (np.zeros((m, 3)), np.zeros((m, 3))),
            "rotation": (np.zeros((m, 4)), np.zeros((m, 4))),
            "sh": (np.zeros((m, k, 3)), np.zeros((m, k, 3))),
        }

    def _apply(self, values, grad_rows, name, lr):
        m, v = self._state[name]
        p = self.params
        m *= p.beta1
        m += (1.0 - p.beta1) * grad_rows
        v *= p.beta2
        v += (1.0 - p.beta2) * grad_rows * grad_rows
        mhat = m / (1.0 - p.beta1 ** self.t)
        vhat = v / (1.0 - p.beta2 ** self.t)
        values[self.rows] -= lr * mhat / (np.sqrt(vhat) + p.eps)

    def step(self, scene, grads):
        """One update of the trainable attributes of the editable rows."""
        if self.rows.size == 0:
            return
        self.t += 1
        p = self.params
        r = self.rows
        if self.trainable.position:
            self._apply(scene.positions, grads.position[r], "position",
                        p.lr_position * self.position_lr_scale)
        if self.trainable.opacity:
            self._apply(scene.opacity_logits, grads.opacity_logit[r], "opacity", p.lr_opacity)
        if self.trainable.scale:
            self._apply(scene.scale_logs, grads.scale_log[r], "scale", p.lr_scale)
        if self.trainable.rotation:
            self._apply(scene.rotations, grads.rotation[r], "rotation", p.lr_rotation)
            norms = np.linalg.norm(scene.rotations[r], axis=1, keepdims=True)
            scene.rotations[r] = scene.rotations[r] / norms
        if self.trainable.sh:
            self._apply(scene.sh_coeffs, grads.sh_coeffs[r], "sh", p.lr_sh)
