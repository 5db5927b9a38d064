"""Deterministic test scenes and their mock editing targets.

blob-10        ten degree-0 Gaussians: a ring of five plus a boxed cluster
               of five; the mock target recolors and slightly regrows the
               cluster. Small enough to eyeball in a debugger.
box-scene-100  a hundred degree-3 Gaussians for persistence and pose-grid
               coverage checks.
"""

from dataclasses import dataclass

import numpy as np

from .camera import Intrinsics, PoseSamplerConfig
from .guidance import PromptSet
from .scene import BoundingBox3D, GaussianScene
from .transforms import normalize_quat

SH_C0 = 0.28209479177387814


def color_to_dc(rgb):
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


@dataclass
class EditFixture:
    name: str
    scene: GaussianScene
    box: BoundingBox3D
    target_full: GaussianScene
    target_foreground: GaussianScene
    prompts: PromptSet
    intrinsics: Intrinsics
    sampler: PoseSamplerConfig


def _scene_from(parts, sh_degree=0):
    positions, logits, scales, quats, colors = zip(*parts)
    k = (sh_degree + 1) ** 2
    n = len(parts)
    sh = np.zeros((n, k, 3))
    sh[:, 0, :] = [color_to_dc(c) for c in colors]
    return GaussianScene(
        positions=np.array(positions), opacity_logits=np.array(logits),
        scale_logs=np.log(np.array(scales)), rotations=np.array(quats),
        sh_coeffs=sh, sh_degree=sh_degree,
    )


def _default_prompts():
    return PromptSet(
        scene_prompt="a sks tabletop scene",
        global_prompt="a sks tabletop scene with a olx ornament on it",
        local_prompt="a olx ornament",
        reference_prompt="a olx ornament",
        object_keyword="ornament",
    )


def build_blob10():
    ident = [1.0, 0.0, 0.0, 0.0]
    ring = []
    for i in range(5):
        angle = 2.0 * np.pi * i / 5.0
        pos = [0.9 * np.cos(angle), -0.35, 0.9 * np.sin(angle)]
        ring.append((pos, 1.2, [0.22, 0.22, 0.22], ident, [0.35, 0.45, 0.75]))

    cluster_offsets = np.array([
        [0.0, 0.0, 0.0],
        [0.16, 0.05, 0.02],
        [-0.14, 0.08, -0.05],
        [0.03, -0.12, 0.12],
        [-0.05, 0.14, 0.1],
    ])
    cluster = [
        (list(off), 0.9, [0.16, 0.16, 0.16], ident, [0.78, 0.32, 0.3])
        for off in cluster_offsets
    ]
    scene = _scene_from(ring + cluster)

    blob = [
        (list(off), 0.9, [0.184, 0.184, 0.184], ident, [0.3, 0.72, 0.38])
        for off in cluster_offsets
    ]
    target_foreground = _scene_from(blob)
    target_full = scene.extend(target_foreground)

    box = BoundingBox3D(center=[0.0, 0.02, 0.03], half_extents=[0.35, 0.35, 0.35])
    intrinsics = Intrinsics(fx=70.0, fy=70.0, cx=24.0, cy=24.0, width=48, height=48)
    sampler = PoseSamplerConfig(look_at=box.center, radius_range=(2.4, 3.2))
    return EditFixture("blob-10", scene, box, target_full, target_foreground,
                       _default_prompts(), intrinsics, sampler)


def build_box_scene100():
    rng = np.random.default_rng(20240311)
    n = 100
    positions = rng.uniform(-1.0, 1.0, size=(n, 3))
    positions[:20] = rng.uniform(-0.25, 0.25, size=(20, 3))  # boxed cluster
    scene = GaussianScene(
        positions=positions,
        opacity_logits=rng.uniform(-0.5, 2.0, size=n),
        scale_logs=np.log(rng.uniform(0.06, 0.25, size=(n, 3))),
        rotations=normalize_quat(rng.normal(size=(n, 4))),
        sh_coeffs=np.concatenate(
            [rng.uniform(-0.7, 0.7, size=(n, 1, 3)), rng.uniform(-0.05, 0.05, size=(n, 15, 3))],
            axis=1,
        ),
        sh_degree=3,
    )
    target_full = scene.copy()
    target_full.sh_coeffs[:20, 0, :] = color_to_dc([0.25, 0.65, 0.4])
    target_foreground = target_full.take(np.arange(20))

    box = BoundingBox3D(center=[0.0, 0.0, 0.0], half_extents=[0.3, 0.3, 0.3])
    intrinsics = Intrinsics(fx=80.0, fy=80.0, cx=32.0, cy=32.0, width=64, height=64)
    sampler = PoseSamplerConfig(look_at=box.center, radius_range=(2.8, 4.0))
    return EditFixture("box-scene-100", scene, box, target_full, target_foreground,
                       _default_prompts(), intrinsics, sampler)


FIXTURES = {
    "blob-10": build_blob10,
    "box-scene-100": build_box_scene100,
}
