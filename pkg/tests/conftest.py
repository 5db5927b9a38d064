import numpy as np
import pytest

from gsedit.camera import Intrinsics, look_at_pose
from gsedit.scene import GaussianScene
from gsedit.transforms import normalize_quat


def random_scene(rng, n, sh_degree=0, spread=0.6, alpha_logit_range=(-1.5, 1.5)):
    """Small random scene with colors safely inside the clip range."""
    k = (sh_degree + 1) ** 2
    sh = np.zeros((n, k, 3))
    sh[:, 0, :] = rng.uniform(-0.8, 0.8, size=(n, 3))
    if k > 1:
        sh[:, 1:, :] = rng.uniform(-0.08, 0.08, size=(n, k - 1, 3))
    return GaussianScene(
        positions=rng.uniform(-spread, spread, size=(n, 3)),
        opacity_logits=rng.uniform(*alpha_logit_range, size=n),
        scale_logs=np.log(rng.uniform(0.05, 0.35, size=(n, 3))),
        rotations=normalize_quat(rng.normal(size=(n, 4))),
        sh_coeffs=sh,
        sh_degree=sh_degree,
    )


def random_pose(rng, target=(0.0, 0.0, 0.0), radius=(2.5, 4.0)):
    el = rng.uniform(-0.9, 0.9)  # radians, stays away from the poles
    az = rng.uniform(0.0, 2.0 * np.pi)
    r = rng.uniform(*radius)
    eye = np.asarray(target) + r * np.array(
        [np.cos(el) * np.sin(az), np.sin(el), np.cos(el) * np.cos(az)]
    )
    return look_at_pose(eye, target)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_intrinsics():
    return Intrinsics(fx=60.0, fy=60.0, cx=16.0, cy=16.0, width=32, height=32)
