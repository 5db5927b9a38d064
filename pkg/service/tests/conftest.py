import json

import numpy as np
import pytest
import torch
from PIL import Image

# gsedit appears in tests only, as the fixture generator and reference
# implementation; the service itself never imports it.
from gsedit.camera import poses_to_json, project_box, sample_refinement_grid
from gsedit.camera import PoseSamplerConfig
from gsedit.fixtures import build_blob10
from gsedit.renderer import render

from personalization_service.jobs import PersonalizationJob, SceneView

TEST_HYPERPARAMETERS = {
    "scene_steps": 40,
    "reference_steps": 30,
    "lambda": 0.1,
    "prior_images": 2,
    "prior_sample_steps": 4,
    "lr": 2e-3,
    "log_every": 10,
}


def _pose_vec(pose):
    return np.concatenate([pose.rotation, pose.translation])


@pytest.fixture(scope="session")
def blob_views():
    fx = build_blob10()
    sampler = PoseSamplerConfig(look_at=fx.box.center, radius_range=(2.4, 3.2),
                                elevation_range_deg=(0.0, 0.0),
                                azimuth_range_deg=(0.0, 270.0), grid_step_deg=90.0)
    poses = sample_refinement_grid(sampler)
    views = []
    for pose in poses:
        out = render(fx.scene, pose, fx.intrinsics)
        mask = project_box(fx.box, pose, fx.intrinsics)
        views.append((pose, out.rgb, mask))
    return fx, views


@pytest.fixture
def job(blob_views):
    fx, views = blob_views
    rng = np.random.default_rng(5)
    reference = rng.uniform(0.0, 1.0, size=(32, 32, 3))
    return PersonalizationJob(
        views=[SceneView(image=rgb, pose_vec=_pose_vec(pose), mask=mask)
               for pose, rgb, mask in views],
        reference_image=reference,
        prompts=fx.prompts.to_dict(),
        hyperparameters=dict(TEST_HYPERPARAMETERS),
    )


@pytest.fixture
def job_dir(tmp_path, blob_views):
    """The same job written out as files, exercising the JSON/PNG surface."""
    fx, views = blob_views
    poses = [v[0] for v in views]
    (tmp_path / "grid.json").write_text(poses_to_json(poses, fx.intrinsics))
    images, masks = [], []
    for i, (_, rgb, mask) in enumerate(views):
        img_name, mask_name = f"view_{i:03d}.png", f"mask_{i:03d}.png"
        Image.fromarray((np.clip(rgb, 0, 1) * 255).round().astype(np.uint8)).save(
            tmp_path / img_name)
        Image.fromarray((mask * 255).astype(np.uint8), mode="L").save(tmp_path / mask_name)
        images.append(img_name)
        masks.append(mask_name)
    rng = np.random.default_rng(5)
    ref = (rng.uniform(0, 1, size=(32, 32, 3)) * 255).round().astype(np.uint8)
    Image.fromarray(ref).save(tmp_path / "reference.png")
    (tmp_path / "job.json").write_text(json.dumps({
        "poses": "grid.json",
        "scene_images": images,
        "masks": masks,
        "reference_image": "reference.png",
        "prompts": build_blob10().prompts.to_dict(),
        "hyperparameters": TEST_HYPERPARAMETERS,
    }))
    return tmp_path


@pytest.fixture(autouse=True)
def _deterministic_torch():
    torch.manual_seed(0)
