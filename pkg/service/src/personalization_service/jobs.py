"""Personalization job files.

A job bundles rendered multi-view scene images with their poses (the pose
grid JSON exported by the editor CLI), one projected-box mask per view,
one reference image, the prompt set and hyperparameters. Image captions
arrive as the prompt texts themselves; they are user-editable, typically
seeded from a captioning model upstream.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

DEFAULT_HYPERPARAMETERS = {
    "scene_steps": 1000,
    "reference_steps": 500,
    "lambda": 0.1,
    "prior_images": 200,
    "lr": 2e-4,
    "prior_sample_steps": 10,
    "log_every": 50,
}


class JobError(ValueError):
    pass


@dataclass
class SceneView:
    image: np.ndarray      # (h, w, 3) float in [0, 1]
    pose_vec: np.ndarray   # quat (w, x, y, z) + translation, length 7
    mask: np.ndarray       # (h, w) bool, projected editing box


@dataclass
class PersonalizationJob:
    views: list
    reference_image: np.ndarray
    prompts: dict
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        hp = dict(DEFAULT_HYPERPARAMETERS)
        hp.update(self.hyperparameters)
        self.hyperparameters = hp
        if not self.views:
            raise JobError("job has no scene views")
        for key in ("scene_prompt", "global_prompt", "local_prompt",
                    "reference_prompt", "object_keyword",
                    "scene_token", "object_token"):
            if key not in self.prompts:
                raise JobError(f"prompts missing {key!r}")
        if self.prompts["object_keyword"].lower() not in self.prompts["global_prompt"].lower().split():
            raise JobError("object keyword must appear in the global prompt")

    @property
    def initial_scene_prompt(self):
        """Scene caption without the special token (prior preservation)."""
        token = self.prompts["scene_token"]
        words = [w for w in self.prompts["scene_prompt"].split() if w != token]
        return " ".join(words)


def load_image(path):
    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    return img


def load_mask(path):
    arr = np.asarray(Image.open(path).convert("L"))
    return arr > 127


def load_job(path):
    base = os.path.dirname(os.path.abspath(path))
    with open(path) as f:
        doc = json.load(f)

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    with open(resolve(doc["poses"])) as f:
        pose_doc = json.load(f)
    poses = pose_doc["poses"]
    images = doc["scene_images"]
    masks = doc["masks"]
    if not (len(poses) == len(images) == len(masks)):
        raise JobError(
            f"every scene image needs a pose and a mask: "
            f"{len(images)} images, {len(poses)} poses, {len(masks)} masks"
        )
    views = []
    for pose, img_path, mask_path in zip(poses, images, masks):
        vec = np.asarray(list(pose["quat"]) + list(pose["trans"]), dtype=np.float64)
        views.append(SceneView(image=load_image(resolve(img_path)), pose_vec=vec,
                               mask=load_mask(resolve(mask_path))))
    return PersonalizationJob(
        views=views,
        reference_image=load_image(resolve(doc["reference_image"])),
        prompts=doc["prompts"],
        hyperparameters=doc.get("hyperparameters", {}),
    )


IDENTITY_POSE_VEC = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
