"""Stepwise 2D personalization: scene step, then reference step.

Scene step: the denoiser is fine-tuned on rendered scene views with pose
conditioning, paired with prior-preservation batches generated by the
untouched base model under the token-free caption and the identity pose.
Each step additionally runs the global editing prompt on the scene view
and penalizes the object keyword's cross-attention outside the projected
box mask: loss_loc = (1 - max inside) + lambda * sum(outside^2). A zero
lambda disables that term entirely, leaving a plain fine-tune.

Reference step: low-rank adapters on the attention projections are trained
on the reference image under the object prompt and the identity pose; the
base weights stay frozen (checksum-verified by callers and tests).
"""

import numpy as np
import torch

from . import diffusion
from .jobs import IDENTITY_POSE_VEC
from .lora import lora_parameters
from .model import tokenize

ATTENTION_RES = (16, 16)


class JobFailure(RuntimeError):
    def __init__(self, step, message):
        self.step = step
        super().__init__(f"step {step}: {message}")


def _to_pose_batch(vec):
    return torch.as_tensor(np.asarray(vec, dtype=np.float32)).reshape(1, 7)


def _mask_to_attention_res(mask):
    """Nearest-neighbor downsample of the view mask to the attention grid."""
    t = torch.as_tensor(mask, dtype=torch.float32).reshape(1, 1, *mask.shape)
    small = torch.nn.functional.interpolate(t, size=ATTENTION_RES, mode="nearest")
    return small[0, 0] > 0.5


def localization_loss_torch(attention, mask, lam):
    inside = attention[mask]
    if inside.numel() == 0:
        # box projected off-screen at this pose; only penalize outside mass
        return lam * (attention ** 2).sum()
    outside = attention[~mask]
    return (1.0 - inside.max()) + lam * (outside ** 2).sum()


def _generate_prior_set(state, prompt, count, shape, generator, steps):
    token_ids, _ = tokenize(prompt)
    images = []
    for _ in range(count):
        img = diffusion.sample_image(state.model, state.codec, token_ids, shape,
                                     _to_pose_batch(IDENTITY_POSE_VEC), generator,
                                     steps=steps)
        images.append(img.numpy().astype(np.float64))
    return images


def personalize_scene(state, job, seed=0, progress=None):
    """Fine-tune the denoiser on the scene; returns a training log dict."""
    hp = job.hyperparameters
    lam = float(hp["lambda"])
    steps = int(hp["scene_steps"])
    gen = torch.Generator().manual_seed(seed)

    scene_ids, _ = tokenize(job.prompts["scene_prompt"])
    prior_ids, _ = tokenize(job.initial_scene_prompt)
    global_ids, global_words = tokenize(job.prompts["global_prompt"])
    keyword = job.prompts["object_keyword"].lower()

    shape = job.views[0].image.shape[:2]
    prior_images = _generate_prior_set(state, job.initial_scene_prompt,
                                       int(hp["prior_images"]), shape, gen,
                                       int(hp["prior_sample_steps"]))

    model = state.model
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=float(hp["lr"]))
    log = {"loss": [], "loc": [], "attention_log": []}

    encoded_views = [state.codec.encode(v.image) for v in job.views]
    encoded_priors = [state.codec.encode(img) for img in prior_images]
    masks16 = [_mask_to_attention_res(v.mask) for v in job.views]

    for step in range(steps):
        k = step % len(job.views)
        view = job.views[k]
        z0 = encoded_views[k]

        t = float(torch.rand(1, generator=gen) * 0.96 + 0.02)
        eps = torch.randn(z0.shape, generator=gen)
        z_t = torch.as_tensor(diffusion.q_sample(z0.numpy(), t, eps.numpy()),
                              dtype=torch.float32)
        eps_hat = model(z_t.unsqueeze(0), t, _to_pose_batch(view.pose_vec), scene_ids)[0]
        loss = torch.mean((eps_hat - eps) ** 2)

        kp = step % len(encoded_priors)
        tp = float(torch.rand(1, generator=gen) * 0.96 + 0.02)
        eps_p = torch.randn(encoded_priors[kp].shape, generator=gen)
        z_tp = torch.as_tensor(
            diffusion.q_sample(encoded_priors[kp].numpy(), tp, eps_p.numpy()),
            dtype=torch.float32,
        )
        eps_hat_p = model(z_tp.unsqueeze(0), tp, _to_pose_batch(IDENTITY_POSE_VEC),
                          prior_ids)[0]
        loss = loss + torch.mean((eps_hat_p - eps_p) ** 2)

        loc_value = 0.0
        if lam > 0.0:
            t2 = float(torch.rand(1, generator=gen) * 0.96 + 0.02)
            eps2 = torch.randn(z0.shape, generator=gen)
            z_t2 = torch.as_tensor(diffusion.q_sample(z0.numpy(), t2, eps2.numpy()),
                                   dtype=torch.float32)
            _ = model(z_t2.unsqueeze(0), t2, _to_pose_batch(view.pose_vec), global_ids)
            amap = model.attention_for_token(global_words, keyword, z0.shape[1:])
            amap = torch.nn.functional.interpolate(
                amap[None, None], size=ATTENTION_RES, mode="bilinear", align_corners=False,
            )[0, 0].clamp(0.0, 1.0)
            loc = localization_loss_torch(amap, masks16[k], lam)
            loss = loss + loc
            loc_value = float(loc.detach())
            if step % int(hp["log_every"]) == 0:
                log["attention_log"].append({
                    "attention": amap.detach().numpy().astype(np.float64),
                    "mask": masks16[k].numpy(),
                    "loss": loc_value,
                    "lambda": lam,
                })

        if not torch.isfinite(loss):
            raise JobFailure(step, "non-finite loss")
        opt.zero_grad()
        loss.backward()
        opt.step()
        log["loss"].append(float(loss.detach()))
        log["loc"].append(loc_value)
        if progress and step % int(hp["log_every"]) == 0:
            progress(step, float(loss.detach()))

    state.prompts = dict(job.prompts)
    state.scene_trained = True
    model.eval()
    return log


def personalize_reference(state, job, seed=0, progress=None):
    """Train adapters on the reference image; base weights stay frozen."""
    hp = job.hyperparameters
    steps = int(hp["reference_steps"])
    gen = torch.Generator().manual_seed(seed + 1)

    checksum_before = state.base_checksum()
    state.ensure_lora()
    model = state.model
    for p in model.parameters():
        p.requires_grad_(False)
    params = list(lora_parameters(model))
    for p in params:
        p.requires_grad_(True)

    ref_ids, _ = tokenize(job.prompts["reference_prompt"])
    z0 = state.codec.encode(job.reference_image)

    model.train()
    opt = torch.optim.Adam(params, lr=float(hp["lr"]))
    log = {"loss": []}
    for step in range(steps):
        t = float(torch.rand(1, generator=gen) * 0.96 + 0.02)
        eps = torch.randn(z0.shape, generator=gen)
        z_t = torch.as_tensor(diffusion.q_sample(z0.numpy(), t, eps.numpy()),
                              dtype=torch.float32)
        eps_hat = model(z_t.unsqueeze(0), t, _to_pose_batch(IDENTITY_POSE_VEC), ref_ids)[0]
        loss = torch.mean((eps_hat - eps) ** 2)
        if not torch.isfinite(loss):
            raise JobFailure(step, "non-finite loss")
        opt.zero_grad()
        loss.backward()
        opt.step()
        log["loss"].append(float(loss.detach()))
        if progress and step % int(hp["log_every"]) == 0:
            progress(step, float(loss.detach()))

    for p in model.parameters():
        p.requires_grad_(True)
    model.eval()
    state.reference_trained = True

    if state.base_checksum() != checksum_before:
        raise JobFailure(steps, "base weights changed during reference personalization")
    return log
