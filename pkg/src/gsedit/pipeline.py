"""Two-stage editing loop over the editable subset.

Coarse stage: per iteration, the full scene and the editable foreground are
rendered at a random pose, the provider returns one pixel gradient per
prompt (global and local), and the gamma-weighted pair is pulled back
through the renderer adjoint of its own render before an Adam step on the
editable rows. Stylize runs with the global term only; there is no
foreground/background split when the whole scene is editable.

Refinement stage: one pseudo ground-truth image per grid pose, composed
from the denoised full render inside the instance mask and the fixed-only
render outside it, then plain MSE descent cycling through the cached views.
The pseudo-GT set is generated once and frozen unless
`regenerate_gt_every` asks for periodic refresh.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .camera import Intrinsics, PoseSamplerConfig, sample_random_pose, sample_refinement_grid
from .errors import ConfigError, GuidanceError, PipelineAbort, ValidationError
from .guidance import GuidanceRequest
from .losses import compose_pseudo_gt, mse
from .optim import AdamParams, SceneAdam
from .pruning import densify_and_prune
from .renderer import render, render_backward, render_instance_mask
from .scene import build_edit_set, load_ply, save_ply


def default_intrinsics(width=512, height=512):
    return Intrinsics(fx=600.0, fy=600.0, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                      width=width, height=height)


@dataclass
class EditConfig:
    task: str
    box: object                      # BoundingBox3D
    prompts: object                  # PromptSet
    gamma: float = 0.5
    coarse_iters: int = 1000         # typical range 1000-5000 by task
    refine_iters: int = 3000
    t0: float = 0.05
    intrinsics: Intrinsics = field(default_factory=default_intrinsics)
    optimizer: AdamParams = field(default_factory=AdamParams)
    coarse_sampler: PoseSamplerConfig = None
    refine_sampler: PoseSamplerConfig = None
    mask_threshold: float = 0.5
    background: tuple = (0.0, 0.0, 0.0)
    seed: int = 0
    jitter_inserts: bool = False
    checkpoint_every: int = 0         # PLY checkpoints every N iterations
    regenerate_gt_every: int = 0      # 0: pseudo-GT frozen after first build
    densify_every: int = 0            # 0: no densify/prune during editing

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.coarse_iters <= 0 or self.refine_iters <= 0:
            raise ConfigError("iteration counts must be positive")
        if not 0.0 < self.t0 < 1.0:
            raise ConfigError("t0 must lie in (0, 1)")
        if not 0.0 <= self.mask_threshold <= 1.0:
            raise ConfigError("mask threshold must lie in [0, 1]")
        if self.coarse_sampler is None:
            self.coarse_sampler = PoseSamplerConfig(look_at=self.box.center)
        if self.refine_sampler is None:
            self.refine_sampler = PoseSamplerConfig(look_at=self.box.center)


def scene_extent(scene):
    if len(scene) == 0:
        return 1.0
    centroid = scene.positions.mean(axis=0)
    return max(float(np.linalg.norm(scene.positions - centroid, axis=1).max()), 1e-6)


def _guard_editable(edit_set):
    if edit_set.editable_indices.size == 0:
        raise ValidationError("edit set is empty")
    if not edit_set.trainable.any():
        raise ValidationError("no trainable attributes for this edit")


def coarse_edit(scene, edit_set, cfg, provider, rng=None, report=None, checkpoint_cb=None):
    """Score-guided optimization of the editable subset; mutates `scene`.

    Returns (scene, edit_set); they differ from the inputs only when
    densification is enabled.
    """
    _guard_editable(edit_set)
    rng = rng or np.random.default_rng(cfg.seed)
    report = report if report is not None else []
    K = cfg.intrinsics
    use_local = edit_set.task != "stylize"
    opt = SceneAdam(scene, edit_set, cfg.optimizer, position_lr_scale=scene_extent(scene))

    for i in range(cfg.coarse_iters):
        start = time.perf_counter()
        pose = sample_random_pose(cfg.coarse_sampler, rng)
        editable = edit_set.editable_indices
        try:
            full = render(scene, pose, K, background=cfg.background)
            req_global = GuidanceRequest(image=full.rgb, pose=pose, intrinsics=K,
                                         prompt_kind="global")
            grad_global = provider.sds_gradient(req_global)

            if use_local:
                fg = render(scene, pose, K, subset=editable)
                req_local = GuidanceRequest(image=fg.rgb, pose=pose, intrinsics=K,
                                            prompt_kind="local")
                grad_local = provider.sds_gradient(req_local)
                grads = render_backward(scene, pose, K, cfg.gamma * grad_global,
                                        background=cfg.background)
                grads = grads + render_backward(scene, pose, K,
                                                (1.0 - cfg.gamma) * grad_local,
                                                subset=editable)
                energy = cfg.gamma * float(np.mean(grad_global ** 2)) \
                    + (1.0 - cfg.gamma) * float(np.mean(grad_local ** 2))
            else:
                grads = render_backward(scene, pose, K, grad_global,
                                        background=cfg.background)
                energy = float(np.mean(grad_global ** 2))
        except GuidanceError as exc:
            raise PipelineAbort(f"guidance failed at coarse iteration {i}: {exc}",
                                checkpoint=scene.copy(), cause=exc) from exc

        opt.step(scene, grads)
        report.append({"stage": "coarse", "iter": i, "loss": energy,
                       "wall_ms": 1000.0 * (time.perf_counter() - start)})
        if checkpoint_cb is not None:
            checkpoint_cb("coarse", i, scene)

        if cfg.densify_every and (i + 1) % cfg.densify_every == 0 and i + 1 < cfg.coarse_iters:
            scene, edit_set = densify_and_prune(scene, edit_set, grads)
            opt = SceneAdam(scene, edit_set, cfg.optimizer,
                            position_lr_scale=scene_extent(scene))

    return scene, edit_set


def build_pseudo_gt(scene, edit_set, cfg, provider):
    """One pseudo ground-truth image per refinement grid pose."""
    K = cfg.intrinsics
    editable = edit_set.editable_indices
    fixed = edit_set.fixed_indices(scene)
    poses = sample_refinement_grid(cfg.refine_sampler)
    cached = []
    for pose in poses:
        full = render(scene, pose, K, background=cfg.background)
        bg_only = render(scene, pose, K, subset=fixed, background=cfg.background)
        inst = render_instance_mask(scene, pose, K, subset=editable,
                                    threshold=cfg.mask_threshold)
        denoised = provider.denoise(full.rgb, cfg.t0, "global", pose, K)
        cached.append(compose_pseudo_gt(denoised, bg_only.rgb, inst))
    return poses, cached


def refine(scene, edit_set, cfg, provider, report=None, checkpoint_cb=None):
    """Pixel-level reconstruction against cached pseudo-GT views; mutates `scene`."""
    _guard_editable(edit_set)
    report = report if report is not None else []
    K = cfg.intrinsics
    opt = SceneAdam(scene, edit_set, cfg.optimizer, position_lr_scale=scene_extent(scene))

    try:
        poses, targets = build_pseudo_gt(scene, edit_set, cfg, provider)
    except GuidanceError as exc:
        raise PipelineAbort(f"guidance failed building pseudo-GT: {exc}",
                            checkpoint=scene.copy(), cause=exc) from exc

    n_px = K.height * K.width * 3
    for i in range(cfg.refine_iters):
        start = time.perf_counter()
        if cfg.regenerate_gt_every and i and i % cfg.regenerate_gt_every == 0:
            try:
                poses, targets = build_pseudo_gt(scene, edit_set, cfg, provider)
            except GuidanceError as exc:
                raise PipelineAbort(f"guidance failed at refine iteration {i}: {exc}",
                                    checkpoint=scene.copy(), cause=exc) from exc
        k = i % len(poses)
        out = render(scene, poses[k], K, background=cfg.background)
        loss = mse(out.rgb, targets[k])
        grad_rgb = (2.0 / n_px) * (out.rgb - targets[k])
        grads = render_backward(scene, poses[k], K, grad_rgb, background=cfg.background)
        opt.step(scene, grads)
        report.append({"stage": "refine", "iter": i, "loss": loss,
                       "wall_ms": 1000.0 * (time.perf_counter() - start)})
        if checkpoint_cb is not None:
            checkpoint_cb("refine", i, scene)
    return scene


def run(cfg, scene_path, out_path, provider):
    """Full edit: load, select, coarse, refine, save. Returns the report."""
    t_start = time.perf_counter()
    scene = load_ply(scene_path)
    rng = np.random.default_rng(cfg.seed)
    scene, edit_set = build_edit_set(scene, cfg.box, cfg.task, rng=rng,
                                     jitter=cfg.jitter_inserts)
    _guard_editable(edit_set)

    entries = []
    out_path = str(out_path)

    def checkpoint_cb(stage, i, current):
        if cfg.checkpoint_every and (i + 1) % cfg.checkpoint_every == 0:
            save_ply(current, f"{out_path}.{stage}-{i + 1:05d}.ply")

    try:
        scene, edit_set = coarse_edit(scene, edit_set, cfg, provider, rng=rng,
                                      report=entries, checkpoint_cb=checkpoint_cb)
        scene = refine(scene, edit_set, cfg, provider, report=entries,
                       checkpoint_cb=checkpoint_cb)
    except PipelineAbort as abort:
        if abort.checkpoint is not None:
            save_ply(abort.checkpoint, out_path + ".checkpoint.ply")
        raise

    save_ply(scene, out_path)
    grid_size = len(sample_refinement_grid(cfg.refine_sampler))
    report = {
        "task": cfg.task,
        "seed": cfg.seed,
        "gamma": cfg.gamma,
        "editable_count": int(edit_set.editable_indices.size),
        "scene_count": len(scene),
        "coarse_iters": cfg.coarse_iters,
        "refine_iters": cfg.refine_iters,
        "pose_counts": {"coarse_random": cfg.coarse_iters, "refine_grid": grid_size},
        "total_wall_ms": 1000.0 * (time.perf_counter() - t_start),
        "entries": entries,
    }
    with open(out_path + ".report.json", "w") as f:
        json.dump(report, f, indent=2)
    return report
