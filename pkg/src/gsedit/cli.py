"""Command-line entry points.

Exit codes: 0 success, 2 configuration or usage problems, 3 runtime or
provider failures. GSEDIT_PROVIDER_URL overrides the --provider selection
with remote:<url>.
"""

import json
import os
import sys
from pathlib import Path

import click
import numpy as np
from PIL import Image

from . import fixtures as fixture_mod
from .camera import poses_to_json, sample_refinement_grid
from .config import config_to_toml, load_config
from .errors import ConfigError, GseditError, PlyFormatError, ValidationError
from .guidance import provider_from_spec
from .pipeline import run as run_pipeline
from .renderer import render
from .scene import load_ply, save_ply, select_in_box

CONFIG_ERRORS = (ConfigError, ValidationError, PlyFormatError)


def write_png(rgb, path):
    arr = (np.clip(rgb, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def _resolve_provider(spec, seed):
    url = os.environ.get("GSEDIT_PROVIDER_URL")
    if url:
        return provider_from_spec(f"remote:{url}")
    if spec.startswith("mock:"):
        return provider_from_spec(spec, seed=seed)
    return provider_from_spec(spec)


def _fail(code, message):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
def main():
    """Local text+image guided editing of Gaussian-splat scenes."""


@main.command("edit")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--scene", "scene_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--provider", default="mock:blob-10", show_default=True,
              help="mock:<fixture> or remote:<url>")
@click.option("--seed", type=int, default=None, help="override the config seed")
@click.option("--gamma", type=float, default=None, help="override the config gamma")
@click.option("--checkpoint-every", type=int, default=None)
def cmd_edit(config_path, scene_path, out_dir, provider, seed, gamma, checkpoint_every):
    """Run the full editing pipeline and write PLY, report and turntables."""
    if not Path(scene_path).exists():
        _fail(2, f"scene not found: {scene_path}")
    if not Path(config_path).exists():
        _fail(2, f"config not found: {config_path}")
    try:
        cfg = load_config(config_path)
        if seed is not None:
            cfg.seed = seed
        if gamma is not None:
            cfg.gamma = gamma
        if checkpoint_every is not None:
            cfg.checkpoint_every = checkpoint_every
        cfg.__post_init__()  # re-validate overrides
    except CONFIG_ERRORS as exc:
        _fail(2, str(exc))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    out_ply = out / "edited.ply"
    try:
        prov = _resolve_provider(provider, cfg.seed)
        report = run_pipeline(cfg, scene_path, out_ply, prov)
        edited = load_ply(out_ply)
        for i, pose in enumerate(sample_refinement_grid(cfg.refine_sampler)):
            view = render(edited, pose, cfg.intrinsics, background=cfg.background)
            write_png(view.rgb, out / f"turntable_{i:03d}.png")
    except CONFIG_ERRORS as exc:
        _fail(2, str(exc))
    except GseditError as exc:
        _fail(3, str(exc))
    click.echo(f"edited scene: {out_ply}")
    click.echo(f"report: {out_ply}.report.json ({len(report['entries'])} entries)")


@main.command("render")
@click.option("--scene", "scene_path", required=True, type=click.Path())
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--subset", type=click.Choice(["all", "editable", "fixed"]), default="all",
              show_default=True)
def cmd_render(scene_path, config_path, out_dir, subset):
    """Render the refinement grid poses of a scene to PNG files."""
    if not Path(scene_path).exists():
        _fail(2, f"scene not found: {scene_path}")
    try:
        cfg = load_config(config_path)
        scene = load_ply(scene_path)
    except CONFIG_ERRORS as exc:
        _fail(2, str(exc))

    # subset selection is purely spatial here: "editable" means inside the
    # config box, "fixed" its complement; an empty box selection makes
    # subset=fixed identical to the full render
    indices = None
    if subset != "all":
        in_box = select_in_box(scene, cfg.box)
        indices = in_box if subset == "editable" else np.setdiff1d(np.arange(len(scene)), in_box)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        for i, pose in enumerate(sample_refinement_grid(cfg.refine_sampler)):
            view = render(scene, pose, cfg.intrinsics, subset=indices,
                          background=cfg.background)
            write_png(view.rgb, out / f"view_{i:03d}.png")
    except GseditError as exc:
        _fail(3, str(exc))
    click.echo(f"wrote {i + 1} views to {out}")


@main.command("poses")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def cmd_poses(config_path, out_path):
    """Export the refinement pose grid as JSON for the guidance service."""
    try:
        cfg = load_config(config_path)
        poses = sample_refinement_grid(cfg.refine_sampler)
    except CONFIG_ERRORS as exc:
        _fail(2, str(exc))
    Path(out_path).write_text(poses_to_json(poses, cfg.intrinsics))
    click.echo(f"wrote {len(poses)} poses to {out_path}")


@main.command("fixture")
@click.option("--name", required=True, type=click.Choice(sorted(fixture_mod.FIXTURES)))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--views/--no-views", default=True, help="also render target views")
def cmd_fixture(name, out_dir, views):
    """Write a built-in fixture: scene, mock targets, starter config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fx = fixture_mod.FIXTURES[name]()
    save_ply(fx.scene, out / f"{name}.ply")
    save_ply(fx.target_full, out / f"{name}_target_full.ply")
    save_ply(fx.target_foreground, out / f"{name}_target_fg.ply")

    from .pipeline import EditConfig

    cfg = EditConfig(task="insert", box=fx.box, prompts=fx.prompts,
                     intrinsics=fx.intrinsics, coarse_sampler=fx.sampler,
                     refine_sampler=fx.sampler)
    (out / f"{name}.toml").write_text(config_to_toml(cfg))

    if views:
        for i, pose in enumerate(sample_refinement_grid(fx.sampler)):
            view = render(fx.target_full, pose, fx.intrinsics)
            write_png(view.rgb, out / f"{name}_target_{i:03d}.png")
    click.echo(f"fixture {name} written to {out}")


if __name__ == "__main__":
    main()
