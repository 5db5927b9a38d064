"""Edit-config files: TOML (preferred) or the same structure as JSON."""

import json

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

import numpy as np

from .camera import Intrinsics, PoseSamplerConfig
from .errors import ConfigError
from .guidance import PromptSet
from .optim import AdamParams
from .pipeline import EditConfig, default_intrinsics
from .scene import BoundingBox3D


def _sampler_from(d, box_center):
    if d is None:
        return PoseSamplerConfig(look_at=box_center)
    return PoseSamplerConfig(
        look_at=np.asarray(d.get("look_at", box_center)),
        radius_range=tuple(d.get("radius_range", (2.0, 4.0))),
        elevation_range_deg=tuple(d.get("elevation_range_deg", (-30.0, 60.0))),
        azimuth_range_deg=tuple(d.get("azimuth_range_deg", (0.0, 360.0))),
        grid_step_deg=float(d.get("grid_step_deg", 30.0)),
    )


def config_from_dict(doc):
    try:
        box = BoundingBox3D(
            center=doc["box"]["center"],
            half_extents=doc["box"]["half_extents"],
            orientation=doc["box"].get("orientation", [1.0, 0.0, 0.0, 0.0]),
        )
        prompts = PromptSet(**doc["prompts"])
        intr = (Intrinsics.from_dict(doc["intrinsics"]) if "intrinsics" in doc
                else default_intrinsics())
        opt = AdamParams(**doc.get("optimizer", {}))
        return EditConfig(
            task=doc["task"],
            box=box,
            prompts=prompts,
            gamma=float(doc.get("gamma", 0.5)),
            coarse_iters=int(doc.get("coarse_iters", 1000)),
            refine_iters=int(doc.get("refine_iters", 3000)),
            t0=float(doc.get("t0", 0.05)),
            intrinsics=intr,
            optimizer=opt,
            coarse_sampler=_sampler_from(doc.get("coarse_sampler"), box.center),
            refine_sampler=_sampler_from(doc.get("refine_sampler"), box.center),
            mask_threshold=float(doc.get("mask_threshold", 0.5)),
            background=tuple(doc.get("background", (0.0, 0.0, 0.0))),
            seed=int(doc.get("seed", 0)),
            jitter_inserts=bool(doc.get("jitter_inserts", False)),
            checkpoint_every=int(doc.get("checkpoint_every", 0)),
            regenerate_gt_every=int(doc.get("regenerate_gt_every", 0)),
            densify_every=int(doc.get("densify_every", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad edit config: {exc}") from exc


def load_config(path):
    path = str(path)
    if path.endswith(".json"):
        with open(path) as f:
            doc = json.load(f)
    else:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    return config_from_dict(doc)


def config_to_toml(cfg):
    """Serialize an EditConfig for `gsedit fixture` starter files."""
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return json.dumps(v)
        if isinstance(v, (list, tuple, np.ndarray)):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        return repr(float(v)) if isinstance(v, float) else repr(v)

    lines = [
        f"task = {fmt(cfg.task)}",
        f"gamma = {fmt(cfg.gamma)}",
        f"coarse_iters = {cfg.coarse_iters}",
        f"refine_iters = {cfg.refine_iters}",
        f"t0 = {fmt(cfg.t0)}",
        f"mask_threshold = {fmt(cfg.mask_threshold)}",
        f"seed = {cfg.seed}",
        f"background = {fmt(cfg.background)}",
        f"jitter_inserts = {fmt(cfg.jitter_inserts)}",
        f"checkpoint_every = {cfg.checkpoint_every}",
        "",
        "[box]",
        f"center = {fmt(cfg.box.center)}",
        f"half_extents = {fmt(cfg.box.half_extents)}",
        f"orientation = {fmt(cfg.box.orientation)}",
        "",
        "[prompts]",
    ]
    for key, val in cfg.prompts.to_dict().items():
        lines.append(f"{key} = {fmt(val)}")
    lines += ["", "[intrinsics]"]
    for key, val in cfg.intrinsics.to_dict().items():
        lines.append(f"{key} = {fmt(val)}")
    for name, sampler in (("coarse_sampler", cfg.coarse_sampler),
                          ("refine_sampler", cfg.refine_sampler)):
        lines += ["", f"[{name}]",
                  f"look_at = {fmt(sampler.look_at)}",
                  f"radius_range = {fmt(sampler.radius_range)}",
                  f"elevation_range_deg = {fmt(sampler.elevation_range_deg)}",
                  f"azimuth_range_deg = {fmt(sampler.azimuth_range_deg)}",
                  f"grid_step_deg = {fmt(sampler.grid_step_deg)}"]
    return "\n".join(lines) + "\n"
