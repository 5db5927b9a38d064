"""End-to-end: the editor pipeline drives this service over real HTTP."""

import threading
import time

import numpy as np
import pytest
import uvicorn
from click.testing import CliRunner

from personalization_service.cli import main as service_cli
from personalization_service.personalize import personalize_scene
from personalization_service.server import create_app
from personalization_service.state import ModelState

from test_server import blob_views_module, module_job  # noqa: F401


@pytest.fixture(scope="module")
def live_server(blob_views_module, module_job):  # noqa: F811
    state = ModelState(seed=0)
    personalize_scene(state, module_job, seed=0)
    app = create_app(state, seed=0)
    config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    for _ in range(100):
        if server.started:
            break
        time.sleep(0.05)
    else:
        raise RuntimeError("server did not start")
    port = server.servers[0].sockets[0].getsockname()[1]
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=5)


def test_pipeline_runs_against_live_service(live_server):
    from gsedit.fixtures import build_blob10
    from gsedit.guidance import RemoteGuidanceProvider
    from gsedit.pipeline import EditConfig, coarse_edit
    from gsedit.scene import build_edit_set

    fx = build_blob10()
    provider = RemoteGuidanceProvider(live_server, timeout=30)
    scene, edit_set = build_edit_set(fx.scene.copy(), fx.box, "insert")
    before = scene.sh_coeffs[edit_set.editable_indices].copy()
    cfg = EditConfig(task="insert", box=fx.box, prompts=fx.prompts,
                     intrinsics=fx.intrinsics, coarse_iters=5, refine_iters=1,
                     coarse_sampler=fx.sampler, refine_sampler=fx.sampler, seed=0)
    scene, edit_set = coarse_edit(scene, edit_set, cfg, provider)
    after = scene.sh_coeffs[edit_set.editable_indices]
    assert not np.array_equal(before, after)
    assert len(provider.history) == 10  # global + local per iteration
    assert all(h["t_used"] is not None for h in provider.history)


def test_refine_against_live_service(live_server):
    from gsedit.camera import PoseSamplerConfig
    from gsedit.fixtures import build_blob10
    from gsedit.guidance import RemoteGuidanceProvider
    from gsedit.pipeline import EditConfig, refine
    from gsedit.scene import build_edit_set

    fx = build_blob10()
    provider = RemoteGuidanceProvider(live_server, timeout=30)
    scene, edit_set = build_edit_set(fx.scene.copy(), fx.box, "insert")
    sampler = PoseSamplerConfig(look_at=fx.box.center, radius_range=(2.4, 3.2),
                                elevation_range_deg=(0.0, 0.0),
                                azimuth_range_deg=(0.0, 90.0), grid_step_deg=90.0)
    cfg = EditConfig(task="insert", box=fx.box, prompts=fx.prompts,
                     intrinsics=fx.intrinsics, coarse_iters=1, refine_iters=4,
                     coarse_sampler=fx.sampler, refine_sampler=sampler, seed=0)
    refine(scene, edit_set, cfg, provider)
    denoises = [h for h in provider.history if h["kind"] == "denoise"]
    assert len(denoises) == 2  # one pseudo-GT per grid pose


def test_editor_cli_uses_provider_url_env(live_server, tmp_path, monkeypatch):
    from gsedit.camera import PoseSamplerConfig
    from gsedit.cli import main as gsedit_cli
    from gsedit.config import config_to_toml
    from gsedit.fixtures import build_blob10
    from gsedit.pipeline import EditConfig
    from gsedit.scene import save_ply

    fx = build_blob10()
    sampler = PoseSamplerConfig(look_at=fx.box.center, radius_range=(2.4, 3.2),
                                elevation_range_deg=(0.0, 0.0),
                                azimuth_range_deg=(0.0, 90.0), grid_step_deg=90.0)
    cfg = EditConfig(task="insert", box=fx.box, prompts=fx.prompts,
                     intrinsics=fx.intrinsics, coarse_iters=3, refine_iters=2,
                     coarse_sampler=fx.sampler, refine_sampler=sampler, seed=0)
    (tmp_path / "edit.toml").write_text(config_to_toml(cfg))
    save_ply(fx.scene, tmp_path / "scene.ply")

    monkeypatch.setenv("GSEDIT_PROVIDER_URL", live_server)
    runner = CliRunner()
    result = runner.invoke(gsedit_cli, [
        "edit", "--config", str(tmp_path / "edit.toml"),
        "--scene", str(tmp_path / "scene.ply"),
        "--out", str(tmp_path / "out"), "--provider", "mock:blob-10",
    ])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "out" / "edited.ply").exists()


def test_train_cli_writes_checkpoint(job_dir, tmp_path):
    runner = CliRunner()
    result = runner.invoke(service_cli, [
        "train", "--job", str(job_dir / "job.json"), "--out", str(tmp_path / "ckpt"),
        "--seed", "0",
    ])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "ckpt" / "weights.pt").exists()
    loaded = ModelState.load(tmp_path / "ckpt")
    assert loaded.scene_trained and loaded.reference_trained
    assert loaded.lora_layers
