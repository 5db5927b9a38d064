import pytest
import torch

from personalization_service.lora import set_lora_enabled
from personalization_service.model import Denoiser, tokenize
from personalization_service.state import ModelState


def test_tokenize_is_stable_and_padded():
    ids1, words = tokenize("a sks tabletop scene")
    ids2, _ = tokenize("a sks tabletop scene")
    assert torch.equal(ids1, ids2)
    assert len(ids1) == 16
    assert words == ["a", "sks", "tabletop", "scene"]
    assert (ids1[4:] == 0).all()


def test_special_tokens_get_distinct_ids():
    ids, words = tokenize("sks olx ornament")
    assert len({int(ids[0]), int(ids[1]), int(ids[2])}) == 3
    assert (ids[:3] > 0).all()


def test_pose_conditioning_changes_output():
    torch.manual_seed(4)
    model = Denoiser()
    # the output head starts at zero; give it weights so conditioning shows
    torch.nn.init.normal_(model.conv_out.weight, std=0.1)
    ids, _ = tokenize("a sks scene")
    z = torch.randn(1, 12, 16, 16)
    p1 = torch.tensor([[1.0, 0, 0, 0, 0, 0, 0]])
    p2 = torch.tensor([[0.0, 1.0, 0, 0, 1.0, 2.0, 3.0]])
    out1 = model(z, 0.4, p1, ids)
    out2 = model(z, 0.4, p2, ids)
    assert not torch.allclose(out1, out2)


def test_attention_extraction_normalized():
    torch.manual_seed(5)
    model = Denoiser()
    ids, words = tokenize("a sks scene with a olx ornament")
    z = torch.randn(1, 12, 16, 16)
    model(z, 0.5, torch.tensor([[1.0, 0, 0, 0, 0, 0, 0]]), ids)
    amap = model.attention_for_token(words, "ornament", (16, 16)).detach()
    assert amap.shape == (16, 16)
    assert float(amap.min()) >= 0.0 and float(amap.max()) <= 1.0 + 1e-6
    with pytest.raises(KeyError):
        model.attention_for_token(words, "missing", (16, 16))


def test_lora_zero_init_is_identity():
    state = ModelState(seed=7)
    ids, _ = tokenize("a sks scene")
    z = torch.randn(1, 12, 16, 16)
    pose = torch.tensor([[1.0, 0, 0, 0, 0, 0, 0]])
    with torch.no_grad():
        before = state.model(z, 0.3, pose, ids).clone()
    state.ensure_lora()
    with torch.no_grad():
        after = state.model(z, 0.3, pose, ids)
    assert torch.equal(before, after)


def test_lora_toggle(tmp_path):
    state = ModelState(seed=8)
    layers = state.ensure_lora()
    with torch.no_grad():
        torch.nn.init.normal_(state.model.conv_out.weight, std=0.1)
        for layer in layers:
            layer.up.normal_(std=0.5)
    ids, _ = tokenize("a sks scene")
    z = torch.randn(1, 12, 16, 16)
    pose = torch.tensor([[1.0, 0, 0, 0, 0, 0, 0]])
    with torch.no_grad():
        on = state.model(z, 0.3, pose, ids).clone()
        set_lora_enabled(state.model, False)
        off = state.model(z, 0.3, pose, ids).clone()
        set_lora_enabled(state.model, True)
    assert not torch.allclose(on, off)


def test_state_save_load_round_trip(tmp_path):
    state = ModelState(seed=9)
    state.ensure_lora()
    state.prompts = {"global_prompt": "a sks x with olx y", "local_prompt": "olx y",
                     "reference_prompt": "olx y", "scene_prompt": "a sks x",
                     "object_keyword": "y", "scene_token": "sks", "object_token": "olx"}
    state.scene_trained = True
    state.save(tmp_path / "ckpt")
    loaded = ModelState.load(tmp_path / "ckpt")
    assert loaded.base_checksum() == state.base_checksum()
    assert loaded.prompts == state.prompts
    assert loaded.scene_trained


def test_checksum_ignores_lora_but_sees_base():
    state = ModelState(seed=10)
    state.ensure_lora()
    base = state.base_checksum()
    with torch.no_grad():
        for layer in state.named_lora():
            layer.up.add_(1.0)
    assert state.base_checksum() == base
    with torch.no_grad():
        state.model.conv_in.weight.add_(1e-3)
    assert state.base_checksum() != base
