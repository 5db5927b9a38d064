"""Model state: base denoiser, adapters, token bindings, persistence."""

import hashlib
import json
import os

import torch

from .latent import LatentCodec
from .lora import LoRALinear, inject_lora
from .model import Denoiser


def _is_lora_param(name):
    return name.endswith(".down") or name.endswith(".up")


class ModelState:
    def __init__(self, seed=0):
        torch.manual_seed(seed)
        self.model = Denoiser()
        self.codec = LatentCodec()
        self.prompts = None          # dict with the PromptSet fields
        self.lora_layers = []
        self.scene_trained = False
        self.reference_trained = False

    def ensure_lora(self, rank=4):
        if not self.lora_layers:
            self.lora_layers = inject_lora(self.model, rank=rank)
        return self.lora_layers

    def base_checksum(self):
        """SHA-256 over every non-adapter parameter, in name order.

        Adapter injection rewraps linears (weight -> base.weight); names are
        normalized so the checksum is stable across injection.
        """
        entries = []
        for name, p in self.model.named_parameters():
            if _is_lora_param(name):
                continue
            entries.append((name.replace(".base.", "."), p))
        digest = hashlib.sha256()
        for name, p in sorted(entries):
            digest.update(name.encode())
            digest.update(p.detach().cpu().numpy().astype("float32").tobytes())
        return digest.hexdigest()

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        torch.save(self.model.state_dict(), os.path.join(directory, "weights.pt"))
        meta = {
            "prompts": self.prompts,
            "has_lora": bool(self.lora_layers),
            "scene_trained": self.scene_trained,
            "reference_trained": self.reference_trained,
        }
        with open(os.path.join(directory, "state.json"), "w") as f:
            json.dump(meta, f, indent=2)

    @classmethod
    def load(cls, directory):
        with open(os.path.join(directory, "state.json")) as f:
            meta = json.load(f)
        state = cls()
        if meta["has_lora"]:
            state.ensure_lora()
        weights = torch.load(os.path.join(directory, "weights.pt"), weights_only=True)
        state.model.load_state_dict(weights)
        state.prompts = meta["prompts"]
        state.scene_trained = meta["scene_trained"]
        state.reference_trained = meta["reference_trained"]
        return state

    def lora_enabled(self, enabled):
        for layer in self.lora_layers:
            layer.enabled = enabled

    def assert_adapters_present(self):
        if not self.lora_layers:
            raise RuntimeError("reference personalization has not run")

    def named_lora(self):
        for m in self.model.modules():
            if isinstance(m, LoRALinear):
                yield m
