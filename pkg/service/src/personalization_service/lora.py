"""Minimal low-rank adapters for linear layers.

The wrapped base weight stays frozen; only the rank-r factors train. With
`enabled = False` (or factors at their zero init) the layer reproduces the
base output exactly, which is what the freeze-contract tests rely on.
"""

import torch
from torch import nn


class LoRALinear(nn.Module):
    def __init__(self, base: nn.Linear, rank=4, alpha=1.0):
        super().__init__()
        self.base = base
        self.rank = rank
        self.scaling = alpha / rank
        self.down = nn.Parameter(torch.zeros(rank, base.in_features))
        self.up = nn.Parameter(torch.zeros(base.out_features, rank))
        nn.init.normal_(self.down, std=0.02)
        # `up` starts at zero so the adapter is initially a no-op
        self.enabled = True

    def forward(self, x):
        out = self.base(x)
        if self.enabled:
            out = out + self.scaling * (x @ self.down.T @ self.up.T)
        return out


def inject_lora(module, rank=4, alpha=1.0):
    """Replace every nn.Linear marked `lora_target` with a LoRA wrapper."""
    wrapped = []
    for name, child in list(module.named_children()):
        if isinstance(child, nn.Linear) and getattr(child, "lora_target", False):
            lora = LoRALinear(child, rank=rank, alpha=alpha)
            setattr(module, name, lora)
            wrapped.append(lora)
        else:
            wrapped.extend(inject_lora(child, rank=rank, alpha=alpha))
    return wrapped


def set_lora_enabled(module, enabled):
    for m in module.modules():
        if isinstance(m, LoRALinear):
            m.enabled = enabled


def lora_parameters(module):
    for m in module.modules():
        if isinstance(m, LoRALinear):
            yield m.down
            yield m.up
