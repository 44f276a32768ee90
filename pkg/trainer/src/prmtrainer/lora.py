"""Minimal low-rank adapters for every linear layer of a causal LM."""

from __future__ import annotations

import torch
from torch import nn


class LoRALinear(nn.Module):
    """Frozen base linear plus a trainable low-rank update."""

    def __init__(self, base: nn.Linear, rank: int, alpha: float):
        super().__init__()
        self.base = base
        for param in self.base.parameters():
            param.requires_grad_(False)
        self.lora_a = nn.Parameter(torch.empty(rank, base.in_features))
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank))
        nn.init.normal_(self.lora_a, std=1.0 / rank)
        self.scaling = alpha / rank

    def forward(self, x):
        update = nn.functional.linear(nn.functional.linear(x, self.lora_a), self.lora_b)
        return self.base(x) + update * self.scaling


def apply_lora(model: nn.Module, rank: int, alpha: float) -> list[nn.Parameter]:
    """Wrap every nn.Linear in the model; returns the adapter parameters."""
    for param in model.parameters():
        param.requires_grad_(False)
    replaced = []
    for module in list(model.modules()):
        for name, child in list(module.named_children()):
            if isinstance(child, nn.Linear):
                wrapper = LoRALinear(child, rank, alpha)
                setattr(module, name, wrapper)
                replaced.append(wrapper)
    params = []
    for wrapper in replaced:
        params.extend([wrapper.lora_a, wrapper.lora_b])
    return params


def adapter_state_dict(model: nn.Module) -> dict:
    return {
        name: tensor
        for name, tensor in model.state_dict().items()
        if "lora_a" in name or "lora_b" in name
    }
