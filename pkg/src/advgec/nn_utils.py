"""Layers whose randomness comes from a model-owned ``torch.Generator``.

``torch.nn.Dropout`` draws from the global RNG, which would make training
trajectories depend on unrelated code. Everything here draws from an
explicit generator that is saved with the model.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .tokenizer import BOS, EOS, PAD, UNK

DTYPES = {"float32": torch.float32, "float64": torch.float64}


class RngBox:
    """Mutable holder so submodules share one generator."""

    def __init__(self, seed: int = 0):
        self.gen = torch.Generator()
        self.gen.manual_seed(seed)

    def __deepcopy__(self, memo):
        box = RngBox()
        box.gen.set_state(self.gen.get_state())
        memo[id(self)] = box
        return box


class Dropout(nn.Module):
    def __init__(self, p: float, box: RngBox):
        super().__init__()
        self.p = p
        self.box = box

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not self.training or self.p <= 0:
            return x
        keep = torch.rand(x.shape, generator=self.box.gen, dtype=x.dtype) >= self.p
        return x * keep / (1.0 - self.p)


def word_dropout(ids: torch.Tensor, p: float, box: RngBox, training: bool) -> torch.Tensor:
    """Replace ordinary tokens by UNK with probability ``p``."""
    if not training or p <= 0:
        return ids
    special = (ids == PAD) | (ids == BOS) | (ids == EOS)
    hit = (torch.rand(ids.shape, generator=box.gen) < p) & ~special
    return ids.masked_fill(hit, UNK)


def sinusoidal_positions(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : dim // 2]
    return pe.to(dtype)


def pad_batch(seqs, pad: int = PAD) -> torch.Tensor:
    width = max((len(s) for s in seqs), default=0)
    out = torch.full((len(seqs), max(width, 1)), pad, dtype=torch.long)
    for i, s in enumerate(seqs):
        if len(s):
            out[i, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
    return out


def make_optimizer(name: str, params, lr: float):
    if name == "sgd":
        return torch.optim.SGD(params, lr=lr)
    if name == "adam":
        return torch.optim.Adam(params, lr=lr)
    raise ValueError(f"unknown optimizer {name!r}")
