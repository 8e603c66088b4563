"""Channel-attention fusion of geometric and visual entity embeddings.

Both streams are stacked as ``(B, T, 2, E, C2)`` (stream, entity slot).
A fusion variant is a list of attention groups; each group gates a subset
of (stream, slot) blocks with one squeeze-excitation style attention:

* ``d``: one group over every stream and slot, entity-channel layout.
* ``c``: one group per stream (visual, geometric), entity-channel layout.
* ``b``: one group per entity kind (humans, objects), entity-channel layout.
* ``a``: one group per entity kind with the two streams concatenated along
  features; the attention is shared by all entities of the kind.

After gating, each entity's geometric and visual halves are concatenated
and mapped to ``C3``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigError

GEO, VIS = 0, 1


def reduced_width(channels: int, ratio: int = 16) -> int:
    return max(4, math.ceil(channels / ratio))


def time_mean(x: torch.Tensor, frame_mask: torch.Tensor) -> torch.Tensor:
    """Mean over axis 1 restricted to valid frames; x is (B, T, ...)."""
    w = frame_mask.to(x.dtype).reshape(*frame_mask.shape, *([1] * (x.dim() - 2)))
    return (x * w).sum(1) / w.sum(1).clamp_min(1.0)


class ChannelAttention(nn.Module):
    """A = sigmoid(W2 relu(W1 gap(x)))."""

    def __init__(self, channels: int, ratio: int = 16):
        super().__init__()
        self.channels = channels
        r = reduced_width(channels, ratio)
        self.w1 = nn.Linear(channels, r)
        self.w2 = nn.Linear(r, channels)

    def forward(self, descriptor: torch.Tensor) -> torch.Tensor:
        """descriptor: (B, C) pooled features -> (B, C) weights in (0, 1)."""
        if descriptor.shape[-1] != self.channels:
            raise ValueError(f"descriptor width {descriptor.shape[-1]} != {self.channels}")
        return torch.sigmoid(self.w2(torch.relu(self.w1(descriptor))))


def channel_attention(x: torch.Tensor, module: ChannelAttention, frame_mask: torch.Tensor | None = None) -> torch.Tensor:
    """Attention weights for a (B, T, C) stream pooled over time."""
    if frame_mask is None:
        frame_mask = torch.ones(x.shape[:2], dtype=torch.bool)
    return module(time_mean(x, frame_mask))


@dataclass(frozen=True)
class Group:
    name: str
    streams: tuple[int, ...]
    slots: tuple[int, ...]
    layout: str  # "entity" or "feature"


def attention_groups(variant: str, max_humans: int, max_objects: int) -> list[Group]:
    humans = tuple(range(max_humans))
    objects = tuple(range(max_humans, max_humans + max_objects))
    every = humans + objects
    if variant == "d":
        groups = [Group("all", (GEO, VIS), every, "entity")]
    elif variant == "c":
        groups = [Group("visual", (VIS,), every, "entity"), Group("geometric", (GEO,), every, "entity")]
    elif variant == "b":
        groups = [Group("human", (GEO, VIS), humans, "entity"), Group("object", (GEO, VIS), objects, "entity")]
    elif variant == "a":
        groups = [Group("human", (GEO, VIS), humans, "feature"), Group("object", (GEO, VIS), objects, "feature")]
    else:
        raise ConfigError(f"unknown fusion variant {variant!r}")
    return [g for g in groups if g.slots]


class Fusion(nn.Module):
    def __init__(self, c2: int, c3: int, max_humans: int, max_objects: int, variant: str = "d",
                 gap_mode: str = "time", ratio: int = 16, use_attention: bool = True):
        super().__init__()
        if gap_mode not in ("time", "time_entity"):
            raise ConfigError(f"unknown fusion gap mode {gap_mode!r}")
        self.c2 = c2
        self.variant = variant
        self.gap_mode = gap_mode
        self.use_attention = use_attention
        self.groups = attention_groups(variant, max_humans, max_objects)
        self.attention = nn.ModuleDict()
        if use_attention:
            for g in self.groups:
                self.attention[g.name] = ChannelAttention(self._descriptor_width(g), ratio)
        self.merge = nn.Linear(2 * c2, c3)

    def _descriptor_width(self, g: Group) -> int:
        if g.layout == "feature":
            return len(g.streams) * self.c2
        if self.gap_mode == "time_entity":
            return self.c2
        return len(g.streams) * len(g.slots) * self.c2

    def attention_weights(self, gv: torch.Tensor, present: torch.Tensor, frame_mask: torch.Tensor) -> torch.Tensor:
        """Per-(stream, slot, channel) gates shaped (B, 2, E, C2); ungated blocks get 1."""
        B, T, S, E, C = gv.shape
        A = gv.new_ones(B, S, E, C)
        for g in self.groups:
            streams = list(g.streams)
            slots = list(g.slots)
            x = gv[:, :, streams][:, :, :, slots]  # (B, T, s, n, C)
            pres = present[:, :, slots]  # (B, T, n)
            module = self.attention[g.name]
            if g.layout == "feature" or self.gap_mode == "time_entity":
                w = (pres & frame_mask[:, :, None]).to(x.dtype)  # (B, T, n)
                pooled = (x * w[:, :, None, :, None]).sum((1, 3)) / w.sum((1, 2)).clamp_min(1.0)[:, None, None]
                if g.layout == "feature":
                    a = module(pooled.reshape(B, -1)).reshape(B, len(streams), 1, C)
                else:
                    a = module(pooled.mean(1)).reshape(B, 1, 1, C)
                a = a.expand(B, len(streams), len(slots), C)
            else:
                a = channel_attention(x.reshape(B, T, -1), module, frame_mask).reshape(B, len(streams), len(slots), C)
            A[:, torch.tensor(streams)[:, None], torch.tensor(slots)[None, :]] = a
        return A

    def forward(self, ge: torch.Tensor, ve: torch.Tensor, present: torch.Tensor, frame_mask: torch.Tensor,
                return_attention: bool = False):
        """ge, ve: (B, T, E, C2); present: (B, T, E); frame_mask: (B, T) -> (B, T, E, C3)."""
        gv = torch.stack([ge, ve], dim=2)
        if self.use_attention:
            A = self.attention_weights(gv, present, frame_mask)
            gv = gv * A[:, None]
        else:
            A = None
        merged = torch.cat([gv[:, :, GEO], gv[:, :, VIS]], dim=-1)
        out = self.merge(merged) * present[..., None]
        return (out, A) if return_attention else out
