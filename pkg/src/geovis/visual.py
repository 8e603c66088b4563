"""Projection of precomputed per-entity appearance features."""

from __future__ import annotations

import torch
import torch.nn as nn

from .errors import DataError
from .geometric import MLP


class VisualStream(nn.Module):
    def __init__(self, visual_dim: int, c2: int):
        super().__init__()
        self.visual_dim = visual_dim
        self.mlp = MLP(visual_dim, c2, c2)

    def forward(self, visual: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """visual: (..., E, Dv), mask: (..., E) -> (..., E, C2) with masked entities zeroed."""
        if visual.shape[-1] != self.visual_dim:
            raise DataError(f"visual feature dim {visual.shape[-1]} != configured {self.visual_dim}")
        x = visual * mask[..., None]
        return self.mlp(x) * mask[..., None]
