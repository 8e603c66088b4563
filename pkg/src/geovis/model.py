"""The assembled network: geometric + visual streams, fusion, entity graph, head."""

from __future__ import annotations

from typing import Optional

import torch
import torch.nn as nn

from .batch import Batch
from .config import RunConfig
from .errors import ConfigError
from .fusion import Fusion
from .geometric import GeometricStream
from .head import Noise, TemporalHead
from .ieg import InterdependentEntityGraph
from .visual import VisualStream

# parameter groups reported by the gradient checker, by name prefix
PARAM_GROUPS = {
    "gat": ("geometric.graph.",),
    "temporal_mix": ("geometric.temporal.",),
    "geo_mlp": ("geometric.project.",),
    "visual_mlp": ("visual.",),
    "fusion_attention": ("fusion.attention.",),
    "fusion_merge": ("fusion.merge.",),
    "ieg_w3": ("ieg.",),
    "boundary": ("head.boundary.",),
    "gru": ("head.gru.",),
    "classifiers": ("head.cls_human.", "head.cls_object."),
}


def param_group(name: str) -> str:
    for group, prefixes in PARAM_GROUPS.items():
        if name.startswith(prefixes):
            return group
    raise KeyError(name)


class GeoVisGNN(nn.Module):
    def __init__(self, cfg: RunConfig):
        super().__init__()
        m = cfg.model
        if m.architecture == "top_down":
            raise ConfigError("the top-down architecture is only a configuration stub and cannot be built")
        missing = [k for k in ("n_keypoints", "visual_dim", "max_humans", "max_objects", "n_sub_activities")
                   if getattr(m, k) is None]
        if missing:
            raise ConfigError(f"model config lacks dataset-derived fields: {missing}")
        self.cfg = cfg
        self.geometric = GeometricStream(m.n_keypoints, m.c1, m.c2, cfg.ablation.use_gat, m.heads, m.leaky_slope,
                                         m.include_self_in_sum, m.gat_version, m.temporal_mode)
        self.visual = VisualStream(m.visual_dim, m.c2)
        self.fusion = Fusion(m.c2, m.c3, m.max_humans, m.max_objects, cfg.fusion.variant, cfg.fusion.gap_mode,
                             cfg.fusion.reduction, use_attention=cfg.ablation.use_caf)
        self.ieg = None
        if cfg.ablation.use_ieg:
            self.ieg = InterdependentEntityGraph(m.c3, cfg.ieg.lam, cfg.ieg.gap_mode, cfg.ieg.attn_axis,
                                                 cfg.ieg.zero_neighbor_context)
        self.head = TemporalHead(m.c3, m.hidden_size, m.n_sub_activities, m.n_affordances or 0,
                                 cfg.head.boundary_mode)

    def encode(self, batch: Batch):
        present = batch.present & batch.frame_mask[:, :, None]
        ge, _ = self.geometric(batch.geo, batch.kp_mask)
        ve = self.visual(batch.visual, present)
        fused = self.fusion(ge, ve, present, batch.frame_mask)
        if self.ieg is None:
            return fused, None
        refined, attn = self.ieg(fused, present)
        return refined, attn

    def forward(self, batch: Batch, temperature: float = 1.0, noise: Noise = None, frozen_boundary: bool = False,
                hard: Optional[bool] = None) -> dict:
        present = batch.present & batch.frame_mask[:, :, None]
        refined, attn = self.encode(batch)
        hard = self.cfg.gumbel.hard if hard is None else hard
        out = self.head(refined, present, batch.lengths, temperature, hard, noise, frozen_boundary)
        out["refined"] = refined
        out["neighbor_attn"] = attn
        return out

    def boundary_parameters(self):
        return list(self.head.boundary.parameters())


def build_model(cfg: RunConfig, seed: Optional[int] = None, dtype: torch.dtype = torch.float32) -> GeoVisGNN:
    cfg.validate()
    torch.manual_seed(cfg.train.seed if seed is None else seed)
    return GeoVisGNN(cfg).to(dtype)
