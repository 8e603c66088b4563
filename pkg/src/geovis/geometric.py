"""Geometric stream: keypoint graph attention, temporal mixing, entity MLP.

Within a frame every valid keypoint of every entity is a node of one fully
connected graph. Masked keypoints neither send nor receive messages.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DataError


def masked_softmax(scores: torch.Tensor, mask: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Softmax restricted to ``mask``; masked entries and all-masked slices are exactly 0."""
    mask = mask.expand_as(scores)
    scores = scores.masked_fill(~mask, float("-inf"))
    any_valid = mask.any(dim, keepdim=True)
    scores = torch.where(any_valid, scores, torch.zeros_like(scores))
    return torch.softmax(scores, dim) * mask


def attention_scores(h: torch.Tensor, attn_vec: torch.Tensor, slope: float) -> torch.Tensor:
    """LeakyReLU(a^T [h_i || h_j]) for all node pairs; h is (..., N, C), result (..., N, N)."""
    C = h.shape[-1]
    src = h @ attn_vec[:C]
    dst = h @ attn_vec[C:]
    return F.leaky_relu(src[..., :, None] + dst[..., None, :], slope)


def attention_scores_v2(h: torch.Tensor, attn_vec: torch.Tensor, slope: float) -> torch.Tensor:
    """a^T LeakyReLU(h_i + h_j); memory grows as N^2 * C."""
    return F.leaky_relu(h[..., :, None, :] + h[..., None, :, :], slope) @ attn_vec


def gat_attention(h: torch.Tensor, mask: torch.Tensor, attn_vec: torch.Tensor, slope: float = 0.2,
                  version: str = "v1") -> torch.Tensor:
    """Row-stochastic attention over the valid nodes of ``h`` (..., N, C).

    Rows belonging to masked nodes are all zero.
    """
    mask = torch.as_tensor(mask, dtype=torch.bool)
    if not bool(mask.any()):
        raise DataError("no valid keypoints")
    return _attention(h, mask, attn_vec, slope, version)


def _attention(h, mask, attn_vec, slope, version):
    if version == "v1":
        scores = attention_scores(h, attn_vec, slope)
    else:
        scores = attention_scores_v2(h, attn_vec, slope)
    alpha = masked_softmax(scores, mask[..., None, :])
    return alpha * mask[..., :, None]


def aggregate(alpha: torch.Tensor, h: torch.Tensor, include_self_in_sum: bool = True) -> torch.Tensor:
    """Attention-weighted message passing.

    With ``include_self_in_sum`` the self coefficient is applied once outside
    the neighbour sum and once inside it, which is the printed form of the
    layer; otherwise the self term appears only once.
    """
    out = alpha @ h
    if include_self_in_sum:
        out = out + torch.diagonal(alpha, dim1=-2, dim2=-1)[..., None] * h
    return out


class GATLayer(nn.Module):
    def __init__(self, c_in: int, c_out: int, heads: int = 1, slope: float = 0.2,
                 include_self_in_sum: bool = True, version: str = "v1"):
        super().__init__()
        if c_out % heads:
            raise ValueError("c_out must be divisible by heads")
        self.heads = heads
        self.slope = slope
        self.include_self_in_sum = include_self_in_sum
        self.version = version
        self.theta = nn.Linear(c_in, c_out, bias=False)
        dh = c_out // heads
        width = 2 * dh if version == "v1" else dh
        self.attn = nn.Parameter(torch.randn(heads, width) * (2.0 / (width + 1)) ** 0.5)

    def forward(self, g: torch.Tensor, mask: torch.Tensor, return_attention: bool = False):
        """g: (..., N, c_in), mask: (..., N) -> (..., N, c_out)."""
        h = self.theta(g)
        *lead, N, C = h.shape
        dh = C // self.heads
        hh = h.reshape(*lead, N, self.heads, dh).movedim(-2, -3)  # (..., heads, N, dh)
        alpha = torch.stack(
            [_attention(hh[..., i, :, :], mask, self.attn[i], self.slope, self.version) for i in range(self.heads)],
            dim=-3,
        )
        out = aggregate(alpha, hh, self.include_self_in_sum)
        out = out.movedim(-3, -2).reshape(*lead, N, C)
        out = out * mask[..., None]
        return (out, alpha) if return_attention else out


class GCNLayer(nn.Module):
    """Uniform mean aggregation over the same masked fully connected graph."""

    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.theta = nn.Linear(c_in, c_out, bias=False)

    def forward(self, g: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        h = self.theta(g)
        m = mask.to(h.dtype)[..., None]
        count = m.sum(-2, keepdim=True).clamp_min(1.0)
        mean = (h * m).sum(-2, keepdim=True) / count
        return mean.expand_as(h) * m


class TemporalMix(nn.Module):
    """Kernel-size-1 channel mixing shared over frames.

    ``mode="depthwise3"`` swaps in a per-channel temporal kernel of width 3.
    """

    def __init__(self, channels: int, mode: str = "channel"):
        super().__init__()
        self.mode = mode
        if mode == "channel":
            self.proj = nn.Linear(channels, channels)
        elif mode == "depthwise3":
            self.proj = nn.Conv1d(channels, channels, 3, padding=1, groups=channels)
        else:
            raise ValueError(f"unknown temporal mode {mode!r}")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: (B, T, N, C)."""
        if self.mode == "channel":
            return self.proj(x)
        B, T, N, C = x.shape
        y = self.proj(x.permute(0, 2, 3, 1).reshape(B * N, C, T))
        return y.reshape(B, N, C, T).permute(0, 3, 1, 2)


class MLP(nn.Sequential):
    def __init__(self, c_in: int, hidden: int, c_out: int):
        super().__init__(nn.Linear(c_in, hidden), nn.ReLU(), nn.Linear(hidden, c_out))


class EntityProject(nn.Module):
    def __init__(self, n_keypoints: int, c1: int, c2: int):
        super().__init__()
        self.K = n_keypoints
        self.mlp = MLP(n_keypoints * c1, c2, c2)

    def forward(self, gst: torch.Tensor, entity_mask: torch.Tensor) -> torch.Tensor:
        """gst: (B, T, E*K, C1) -> (B, T, E, C2)."""
        B, T, EK, C = gst.shape
        if EK % self.K:
            raise DataError(f"node count {EK} is not a multiple of K={self.K}")
        x = gst.reshape(B, T, EK // self.K, self.K * C)
        return self.mlp(x) * entity_mask[..., None]


class GeometricStream(nn.Module):
    def __init__(self, n_keypoints: int, c1: int, c2: int, use_gat: bool = True, heads: int = 1,
                 slope: float = 0.2, include_self_in_sum: bool = True, gat_version: str = "v1",
                 temporal_mode: str = "channel"):
        super().__init__()
        self.K = n_keypoints
        if use_gat:
            self.graph = GATLayer(4, c1, heads, slope, include_self_in_sum, gat_version)
        else:
            self.graph = GCNLayer(4, c1)
        self.temporal = TemporalMix(c1, temporal_mode)
        self.project = EntityProject(n_keypoints, c1, c2)

    def forward(self, geo: torch.Tensor, kp_mask: torch.Tensor):
        """geo: (B, T, E, K, 4), kp_mask: (B, T, E, K) -> ((B, T, E, C2), entity mask (B, T, E))."""
        B, T, E, K, _ = geo.shape
        nodes = geo.reshape(B, T, E * K, 4)
        mask = kp_mask.reshape(B, T, E * K)
        gs = self.graph(nodes, mask)
        gst = self.temporal(gs) * mask[..., None]
        entity_mask = kp_mask.any(-1)
        return self.project(gst, entity_mask), entity_mask
