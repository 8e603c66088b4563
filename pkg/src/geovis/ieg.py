"""Interdependent entity graph: neighbour features, masked stacking and
dot-product neighbour attention, reduced to one refined vector per entity.

All functions take a leading batch of frames ``(..., E, C)``; entity axes
are in canonical slot order.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .geometric import masked_softmax


def neighbor_feature(f: torch.Tensor, w3: nn.Module, n_entities: torch.Tensor | int, lam: float = 0.5,
                     gap_mode: str = "channel") -> torch.Tensor:
    """S_u = lam * f_u + (1 - lam) * ctx(W3 f_u) / (n - 1).

    ``ctx`` averages over channels and broadcasts back (``channel``) or is the
    identity (``passthrough``). ``n_entities`` broadcasts against ``f[..., 0]``.
    """
    z = w3(f)
    ctx = z.mean(-1, keepdim=True).expand_as(z) if gap_mode == "channel" else z
    n = torch.as_tensor(n_entities, dtype=f.dtype)
    denom = (n - 1).clamp_min(1.0)
    if denom.dim():
        denom = denom[..., None]
    return lam * f + (1.0 - lam) * ctx / denom


def neighbor_mask(present: torch.Tensor) -> torch.Tensor:
    """nb[..., e, u]: u is a valid neighbour of a valid target e (u != e)."""
    E = present.shape[-1]
    eye = torch.eye(E, dtype=torch.bool)
    return present[..., :, None] & present[..., None, :] & ~eye


def aggregate_neighbors(S: torch.Tensor, present: torch.Tensor, target: int) -> torch.Tensor:
    """Rows S_u * M(u) for every u != target in slot order: (..., E-1, C)."""
    keep = [u for u in range(S.shape[-2]) if u != target]
    return (S * present[..., None].to(S.dtype))[..., keep, :]


def neighbor_weights(S: torch.Tensor, nb: torch.Tensor, axis: str = "key") -> torch.Tensor:
    """W[..., e, u'] = sum over valid queries u of softmax(S_{u'} . S_u / sqrt(d)).

    With ``axis="key"`` each query's softmax runs over the neighbour rows u'
    (the default reading); ``axis="query"`` normalises over queries instead.
    Targets without valid neighbours get all-ones weights.
    """
    d = S.shape[-1]
    G = S @ S.transpose(-1, -2) / math.sqrt(d)  # G[u, u']
    G = G[..., None, :, :].expand(*nb.shape[:-1], *G.shape[-2:])  # (..., e, u, u')
    if axis == "key":
        P = masked_softmax(G, nb[..., None, :], dim=-1) * nb[..., :, None]
    else:
        P = masked_softmax(G, nb[..., :, None], dim=-2) * nb[..., None, :]
    W = P.sum(-2)
    has = nb.any(-1, keepdim=True)
    return torch.where(has, W, torch.ones_like(W))


def neighbor_attention(S_e: torch.Tensor, valid: torch.Tensor | None = None, axis: str = "key") -> torch.Tensor:
    """Weights over the stacked neighbour rows ``S_e`` (n, C) of one target."""
    n = S_e.shape[-2]
    valid = torch.ones(n, dtype=torch.bool) if valid is None else torch.as_tensor(valid, dtype=torch.bool)
    # treat the stacked rows as a graph whose only extra node is the target
    S = torch.cat([S_e.new_zeros(1, S_e.shape[-1]), S_e], dim=-2)
    present = torch.cat([torch.ones(1, dtype=torch.bool), valid])
    W = neighbor_weights(S, neighbor_mask(present), axis)
    return W[0, 1:]


class InterdependentEntityGraph(nn.Module):
    def __init__(self, c3: int, lam: float = 0.5, gap_mode: str = "channel", attn_axis: str = "key",
                 zero_neighbor_context: bool = False):
        super().__init__()
        self.w3 = nn.Linear(c3, c3)
        self.lam = lam
        self.gap_mode = gap_mode
        self.attn_axis = attn_axis
        self.zero_neighbor_context = zero_neighbor_context

    def forward(self, f: torch.Tensor, present: torch.Tensor):
        """f: (..., E, C3), present: (..., E) -> (refined (..., E, C3), weights (..., E, E)).

        The weight matrix has a zero diagonal; entry [e, u] is the weight of
        neighbour u when refining e.
        """
        pm = present.to(f.dtype)
        n = pm.sum(-1, keepdim=True)
        nb = neighbor_mask(present)
        if self.zero_neighbor_context:
            S = torch.zeros_like(f)
        else:
            S = neighbor_feature(f, self.w3, n, self.lam, self.gap_mode) * pm[..., None]
        W = neighbor_weights(S, nb, self.attn_axis)
        Wn = W * nb.to(f.dtype)
        count = nb.sum(-1, keepdim=True).to(f.dtype).clamp_min(1.0)
        context = (Wn @ S) / count
        refined = (f + context) * pm[..., None]
        return refined, Wn
