"""Central finite-difference checks of autograd gradients, per parameter group.

Everything runs in float64 on a micro instance (T=3, three entities, K=3,
widths at most 8). Gumbel noise is a fixed tensor so the loss is a smooth
deterministic function of the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import torch

from .batch import Batch, slot_kinds
from .config import RunConfig
from .errors import ConfigError
from .head import frame_loss
from .model import PARAM_GROUPS, build_model, param_group


@dataclass
class GroupResult:
    group: str
    n_params: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.n_params > 0 and self.max_rel_error < self.tolerance


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    """||a - n|| / max(||a||, ||n||); 0 when both vanish."""
    scale = max(float(analytic.norm()), float(numeric.norm()))
    if scale < 1e-12:
        return 0.0
    return float((analytic - numeric).norm()) / scale


@torch.no_grad()
def central_difference(loss_fn: Callable[[], torch.Tensor], param: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    grad = torch.zeros_like(param)
    flat, gflat = param.view(-1), grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        up = loss_fn().item()
        flat[i] = orig - eps
        down = loss_fn().item()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


def micro_config(base: Optional[RunConfig] = None) -> RunConfig:
    cfg = (base or RunConfig()).copy()
    m = cfg.model
    m.c1, m.c2, m.c3, m.hidden = 4, 6, 8, 4
    m.n_keypoints, m.visual_dim = 3, 5
    m.max_humans, m.max_objects = 2, 1
    m.n_sub_activities, m.n_affordances = 3, 2
    cfg.fusion.reduction = 16
    cfg.validate()
    return cfg


def micro_batch(cfg: RunConfig, seed: int = 0, T: int = 3) -> Batch:
    """Random float64 batch with one masked keypoint and an object carrying two keypoints."""
    g = torch.Generator().manual_seed(seed)
    m = cfg.model
    B, E, K = 1, m.max_humans + m.max_objects, m.n_keypoints
    kp_mask = torch.ones(B, T, E, K, dtype=torch.bool)
    kp_mask[:, :, m.max_humans:, 2:] = False  # objects: two box corners
    kp_mask[0, 1, 0, 1] = False
    geo = torch.rand(B, T, E, K, 4, generator=g, dtype=torch.float64) * kp_mask[..., None]
    visual = torch.randn(B, T, E, m.visual_dim, generator=g, dtype=torch.float64)
    labels = torch.zeros(B, T, E, dtype=torch.long)
    labels[..., :m.max_humans] = torch.randint(0, m.n_sub_activities, (B, T, m.max_humans), generator=g)
    labels[..., m.max_humans:] = torch.randint(0, max(m.n_affordances or 1, 1), (B, T, m.max_objects), generator=g)
    return Batch(geo, kp_mask, visual, torch.ones(B, T, E, dtype=torch.bool), labels,
                 torch.ones(B, T, E, dtype=torch.bool), slot_kinds(m.max_humans, m.max_objects),
                 torch.tensor([T]), ["micro"], [[f"e{i}" for i in range(E)]])


def check_model(cfg: Optional[RunConfig] = None, tol: float = 1e-4, seed: int = 0, eps: float = 1e-5,
                corrupt: Optional[str] = None, groups: Optional[Sequence[str]] = None) -> list[GroupResult]:
    """Compare autograd against central differences for every parameter group.

    ``corrupt`` names a group whose analytic gradient is deliberately
    perturbed (a negative control for the checker itself).
    """
    for name in ([corrupt] if corrupt else []) + list(groups or []):
        if name not in PARAM_GROUPS:
            raise ConfigError(f"unknown parameter group {name!r}; choose from {list(PARAM_GROUPS)}")
    cfg = micro_config(cfg)
    model = build_model(cfg, seed, dtype=torch.float64)
    model.train()
    batch = micro_batch(cfg, seed)
    ng = torch.Generator().manual_seed(seed + 1)
    E = batch.geo.shape[2]
    noise = -torch.log(-torch.log(torch.rand(1, batch.geo.shape[1], E, 2, generator=ng, dtype=torch.float64)))

    def loss_fn() -> torch.Tensor:
        out = model(batch, temperature=0.7, noise=noise, frozen_boundary=False, hard=False)
        valid = batch.label_mask & batch.present
        return frame_loss(out["human_logits"], out["object_logits"], batch.labels, valid, batch.kind)[0]

    model.zero_grad()
    loss_fn().backward()
    by_group: dict[str, list[tuple[str, torch.nn.Parameter]]] = {g: [] for g in PARAM_GROUPS}
    for name, p in model.named_parameters():
        by_group[param_group(name)].append((name, p))

    results = []
    for group, params in by_group.items():
        if groups is not None and group not in groups:
            continue
        if not params:
            continue
        worst = 0.0
        for name, p in params:
            analytic = p.grad.detach().clone()
            if group == corrupt:
                analytic = analytic * 1.05 + 1e-3
            numeric = central_difference(loss_fn, p.data, eps)
            worst = max(worst, relative_error(analytic, numeric))
        results.append(GroupResult(group, sum(p.numel() for _, p in params), worst, tol))
    return results


def format_table(results: Sequence[GroupResult]) -> str:
    lines = [f"{'group':<18} {'params':>7} {'max rel err':>12}  result"]
    for r in results:
        lines.append(f"{r.group:<18} {r.n_params:>7} {r.max_rel_error:>12.3e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)


def all_passed(results: Sequence[GroupResult]) -> bool:
    return bool(results) and all(r.passed for r in results)


__all__ = ["GroupResult", "relative_error", "central_difference", "micro_config", "micro_batch", "check_model",
           "format_table", "all_passed"]
