"""Two-stage AdamW training.

Stage 1 holds the boundary module at a uniform soft indicator and trains
everything else on frame-wise cross-entropy. Stage 2 releases the boundary
module and trains all parameters jointly with an annealed Gumbel-Softmax.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .batch import Batch, collate
from .config import RunConfig
from .data_model import HUMAN, OBJECT, EntitySequence, NormalizationSpec
from .errors import DataError, TrainingDiverged
from .evaluation import frame_accuracy, make_report, predict
from .head import frame_loss
from .model import GeoVisGNN, build_model

log = logging.getLogger(__name__)


def resolve_model_config(cfg: RunConfig, seqs: Sequence[EntitySequence], label_spaces: dict[str, list[str]],
                         visual_dim: Optional[int] = None) -> RunConfig:
    """Copy of ``cfg`` with dataset-derived model fields filled in."""
    if not seqs:
        raise DataError("no sequences to size the model from")
    cfg = cfg.copy()
    m = cfg.model
    m.n_keypoints = seqs[0].K
    m.visual_dim = visual_dim or int(seqs[0].entities[0].visual.shape[1])
    m.max_humans = max(len(s.humans) for s in seqs) if m.max_humans is None else m.max_humans
    n_obj = max(len(s.objects) for s in seqs)
    if cfg.dataset.object_count_cap is not None:
        n_obj = min(n_obj, cfg.dataset.object_count_cap)
    m.max_objects = n_obj if m.max_objects is None else m.max_objects
    m.n_sub_activities = len(label_spaces[HUMAN])
    m.n_affordances = len(label_spaces.get(OBJECT, []))
    cfg.validate()
    return cfg


def prepare(seqs: Sequence[EntitySequence], cfg: RunConfig) -> list[EntitySequence]:
    return [s.subsample(cfg.dataset.stride).cap_objects(cfg.dataset.object_count_cap) for s in seqs]


def index_batch(batch: Batch, idx: Sequence[int]) -> Batch:
    i = torch.as_tensor(list(idx), dtype=torch.long)
    T = int(batch.lengths[i].max())
    return Batch(batch.geo[i, :T], batch.kp_mask[i, :T], batch.visual[i, :T], batch.present[i, :T],
                 batch.labels[i, :T], batch.label_mask[i, :T], batch.kind, batch.lengths[i],
                 [batch.video_ids[j] for j in idx], [batch.entity_ids[j] for j in idx])


def param_norms(model: torch.nn.Module) -> dict[str, float]:
    return {n: float(p.detach().norm()) for n, p in model.named_parameters()}


@dataclass
class TrainResult:
    model: GeoVisGNN
    history: list[dict] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)


def train(cfg: RunConfig, train_seqs: Sequence[EntitySequence], norm: NormalizationSpec,
          val_seqs: Optional[Sequence[EntitySequence]] = None,
          on_stage_end: Optional[Callable[[int, GeoVisGNN], None]] = None) -> TrainResult:
    """Deterministic given ``cfg.train.seed`` on a single device."""
    seed = cfg.train.seed
    model = build_model(cfg, seed)
    m = cfg.model
    data = collate(train_seqs, norm, m.max_humans, m.max_objects)
    n = len(train_seqs)
    bs = min(cfg.optim.batch, n)
    shuffle = torch.Generator().manual_seed(seed)
    noise = torch.Generator().manual_seed(seed + 1)
    result = TrainResult(model)
    boundary = {id(p) for p in model.boundary_parameters()}
    step = 0
    for stage, n_steps in ((1, cfg.train.stage1_steps), (2, cfg.train.stage2_steps)):
        if n_steps <= 0:
            continue
        params = [p for p in model.parameters() if stage == 2 or id(p) not in boundary]
        for p in model.boundary_parameters():
            p.requires_grad_(stage == 2)
        opt = torch.optim.AdamW(params, lr=cfg.optim.lr, weight_decay=cfg.optim.weight_decay)
        order: list[int] = []
        for stage_step in range(n_steps):
            if len(order) < bs:
                order += torch.randperm(n, generator=shuffle).tolist()
            idx, order = order[:bs], order[bs:]
            batch = index_batch(data, idx)
            model.train()
            tau = cfg.gumbel.temperature_at(stage_step) if stage == 2 else cfg.gumbel.temperature
            out = model(batch, temperature=tau, noise=noise if stage == 2 else None, frozen_boundary=stage == 1)
            valid = batch.label_mask & batch.present & batch.frame_mask[:, :, None]
            loss, parts = frame_loss(out["human_logits"], out["object_logits"], batch.labels, valid, batch.kind)
            if not math.isfinite(loss.item()):
                raise TrainingDiverged(step, param_norms(model))
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            rec = {"step": step, "stage": stage, "loss": loss.item(), "temperature": tau,
                   **{f"loss_{k}": v for k, v in parts.items()}}
            result.history.append(rec)
            if step % cfg.train.log_every == 0:
                log.info("step %d stage %d loss %.4f tau %.3f", step, stage, rec["loss"], tau)
            if val_seqs and cfg.train.eval_every and step % cfg.train.eval_every == 0:
                result.evals.append(validate(model, val_seqs, norm, step))
        for p in model.boundary_parameters():
            p.requires_grad_(True)
        if on_stage_end is not None:
            on_stage_end(stage, model)
    model.eval()
    return result


def validate(model: GeoVisGNN, seqs: Sequence[EntitySequence], norm: NormalizationSpec, step: int) -> dict:
    preds = predict(model, seqs, norm)
    rep = make_report(preds, seqs, "joint")
    rec = {"step": step, "frame_acc": frame_accuracy(preds, seqs)}
    for kind, k in sorted(rep.counts):
        rec[f"f1@{int(round(k * 100))}/{kind}"] = rep.f1(kind, k)
    log.info("eval step %d: %s", step, ", ".join(f"{k}={v:.3f}" for k, v in rec.items() if k != "step"))
    return rec


def loss_curve(result: TrainResult) -> np.ndarray:
    return np.array([r["loss"] for r in result.history])
