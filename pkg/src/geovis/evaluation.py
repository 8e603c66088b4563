"""Frame predictions, frame accuracy and F1@k report tables for both tasks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import torch

from .batch import Batch, collate
from .data_model import HUMAN, OBJECT, EntitySequence, NormalizationSpec, extract_segments
from .errors import DataError
from .head import predict_known_segments
from .metrics import K_THRESHOLDS, F1Report

TASKS = ("joint", "known-segmentation")
KIND_LABEL = {HUMAN: "sub-activity", OBJECT: "affordance"}


@dataclass
class EntityPrediction:
    kind: str
    logits: np.ndarray  # (T, C)
    boundary: np.ndarray | None = None  # (T,)

    @property
    def frames(self) -> np.ndarray:
        return self.logits.argmax(-1)


Predictions = dict[str, dict[str, EntityPrediction]]


@torch.no_grad()
def predict(model, seqs: Sequence[EntitySequence], norm: NormalizationSpec, batch_size: int = 16) -> Predictions:
    """Noise-free forward pass; one logit table per labelled entity."""
    model.eval()
    m = model.cfg.model
    out: Predictions = {}
    for i in range(0, len(seqs), batch_size):
        chunk = seqs[i:i + batch_size]
        batch = collate(chunk, norm, m.max_humans, m.max_objects)
        res = model(batch, temperature=model.cfg.gumbel.min_temperature, noise=None, frozen_boundary=False)
        _scatter(out, batch, res)
    return out


def _scatter(out: Predictions, batch: Batch, res: dict) -> None:
    human = res["human_logits"].float().numpy()
    obj = res["object_logits"].float().numpy() if res["object_logits"] is not None else None
    bnd = res["boundary"].float().numpy()
    for b, vid in enumerate(batch.video_ids):
        T = int(batch.lengths[b])
        per = out.setdefault(vid, {})
        for slot, eid in enumerate(batch.entity_ids[b]):
            if eid is None:
                continue
            if int(batch.kind[slot]) == 0:
                per[eid] = EntityPrediction(HUMAN, human[b, :T, slot], bnd[b, :T, slot])
            elif obj is not None:
                per[eid] = EntityPrediction(OBJECT, obj[b, :T, slot], bnd[b, :T, slot])


def frame_accuracy(preds: Predictions, seqs: Sequence[EntitySequence]) -> float:
    correct = total = 0
    for s in seqs:
        for e in s.entities:
            p = preds.get(s.video_id, {}).get(e.entity_id)
            if p is None:
                continue
            m = e.label_mask
            correct += int((p.frames[m] == e.labels[m]).sum())
            total += int(m.sum())
    return correct / total if total else 0.0


def make_report(preds: Mapping[str, Mapping[str, EntityPrediction]], seqs: Sequence[EntitySequence], task: str,
                dataset: str = "", fold: str = "0", ks: Sequence[float] = K_THRESHOLDS) -> F1Report:
    """F1@k counts per entity kind, micro-summed over every test video and entity."""
    if task not in TASKS:
        raise DataError(f"unknown task {task!r}")
    report = F1Report(dataset, task, fold)
    for s in seqs:
        if s.video_id not in preds:
            raise DataError(f"missing prediction for test video {s.video_id}")
        for e in s.entities:
            p = preds[s.video_id].get(e.entity_id)
            if p is None:
                continue
            gt = extract_segments(e.labels, e.label_mask)
            if task == "joint":
                pred = extract_segments(p.frames, e.label_mask)
            else:
                pred = predict_known_segments(p.frames, gt)
            report.add(KIND_LABEL[e.kind], pred, gt, ks)
    return report


def oracle_predictions(seqs: Sequence[EntitySequence], n_classes: Mapping[str, int]) -> Predictions:
    """One-hot logits reproducing the ground truth (a perfect predictor)."""
    out: Predictions = {}
    for s in seqs:
        per = out.setdefault(s.video_id, {})
        for e in s.entities:
            per[e.entity_id] = EntityPrediction(e.kind, np.eye(n_classes[e.kind])[e.labels])
    return out
