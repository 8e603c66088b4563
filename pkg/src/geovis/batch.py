"""Padding a list of sequences into fixed entity-slot tensors.

Slots ``[0, max_humans)`` hold humans and the remaining ``max_objects``
slots hold objects, so slot position alone determines entity kind.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .data_model import HUMAN, OBJECT, EntitySequence, NormalizationSpec, derive_geometric_features
from .errors import DataError


@dataclass
class Batch:
    geo: torch.Tensor  # (B, T, E, K, 4)
    kp_mask: torch.Tensor  # (B, T, E, K)
    visual: torch.Tensor  # (B, T, E, Dv)
    present: torch.Tensor  # (B, T, E)
    labels: torch.Tensor  # (B, T, E)
    label_mask: torch.Tensor  # (B, T, E)
    kind: torch.Tensor  # (E,) 0 = human slot, 1 = object slot
    lengths: torch.Tensor  # (B,)
    video_ids: list[str]
    entity_ids: list[list[str | None]]

    @property
    def frame_mask(self) -> torch.Tensor:
        T = self.geo.shape[1]
        return torch.arange(T)[None, :] < self.lengths[:, None]

    def to(self, dtype: torch.dtype) -> "Batch":
        return Batch(self.geo.to(dtype), self.kp_mask, self.visual.to(dtype), self.present, self.labels,
                     self.label_mask, self.kind, self.lengths, self.video_ids, self.entity_ids)


def slot_kinds(max_humans: int, max_objects: int) -> torch.Tensor:
    return torch.tensor([0] * max_humans + [1] * max_objects, dtype=torch.long)


def collate(seqs: Sequence[EntitySequence], norm: NormalizationSpec, max_humans: int, max_objects: int,
            dtype: torch.dtype = torch.float32) -> Batch:
    if not seqs:
        raise DataError("cannot collate an empty batch")
    B = len(seqs)
    T = max(s.T for s in seqs)
    K = seqs[0].K
    Dv = seqs[0].entities[0].visual.shape[1]
    E = max_humans + max_objects
    geo = np.zeros((B, T, E, K, 4))
    kp_mask = np.zeros((B, T, E, K), bool)
    visual = np.zeros((B, T, E, Dv), np.float32)
    present = np.zeros((B, T, E), bool)
    labels = np.zeros((B, T, E), np.int64)
    label_mask = np.zeros((B, T, E), bool)
    lengths = np.zeros(B, np.int64)
    entity_ids: list[list[str | None]] = []
    for b, s in enumerate(seqs):
        if s.K != K:
            raise DataError(f"{s.video_id}: K={s.K} differs from batch K={K}")
        humans, objects = s.humans, s.objects
        if len(humans) > max_humans or len(objects) > max_objects:
            raise DataError(f"{s.video_id}: {len(humans)} humans / {len(objects)} objects exceed slots "
                            f"{max_humans}/{max_objects}")
        feats = derive_geometric_features(s, norm)
        ids: list[str | None] = [None] * E
        order = [(i, h) for i, h in enumerate(humans)] + [(max_humans + j, o) for j, o in enumerate(objects)]
        index = {id(e): n for n, e in enumerate(s.entities)}
        for slot, track in order:
            n = index[id(track)]
            if track.visual.shape[1] != Dv:
                raise DataError(f"{s.video_id}/{track.entity_id}: visual dim {track.visual.shape[1]} != {Dv}")
            geo[b, :s.T, slot] = feats.values[:, n]
            kp_mask[b, :s.T, slot] = feats.mask[:, n]
            visual[b, :s.T, slot] = track.visual
            present[b, :s.T, slot] = True
            labels[b, :s.T, slot] = track.labels
            label_mask[b, :s.T, slot] = track.label_mask
            ids[slot] = track.entity_id
        lengths[b] = s.T
        entity_ids.append(ids)
    return Batch(
        geo=torch.as_tensor(geo, dtype=dtype),
        kp_mask=torch.as_tensor(kp_mask),
        visual=torch.as_tensor(visual).to(dtype),
        present=torch.as_tensor(present),
        labels=torch.as_tensor(labels),
        label_mask=torch.as_tensor(label_mask),
        kind=slot_kinds(max_humans, max_objects),
        lengths=torch.as_tensor(lengths),
        video_ids=[s.video_id for s in seqs],
        entity_ids=entity_ids,
    )


def kind_name(k: int) -> str:
    return HUMAN if k == 0 else OBJECT
