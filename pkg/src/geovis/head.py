"""Boundary sampling, bidirectional GRU and per-kind frame classifiers."""

from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .data_model import Segment, SegmentTimeline
from .errors import ConfigError, DataError

Noise = Union[None, int, torch.Generator, torch.Tensor]


def sample_gumbel(shape, generator: torch.Generator, dtype=torch.float32, eps: float = 1e-20) -> torch.Tensor:
    u = torch.rand(shape, generator=generator, dtype=dtype)
    return -torch.log(-torch.log(u + eps) + eps)


def _noise_like(logits: torch.Tensor, noise: Noise) -> Optional[torch.Tensor]:
    if noise is None:
        return None
    if isinstance(noise, torch.Tensor):
        return noise.to(logits.dtype)
    if isinstance(noise, int):
        noise = torch.Generator().manual_seed(noise)
    return sample_gumbel(logits.shape, noise, logits.dtype)


def gumbel_softmax(logits: torch.Tensor, temperature: float, hard: bool = False, noise: Noise = None) -> torch.Tensor:
    """softmax((logits + g) / temperature) over the last axis.

    ``noise`` is a seed, a generator, an explicit Gumbel sample, or ``None``
    for the noiseless relaxation. ``hard`` returns a one-hot forward value
    carrying the soft gradient.
    """
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    g = _noise_like(logits, noise)
    y = torch.softmax((logits if g is None else logits + g) / temperature, dim=-1)
    if not hard:
        return y
    index = y.argmax(-1, keepdim=True)
    y_hard = torch.zeros_like(y).scatter_(-1, index, 1.0)
    return (y_hard - y).detach() + y


class TemporalHead(nn.Module):
    def __init__(self, c3: int, hidden: int, n_sub_activities: int, n_affordances: int = 0,
                 boundary_mode: str = "concat"):
        super().__init__()
        self.boundary_mode = boundary_mode
        self.boundary = nn.Linear(c3, 2)
        extra = 1 if boundary_mode == "concat" else 0
        self.gru = nn.GRU(c3 + extra, hidden, batch_first=True, bidirectional=True)
        self.cls_human = nn.Linear(2 * hidden, n_sub_activities)
        self.cls_object = nn.Linear(2 * hidden, n_affordances) if n_affordances else None

    def boundary_sample(self, refined: torch.Tensor, temperature: float, hard: bool = False, noise: Noise = None,
                        frozen: bool = False) -> tuple[torch.Tensor, torch.Tensor]:
        """Boundary probability per (…, T, E); frame 0 is always a boundary.

        ``refined`` is (B, T, E, C3). Returns (indicator, logits).
        """
        logits = self.boundary(refined)
        if frozen:
            b = torch.full(refined.shape[:-1], 0.5, dtype=refined.dtype)
        else:
            b = gumbel_softmax(logits, temperature, hard, noise)[..., 1]
        b = torch.cat([torch.ones_like(b[:, :1]), b[:, 1:]], dim=1)
        return b, logits

    def recurrent(self, x: torch.Tensor, lengths: Optional[torch.Tensor] = None) -> torch.Tensor:
        """x: (B, T, E, D) -> (B, T, E, 2H), one sequence per entity."""
        B, T, E, D = x.shape
        seq = x.permute(0, 2, 1, 3).reshape(B * E, T, D)
        if lengths is None or bool((lengths == T).all()):
            out, _ = self.gru(seq)
        else:
            lens = lengths.repeat_interleave(E).cpu()
            packed = pack_padded_sequence(seq, lens, batch_first=True, enforce_sorted=False)
            out, _ = self.gru(packed)
            out, _ = pad_packed_sequence(out, batch_first=True, total_length=T)
        return out.reshape(B, E, T, -1).permute(0, 2, 1, 3)

    def classify(self, h: torch.Tensor) -> tuple[torch.Tensor, Optional[torch.Tensor]]:
        human = self.cls_human(h)
        obj = self.cls_object(h) if self.cls_object is not None else None
        return human, obj

    def forward(self, refined: torch.Tensor, present: torch.Tensor, lengths: Optional[torch.Tensor] = None,
                temperature: float = 1.0, hard: bool = False, noise: Noise = None, frozen: bool = False):
        b, b_logits = self.boundary_sample(refined, temperature, hard, noise, frozen)
        x = refined
        if self.boundary_mode == "concat":
            x = torch.cat([refined, (b * present.to(b.dtype))[..., None]], dim=-1)
        h = self.recurrent(x, lengths)
        human, obj = self.classify(h)
        return {"boundary": b, "boundary_logits": b_logits, "human_logits": human, "object_logits": obj}


def frame_loss(human_logits: torch.Tensor, object_logits: Optional[torch.Tensor], labels: torch.Tensor,
               valid: torch.Tensor, kind: torch.Tensor) -> tuple[torch.Tensor, dict[str, float]]:
    """Mean cross-entropy over valid (frame, entity) pairs, each kind in its own label space.

    ``valid`` is (B, T, E); ``kind`` is (E,). Object entities are skipped when
    there is no object classifier.
    """
    is_obj = (kind == 1)[None, None, :]
    v_h = valid & ~is_obj
    v_o = valid & is_obj if object_logits is not None else torch.zeros_like(valid)
    n = int(v_h.sum()) + int(v_o.sum())
    if n == 0:
        raise DataError("no valid labels in batch")
    total = human_logits.new_zeros(())
    parts: dict[str, float] = {}
    if bool(v_h.any()):
        ce = F.cross_entropy(human_logits[v_h], labels[v_h], reduction="sum")
        total = total + ce
        parts["human"] = float(ce.detach()) / int(v_h.sum())
    if object_logits is not None and bool(v_o.any()):
        ce = F.cross_entropy(object_logits[v_o], labels[v_o], reduction="sum")
        total = total + ce
        parts["object"] = float(ce.detach()) / int(v_o.sum())
    return total / n, parts


def majority_label(frame_labels: Sequence[int], n_classes: Optional[int] = None) -> int:
    counts = np.bincount(np.asarray(frame_labels, dtype=np.int64), minlength=n_classes or 0)
    return int(np.argmax(counts))  # first maximum: lowest class index wins ties


def predict_known_segments(frame_pred: np.ndarray, gt_segments: SegmentTimeline) -> SegmentTimeline:
    """Label each ground-truth segment by majority vote of frame predictions.

    ``frame_pred`` holds class indices (T,) or logits (T, C).
    """
    frame_pred = np.asarray(frame_pred)
    if frame_pred.ndim == 2:
        frame_pred = frame_pred.argmax(-1)
    out: SegmentTimeline = []
    for s in gt_segments:
        if s.end < s.start:
            raise DataError(f"empty segment {s}")
        out.append(Segment(s.start, s.end, majority_label(frame_pred[s.start:s.end + 1])))
    return out
