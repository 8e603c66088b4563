"""Segment-overlap F1@k scoring and cross-validation aggregation."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data_model import Segment, SegmentTimeline

K_THRESHOLDS = (0.10, 0.25, 0.50)
CSV_COLUMNS = ("dataset", "task", "kind", "k", "precision", "recall", "f1", "tp", "fp", "fn", "fold")


def segment_iou(a: Segment, b: Segment) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start) + 1
    if inter <= 0:
        return 0.0
    return inter / (a.length + b.length - inter)


def f1_at_k(pred: SegmentTimeline, gt: SegmentTimeline, k: float) -> tuple[int, int, int]:
    """Greedy segment matching in prediction order; returns (TP, FP, FN).

    Each predicted segment takes the same-class ground-truth segment of
    maximal IoU (first in order on ties). It is a hit when that IoU reaches
    ``k`` and the ground-truth segment is still unmatched.
    """
    if not 0.0 < k <= 1.0:
        raise ValueError(f"k must lie in (0, 1], got {k}")
    hits = [False] * len(gt)
    tp = fp = 0
    for p in pred:
        best, best_iou = -1, -1.0
        for j, g in enumerate(gt):
            if g.label != p.label:
                continue
            iou = segment_iou(p, g)
            if iou > best_iou:
                best, best_iou = j, iou
        if best >= 0 and best_iou >= k and not hits[best]:
            tp += 1
            hits[best] = True
        else:
            fp += 1
    return tp, fp, len(gt) - sum(hits)


def f1_at_k_optimal(pred: SegmentTimeline, gt: SegmentTimeline, k: float) -> tuple[int, int, int]:
    """Maximum-cardinality matching of same-class pairs with IoU >= k (exhaustive)."""
    edges = [[j for j, g in enumerate(gt) if g.label == p.label and segment_iou(p, g) >= k] for p in pred]
    best = 0
    for choice in itertools.product(*[[None] + e for e in edges]):
        used = [c for c in choice if c is not None]
        if len(used) == len(set(used)):
            best = max(best, len(used))
    return best, len(pred) - best, len(gt) - best


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def aggregate_folds(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample (n - 1) standard deviation; std is 0 for a single fold."""
    if not values:
        raise ValueError("need at least one fold")
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean()), float(a.std(ddof=1)) if a.size > 1 else 0.0


def format_pm(values: Sequence[float]) -> str:
    mean, std = aggregate_folds(values)
    return f"{100 * mean:.1f} ± {100 * std:.1f}"


@dataclass
class F1Report:
    """Micro-aggregated counts per (kind, k) for one scope (video, fold or aggregate)."""

    dataset: str = ""
    task: str = "joint"
    fold: str = "0"
    counts: dict[tuple[str, float], list[int]] = field(default_factory=dict)

    def add(self, kind: str, pred: SegmentTimeline, gt: SegmentTimeline, ks: Iterable[float] = K_THRESHOLDS):
        for k in ks:
            c = self.counts.setdefault((kind, k), [0, 0, 0])
            for i, v in enumerate(f1_at_k(pred, gt, k)):
                c[i] += v

    def rows(self) -> list[dict]:
        out = []
        for (kind, k), (tp, fp, fn) in sorted(self.counts.items()):
            p, r, f = prf(tp, fp, fn)
            out.append({"dataset": self.dataset, "task": self.task, "kind": kind, "k": k, "precision": p,
                        "recall": r, "f1": f, "tp": tp, "fp": fp, "fn": fn, "fold": self.fold})
        return out

    def f1(self, kind: str, k: float) -> float:
        return prf(*self.counts[(kind, k)])[2]

    @property
    def kinds(self) -> list[str]:
        return sorted({kind for kind, _ in self.counts})


def write_report_csv(path, rows: Sequence[Mapping], header: Mapping[str, str] | None = None) -> None:
    """CSV with the fixed column set; ``header`` entries become leading ``# key=value`` lines."""
    with open(path, "w", newline="") as fh:
        for key, value in (header or {}).items():
            fh.write(f"# {key}={value}\n")
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({c: _fmt(row[c]) for c in CSV_COLUMNS})


def read_report_csv(path) -> tuple[list[dict], dict[str, str]]:
    header: dict[str, str] = {}
    body = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                header[key] = value
            else:
                body.append(line)
    rows = []
    for row in csv.DictReader(body):
        row["k"] = float(row["k"])
        for c in ("precision", "recall", "f1"):
            row[c] = float(row[c])
        for c in ("tp", "fp", "fn"):
            row[c] = int(row[c])
        rows.append(row)
    return rows, header


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if not math.isfinite(v) else f"{v:.10g}"
    return v


def check_monotone(rows: Sequence[Mapping], tol: float = 1e-12) -> list[str]:
    """Rows (grouped by dataset/task/kind/fold) whose F1 rises with k."""
    groups: dict[tuple, list[tuple[float, float]]] = {}
    for r in rows:
        groups.setdefault((r["dataset"], r["task"], r["kind"], r["fold"]), []).append((float(r["k"]), float(r["f1"])))
    bad = []
    for key, vals in groups.items():
        vals.sort()
        for (k0, f0), (k1, f1) in zip(vals, vals[1:]):
            if f1 > f0 + tol:
                bad.append(f"{key}: F1@{k1} = {f1} > F1@{k0} = {f0}")
    return bad
