"""Deterministic SVG figures: label timelines, loss curves and ablation bars.

The SVG writer is pinned (fixed hash salt, no date stamp) so the same inputs
produce byte-identical files. ``meta`` entries land in the SVG description.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .data_model import extract_segments  # noqa: E402

_RC = {"svg.hashsalt": "gvhoi", "svg.fonttype": "none", "font.size": 8}


def _save(fig, path, meta: Mapping[str, object] | None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    desc = " ".join(f"{k}={v}" for k, v in (meta or {}).items())
    fig.savefig(path, format="svg", metadata={"Date": None, "Description": desc or None})
    plt.close(fig)
    return path


def plot_timelines(path, video_id: str, rows: Sequence[tuple[str, np.ndarray, np.ndarray]],
                   class_names: Sequence[str], meta: Mapping[str, object] | None = None) -> Path:
    """One ground-truth bar and one prediction bar per entity.

    ``rows`` holds (entity label, ground-truth frames, predicted frames);
    negative labels are left blank.
    """
    colors = plt.get_cmap("tab10")
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(8, 0.5 + 0.6 * len(rows)))
        ticks, labels = [], []
        for i, (name, gt, pred) in enumerate(rows):
            for j, (frames, tag) in enumerate(((gt, "gt"), (pred, "pred"))):
                y = 2 * i + j
                for s in extract_segments(frames, np.asarray(frames) >= 0):
                    ax.broken_barh([(s.start, s.length)], (y - 0.4, 0.8), color=colors(s.label % 10))
                ticks.append(y)
                labels.append(f"{name} {tag}")
        ax.set_yticks(ticks, labels)
        ax.invert_yaxis()
        ax.set_xlabel("frame")
        ax.set_title(video_id)
        handles = [plt.Rectangle((0, 0), 1, 1, color=colors(c % 10)) for c in range(len(class_names))]
        ax.legend(handles, class_names, loc="upper left", bbox_to_anchor=(1.0, 1.0), frameon=False)
        fig.tight_layout()
        return _save(fig, path, meta)


def plot_loss(path, losses: Sequence[float], stage_break: int | None = None,
              meta: Mapping[str, object] | None = None) -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(np.arange(1, len(losses) + 1), losses, lw=0.8)
        if stage_break:
            ax.axvline(stage_break, color="0.5", ls="--", lw=0.8)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        fig.tight_layout()
        return _save(fig, path, meta)


def plot_ablation(path, table: Mapping[str, Mapping[str, Sequence[float]]],
                  meta: Mapping[str, object] | None = None) -> Path:
    """Grouped bars of mean F1 (with std whiskers): table[variant][column] = per-seed values."""
    variants = list(table)
    columns = list(next(iter(table.values()))) if table else []
    width = 0.8 / max(len(variants), 1)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(columns), 3))
        x = np.arange(len(columns))
        for i, v in enumerate(variants):
            vals = [np.asarray(table[v][c], dtype=float) for c in columns]
            mean = [100 * a.mean() for a in vals]
            std = [100 * a.std(ddof=1) if a.size > 1 else 0.0 for a in vals]
            ax.bar(x + (i - (len(variants) - 1) / 2) * width, mean, width, yerr=std, label=v, capsize=2)
        ax.set_xticks(x, columns)
        ax.set_ylabel("F1 (%)")
        ax.set_ylim(0, 105)
        ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        return _save(fig, path, meta)
