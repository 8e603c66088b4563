"""Training-and-scoring loops shared by the CLI and the acceptance suite."""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

from .config import RunConfig
from .data_model import EntitySequence, NormalizationSpec
from .evaluation import KIND_LABEL, make_report, predict
from .metrics import K_THRESHOLDS, F1Report, aggregate_folds
from .training import prepare, resolve_model_config, train

log = logging.getLogger(__name__)

ABLATIONS: dict[str, dict[str, bool]] = {
    "full": {},
    "-IEG": {"ablation.use_ieg": False},
    "-CAF-IEG": {"ablation.use_caf": False, "ablation.use_ieg": False},
    "GCN-CAF-IEG": {"ablation.use_gat": False, "ablation.use_caf": False, "ablation.use_ieg": False},
}


def ablation_columns(kinds: Sequence[str], ks: Sequence[float] = K_THRESHOLDS) -> list[str]:
    return [f"{kind} F1@{int(round(100 * k))}" for kind in kinds for k in ks]


def fit_and_score(cfg: RunConfig, train_seqs: Sequence[EntitySequence], test_seqs: Sequence[EntitySequence],
                  label_spaces: Mapping[str, list[str]], norm: NormalizationSpec, task: str = "joint",
                  dataset: str = "", fold: str = "0") -> tuple[F1Report, RunConfig]:
    tr, te = prepare(train_seqs, cfg), prepare(test_seqs, cfg)
    cfg = resolve_model_config(cfg, tr, dict(label_spaces))
    result = train(cfg, tr, norm)
    return make_report(predict(result.model, te, norm), te, task, dataset, fold), cfg


def run_ablation(base: RunConfig, train_seqs: Sequence[EntitySequence], test_seqs: Sequence[EntitySequence],
                 label_spaces: Mapping[str, list[str]], norm: NormalizationSpec, seeds: Sequence[int],
                 variants: Sequence[str] = tuple(ABLATIONS), dataset: str = "",
                 on_report: Optional[Callable[[F1Report], None]] = None) -> dict[str, dict[str, list[float]]]:
    """table[variant][column] = F1 per seed on the test videos (joint task).

    ``on_report`` sees every per-run report, e.g. to check or archive it.
    """
    kinds = [KIND_LABEL[k] for k in label_spaces if label_spaces[k]]
    columns = ablation_columns(kinds)
    table: dict[str, dict[str, list[float]]] = {}
    for v in variants:
        table[v] = {c: [] for c in columns}
        for seed in seeds:
            cfg = base.copy()
            for key, value in {**ABLATIONS[v], "train.seed": seed}.items():
                cfg.set(key, value)
            report, _ = fit_and_score(cfg, train_seqs, test_seqs, label_spaces, norm, dataset=dataset,
                                      fold=f"{v}/seed{seed}")
            if on_report is not None:
                on_report(report)
            for kind in kinds:
                for k in K_THRESHOLDS:
                    table[v][f"{kind} F1@{int(round(100 * k))}"].append(report.f1(kind, k))
            log.info("ablation %s seed %d: %s", v, seed,
                     ", ".join(f"{c}={vals[-1]:.3f}" for c, vals in table[v].items()))
    return table


def format_table(table: Mapping[str, Mapping[str, Sequence[float]]]) -> str:
    """Plain-text table, one row per variant, cells as mean ± std in percent."""
    if not table:
        return ""
    columns = list(next(iter(table.values())))
    cells = [["Model", *columns]]
    for v, row in table.items():
        cell = []
        for c in columns:
            mean, std = aggregate_folds(list(row[c]))
            cell.append(f"{100 * mean:.1f} ± {100 * std:.1f}")
        cells.append([v, *cell])
    widths = [max(len(r[i]) for r in cells) for i in range(len(cells[0]))]
    lines = ["  ".join(s.ljust(w) for s, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def write_table_csv(path, table: Mapping[str, Mapping[str, Sequence[float]]],
                    header: Mapping[str, object] | None = None) -> None:
    """One row per (variant, metric) with mean, sample std and the per-seed values."""
    with open(Path(path), "w", newline="") as fh:
        fh.writelines(f"# {k}={v}\n" for k, v in (header or {}).items())
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "metric", "mean", "std", "values"])
        for v, row in table.items():
            for c, vals in row.items():
                mean, std = aggregate_folds(list(vals))
                w.writerow([v, c, f"{mean:.10g}", f"{std:.10g}", " ".join(f"{x:.10g}" for x in vals)])


def ordering_violations(table: Mapping[str, Mapping[str, Sequence[float]]], column: str,
                        reference: str = "full", slack: float = 0.01) -> list[str]:
    """Variants whose mean ``column`` beats the reference by more than ``slack``."""
    ref, _ = aggregate_folds(list(table[reference][column]))
    out = []
    for v, row in table.items():
        if v == reference:
            continue
        mean, _ = aggregate_folds(list(row[column]))
        if mean > ref + slack:
            out.append(f"{v}: {100 * mean:.1f} > {reference}: {100 * ref:.1f} (+{100 * slack:.0f} slack)")
    return out
