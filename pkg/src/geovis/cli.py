"""``gvhoi`` command line: synth, train, eval, gradcheck, report, ablate, folds.

Exit codes: 0 success, 1 other failure, 2 bad configuration, 3 bad data,
4 failed numerical or metric check.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from collections import Counter
from contextlib import contextmanager
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import PRESETS, RunConfig, make_config
from .data_model import NormalizationSpec
from .dataset_io import PROTOCOLS, load_manifest, load_video, make_folds, write_dataset
from .errors import CheckFailure, ConfigError, DataError, GeovisError
from .evaluation import KIND_LABEL, TASKS, make_report, predict
from .metrics import aggregate_folds, check_monotone, read_report_csv, write_report_csv

log = logging.getLogger("geovis")


# ---------------------------------------------------------------- config flags

def _add_config_args(p: argparse.ArgumentParser, default_preset: str = "desk") -> None:
    g = p.add_argument_group("configuration")
    g.add_argument("--preset", default=default_preset, choices=sorted(PRESETS))
    g.add_argument("--config", type=Path, help="JSON file, nested by section or flat dotted keys")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="dotted override, repeatable")
    for section in dataclasses.fields(RunConfig):
        for f in dataclasses.fields(section.default_factory()):
            key = f"{section.name}.{f.name}"
            g.add_argument(f"--{key}", dest=f"cfg:{key}", default=argparse.SUPPRESS, metavar="V")


def _config_overrides(args: argparse.Namespace) -> dict:
    out: dict = {}
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config file {args.config}: {e}") from None
        for k, v in raw.items():
            if isinstance(v, dict):
                out.update({f"{k}.{kk}": vv for kk, vv in v.items()})
            else:
                out[k] = v
    for name, value in vars(args).items():
        if name.startswith("cfg:"):
            out[name[4:]] = value
    for item in getattr(args, "set", []):
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key] = value
    return out


def _explicit_config(args: argparse.Namespace) -> bool:
    return bool(args.config or args.set or any(n.startswith("cfg:") for n in vars(args)))


def build_config(args: argparse.Namespace) -> RunConfig:
    return make_config(args.preset, _config_overrides(args))


# ---------------------------------------------------------------- helpers

@contextmanager
def run_lock(run_dir: Path):
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = run_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise GeovisError(f"{run_dir} is locked by another run (remove {lock} if stale)") from None
    os.write(fd, str(os.getpid()).encode())
    os.close(fd)
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


def _select(manifest, args) -> tuple[list[str], list[str]]:
    """(train ids, test ids) from a named split or a protocol fold."""
    if args.protocol:
        subjects = args.test_subjects.split(",") if args.test_subjects else None
        folds = make_folds(manifest, args.protocol, subjects)
        if not 0 <= args.fold < len(folds):
            raise ConfigError(f"--fold {args.fold} out of range; {args.protocol} has {len(folds)} folds")
        return folds[args.fold]
    if manifest.splits:
        return manifest.splits.get("train", []), manifest.splits.get("test", [])
    return manifest.video_ids, manifest.video_ids


def _add_split_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--protocol", choices=PROTOCOLS, help="cross-validation protocol (default: manifest splits)")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--test-subjects", help="comma-separated, for fixed-test-subjects")


def _deterministic() -> None:
    torch.use_deterministic_algorithms(True)


def _artifact_header(cfg: RunConfig, **extra) -> dict:
    return {"config_hash": cfg.hash(), "seed": cfg.train.seed, "code_version": __version__, **extra}


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    from .synth import make_benchmark

    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise DataError(f"{out} is not empty (pass --force to overwrite)")
    kwargs = {"visual_noise": args.visual_noise} if args.visual_noise is not None else {}
    bench = make_benchmark(args.preset, args.seed, **kwargs)
    write_dataset(out, f"synth-{args.preset}", bench.sequences, bench.label_spaces, bench.resolution,
                  {"train": bench.train_ids, "test": bench.test_ids})
    print(f"dataset synth-{args.preset} (seed {args.seed}) -> {out}")
    print(f"videos: {len(bench.sequences)} ({len(bench.train_ids)} train, {len(bench.test_ids)} test), "
          f"subjects: {len(bench.subjects)}, frames/video: {bench.sequences[0].T}")
    for kind, names in bench.label_spaces.items():
        hist: Counter = Counter()
        for s in bench.sequences:
            for e in s.entities:
                if e.kind == kind:
                    hist.update(e.labels[e.label_mask].tolist())
        total = sum(hist.values()) or 1
        print(f"{KIND_LABEL[kind]} classes:")
        for i, name in enumerate(names):
            print(f"  {name:<12} {hist[i]:>7}  {100 * hist[i] / total:5.1f}%")
    return 0


def cmd_train(args) -> int:
    from .plotting import plot_loss
    from .training import prepare, resolve_model_config, train

    _deterministic()
    cfg = build_config(args)
    manifest = load_manifest(args.data)
    train_ids, test_ids = _select(manifest, args)
    run_dir = Path(args.run_dir)
    with run_lock(run_dir):
        seqs = prepare([load_video(manifest, v) for v in train_ids], cfg)
        cfg = resolve_model_config(cfg, seqs, manifest.label_spaces)
        norm = NormalizationSpec(*manifest.resolution)
        extra = {"dataset": manifest.name, "train_videos": train_ids}

        def on_stage_end(stage, model):
            save_checkpoint(run_dir / f"stage{stage}.ckpt", model, cfg, extra)

        result = train(cfg, seqs, norm, on_stage_end=on_stage_end)
        save_checkpoint(run_dir / "model.ckpt", result.model, cfg, extra)
        (run_dir / "config.json").write_text(json.dumps({**_artifact_header(cfg), "config": cfg.to_dict()},
                                                        indent=1, sort_keys=True))
        with open(run_dir / "train_log.jsonl", "w") as fh:
            fh.write(json.dumps(_artifact_header(cfg), sort_keys=True) + "\n")
            for rec in result.history:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        losses = [r["loss"] for r in result.history]
        if losses:
            plot_loss(run_dir / "loss.svg", losses, cfg.train.stage1_steps if cfg.train.stage2_steps else None,
                      _artifact_header(cfg))
    print(f"trained {cfg.tag()} (config {cfg.hash()}, seed {cfg.train.seed}) on {len(train_ids)} videos "
          f"-> {run_dir / 'model.ckpt'}")
    if losses:
        print(f"final loss {losses[-1]:.4f}")
    return 0


def cmd_eval(args) -> int:
    from .plotting import plot_timelines
    from .training import prepare

    _deterministic()
    model, cfg, index = load_checkpoint(args.checkpoint)
    if _explicit_config(args):
        want = build_config(args)
        for key in ("n_keypoints", "visual_dim", "max_humans", "max_objects", "n_sub_activities", "n_affordances"):
            setattr(want.model, key, getattr(cfg.model, key))
        if want.hash() != index["config_hash"] and not args.force:
            raise ConfigError(f"checkpoint config hash {index['config_hash']} != requested {want.hash()} "
                              "(pass --force to evaluate anyway)")
    manifest = load_manifest(args.data)
    _, test_ids = _select(manifest, args)
    seqs = prepare([load_video(manifest, v) for v in test_ids], cfg)
    norm = NormalizationSpec(*manifest.resolution)
    preds = predict(model, seqs, norm)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tasks = TASKS if args.task == "all" else (args.task,)
    rows = []
    for task in tasks:
        rows += make_report(preds, seqs, task, manifest.name, str(args.fold if args.protocol else "split")).rows()
    header = _artifact_header(cfg, checkpoint=Path(args.checkpoint).name, dataset=manifest.name)
    write_report_csv(out / "metrics.csv", rows, header)
    if not args.no_figures:
        for s in seqs:
            for kind, names in manifest.label_spaces.items():
                ents = [e for e in s.entities if e.kind == kind]
                if not ents:
                    continue
                tl = [(e.entity_id, np.where(e.label_mask, e.labels, -1),
                       np.where(e.label_mask, preds[s.video_id][e.entity_id].frames, -1)) for e in ents]
                plot_timelines(out / "figures" / f"{s.video_id}_{kind}.svg", s.video_id, tl, names, header)
    _print_rows(rows)
    bad = check_monotone(rows)
    if bad:
        raise CheckFailure("F1@k rises with k: " + "; ".join(bad))
    return 0


def _print_rows(rows) -> None:
    print(f"{'task':<20} {'kind':<13} {'k':>5} {'P':>6} {'R':>6} {'F1':>6}")
    for r in rows:
        print(f"{r['task']:<20} {r['kind']:<13} {r['k']:>5.2f} {100 * r['precision']:6.1f} "
              f"{100 * r['recall']:6.1f} {100 * r['f1']:6.1f}")


def cmd_gradcheck(args) -> int:
    from .gradcheck import all_passed, check_model, format_table

    cfg = build_config(args)
    results = check_model(cfg, tol=args.tol, seed=args.seed, corrupt=args.corrupt)
    print(format_table(results))
    if not all_passed(results):
        raise CheckFailure("gradient check failed for " + ", ".join(r.group for r in results if not r.passed))
    return 0


def _collect_csvs(paths: Sequence[str]) -> list[Path]:
    files: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            files += sorted(p.rglob("metrics.csv"))
        elif p.exists():
            files.append(p)
        else:
            raise DataError(f"{p}: no such file or directory")
    if not files:
        raise DataError("no metrics.csv files found")
    return files


def cmd_report(args) -> int:
    from .plotting import plot_ablation

    rows, hashes, seeds = [], set(), set()
    for f in _collect_csvs(args.inputs):
        r, head = read_report_csv(f)
        rows += r
        hashes.add(head.get("config_hash", "?"))
        seeds.add(head.get("seed", "?"))
    header = {"config_hash": ",".join(sorted(hashes)), "seed": ",".join(sorted(seeds)), "code_version": __version__}
    bad = check_monotone(rows)
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        groups.setdefault((r["dataset"], r["task"], r["kind"], r["k"]), []).append(r["f1"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"{'dataset':<16} {'task':<20} {'kind':<13} {'k':>5} {'folds':>5}  F1 (mean ± std)"]
    with open(out / "summary.csv", "w") as fh:
        fh.writelines(f"# {k}={v}\n" for k, v in header.items())
        fh.write("dataset,task,kind,k,folds,f1_mean,f1_std\n")
        for (ds, task, kind, k), vals in sorted(groups.items()):
            mean, std = aggregate_folds(vals)
            fh.write(f"{ds},{task},{kind},{k:g},{len(vals)},{mean:.10g},{std:.10g}\n")
            lines.append(f"{ds:<16} {task:<20} {kind:<13} {k:>5.2f} {len(vals):>5}  "
                         f"{100 * mean:.1f} ± {100 * std:.1f}")
    (out / "summary.txt").write_text("".join(f"# {k}={v}\n" for k, v in header.items()) + "\n".join(lines) + "\n")
    bars: dict[str, dict[str, list[float]]] = {}
    for (ds, task, kind, k), vals in sorted(groups.items()):
        bars.setdefault(f"{ds} {task} {kind}", {})[f"F1@{int(round(100 * k))}"] = vals
    plot_ablation(out / "summary.svg", bars, header)
    print("\n".join(lines))
    if bad:
        raise CheckFailure("F1@k rises with k: " + "; ".join(bad))
    return 0


def cmd_ablate(args) -> int:
    from .experiments import ABLATIONS, format_table, run_ablation, write_table_csv
    from .plotting import plot_ablation

    _deterministic()
    cfg = build_config(args)
    manifest = load_manifest(args.data)
    train_ids, test_ids = _select(manifest, args)
    variants = args.variants.split(",")
    unknown = set(variants) - set(ABLATIONS)
    if unknown:
        raise ConfigError(f"unknown ablation variants {sorted(unknown)}; choose from {list(ABLATIONS)}")
    seeds = [int(s) for s in args.seeds.split(",")]
    tr = [load_video(manifest, v) for v in train_ids]
    te = [load_video(manifest, v) for v in test_ids]
    norm = NormalizationSpec(*manifest.resolution)
    out = Path(args.out)
    with run_lock(out):
        table = run_ablation(cfg, tr, te, manifest.label_spaces, norm, seeds, variants, manifest.name)
        text = format_table(table)
        (out / "ablation.txt").write_text(f"# config_hash={cfg.hash()} seeds={args.seeds} "
                                          f"code_version={__version__}\n{text}\n")
        header = _artifact_header(cfg, seeds=args.seeds)
        write_table_csv(out / "ablation.csv", table, header)
        plot_ablation(out / "ablation.svg", table, header)
    print(text)
    return 0


def cmd_folds(args) -> int:
    manifest = load_manifest(args.data)
    subjects = args.test_subjects.split(",") if args.test_subjects else None
    for i, (train, test) in enumerate(make_folds(manifest, args.protocol, subjects)):
        held = sorted({s for v in test for s in manifest.entry(v).subject_ids})
        print(f"fold {i}: test subjects {','.join(held)}; {len(train)} train / {len(test)} test videos")
    return 0


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gvhoi", description="Multi-entity human-object interaction recognition")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic benchmark")
    p.add_argument("--preset", default="tiny", choices=("tiny", "small"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--visual-noise", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true", help="write into a non-empty directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="two-stage training")
    p.add_argument("--data", required=True, help="dataset root or name under $GVHOI_DATA_ROOT")
    p.add_argument("--run-dir", required=True)
    _add_split_args(p)
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint and draw timelines")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--task", default="all", choices=(*TASKS, "all"))
    p.add_argument("--force", action="store_true", help="ignore a config hash mismatch")
    p.add_argument("--no-figures", action="store_true")
    _add_split_args(p)
    _add_config_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--corrupt", help="perturb one group's analytic gradient (checker self-test)")
    _add_config_args(p, default_preset="reference")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="aggregate metrics.csv files across folds")
    p.add_argument("inputs", nargs="+", help="metrics.csv files or directories searched recursively")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("ablate", help="train and score component ablations over several seeds")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--variants", default="full,-IEG,-CAF-IEG,GCN-CAF-IEG")
    _add_split_args(p)
    _add_config_args(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("folds", help="list cross-validation folds")
    p.add_argument("--data", required=True)
    p.add_argument("--protocol", required=True, choices=PROTOCOLS)
    p.add_argument("--test-subjects")
    p.set_defaults(func=cmd_folds)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GeovisError as e:
        print(f"gvhoi {args.command}: error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
