"""Command-line entry points.

Subcommands:

    train    grow and train an ensemble from a manifest, write checkpoints
    sweep    repeat training across branching levels and tabulate the trade
    eval     score a checkpoint on a manifest, write a report
    explain  render per-branch saliency heatmaps for one sample
    count    print the parameter cost of an architecture at chosen levels
    synth    generate the synthetic benchmark dataset

Thread pinning: ``--threads N`` (or the ``ESR_NET_THREADS`` variable) caps
the BLAS thread pools. It must act before numpy loads, so this module
imports the heavy packages lazily inside each handler.

Files written by ``train`` into ``--out``: ``branch<b>.npz`` after each
branch (``net<n>.npz`` for bagging), ``final.npz``, ``train_log.csv``, and
when ``--val`` is given ``report.txt`` plus ``confusion.csv``. ``eval``
writes the same two report files; ``explain`` writes
``heatmap_branch<b>.png`` and ``cam_branch<b>.csv``; ``sweep`` writes
``sweep.csv``; ``synth`` writes ``images/``, ``manifest.csv`` and the
``train/val/test.csv`` splits.
"""

from __future__ import annotations

import argparse
import os
import sys

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS")


def _pin_threads(count: int | None) -> None:
    if count is None:
        env = os.environ.get("ESR_NET_THREADS")
        count = int(env) if env else None
    if count is None:
        return
    if count < 1:
        raise SystemExit("--threads must be >= 1")
    if "numpy" in sys.modules:
        print("warning: numpy already loaded, thread cap may not apply", file=sys.stderr)
    for var in _THREAD_VARS:
        os.environ[var] = str(count)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="esrnet",
        description="shared-trunk convolutional ensembles: train, evaluate, explain")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS threads (default: ESR_NET_THREADS or unlimited)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common_train_args(p):
        p.add_argument("--config", required=True,
                       help="architecture name (toy|lab|wild) or JSON path")
        p.add_argument("--data", required=True, help="training manifest CSV")
        p.add_argument("--val", help="validation manifest CSV")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--level", type=int, default=0,
                       help="branching level override (default: config value)")
        p.add_argument("--branches", type=int, default=4)
        p.add_argument("--strategy", default="fixed",
                       choices=["fixed", "varied", "frozen", "interleaved", "bagging"])
        p.add_argument("--epochs", type=int, default=10, help="epochs per branch")
        p.add_argument("--batch", type=int, default=32)
        p.add_argument("--lr", type=float, default=0.1)
        p.add_argument("--lr-decay", type=float, default=0.75)
        p.add_argument("--lr-every", type=int, default=10)
        p.add_argument("--momentum", type=float, default=0.9)
        p.add_argument("--subset-policy", default="subject-rotation",
                       choices=["full", "subject-rotation", "balanced-cap"])
        p.add_argument("--subset-cap", type=int, default=0)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--wall-clock", action="store_true",
                       help="record real epoch times instead of 0.000")

    p = sub.add_parser("train", help="train one ensemble")
    common_train_args(p)

    p = sub.add_parser("sweep", help="train at several branching levels")
    common_train_args(p)
    p.add_argument("--levels", required=True,
                   help="comma-separated branching levels, e.g. 3,4,5")

    p = sub.add_parser("eval", help="score a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True, nargs="+",
                   help="one ensemble checkpoint, or several single nets to stack")
    p.add_argument("--data", required=True)
    p.add_argument("--method", default="plurality", choices=["plurality", "mean-prob"])
    p.add_argument("--out", help="directory for report.txt and confusion.csv")

    p = sub.add_parser("explain", help="saliency heatmaps for one manifest row")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--row", type=int, default=0, help="manifest row (0-based)")
    p.add_argument("--branch", type=int, default=0, help="branch number, 0 = all")
    p.add_argument("--class-index", type=int, default=None)
    p.add_argument("--alpha", type=float, default=0.5, help="heatmap blend weight")
    p.add_argument("--out", required=True)

    p = sub.add_parser("count", help="parameter costs per branching level")
    p.add_argument("--config", required=True)
    p.add_argument("--levels", default=None, help="comma list, default: all levels")
    p.add_argument("--branches", type=int, default=4)

    p = sub.add_parser("synth", help="write the synthetic benchmark dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=20)
    p.add_argument("--samples-per-subject", type=int, default=10)
    p.add_argument("--size", type=int, default=48)
    p.add_argument("--difficulty", type=float, default=0.35)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-splits", action="store_true",
                   help="write only the full manifest, no train/val/test")
    return parser


def _load_config(args):
    from .architecture import load_architecture

    cfg = load_architecture(args.config)
    if args.level:
        cfg = cfg.at_level(args.level)
    return cfg


def _load_split(path, config):
    from .data import load_dataset
    from .training import TrainData

    index = load_dataset(path)
    size = config.input_shape[1:]
    return TrainData.from_index(index, size, channels=config.input_shape[0])


def _train_config(args):
    from .training import LrSchedule, TrainConfig

    return TrainConfig(
        strategy=args.strategy,
        num_branches=args.branches,
        epochs_per_branch=args.epochs,
        batch_size=args.batch,
        momentum=args.momentum,
        schedule=LrSchedule(args.lr, args.lr_decay, args.lr_every),
        seed=args.seed,
        subset_policy=args.subset_policy,
        subset_cap=args.subset_cap,
        deterministic=not args.wall_clock,
    )


def _write_report(logits, data, out_dir, method):
    from .metrics import evaluate, residual_error_report, save_confusion_csv

    report = evaluate(logits, data.labels, method=method)
    text = residual_error_report(report).text
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.txt"), "w") as fh:
            fh.write(text)
        save_confusion_csv(report, os.path.join(out_dir, "confusion.csv"))
    return report, text


def _run_training(args, config, data, val):
    from .training import train_esr, train_interleaved, train_traditional_ensemble

    cfg = _train_config(args)
    if args.strategy == "interleaved":
        return train_interleaved(config, data, cfg, val=val, out_dir=args.out)
    if args.strategy == "bagging":
        return train_traditional_ensemble(config, data, cfg, val=val, out_dir=args.out)
    return train_esr(config, data, cfg, val=val, out_dir=args.out)


def cmd_train(args) -> int:
    config = _load_config(args)
    data = _load_split(args.data, config)
    val = _load_split(args.val, config) if args.val else None
    result = _run_training(args, config, data, val)
    print(f"trained {args.strategy} ensemble, {args.branches} branches, "
          f"log: {result.log_path}")
    if val is not None:
        logits = result.model.predict_logits(val.inputs)
        report, text = _write_report(logits, val, args.out, "plurality")
        print(text, end="")
        print(f"validation accuracy: {report.accuracy:.4f}")
    return 0


def cmd_sweep(args) -> int:
    import csv as csv_mod

    from .architecture import ensemble_parameter_count, load_architecture, parameter_plan
    from .metrics import evaluate

    base = load_architecture(args.config)
    levels = [int(v) for v in args.levels.split(",")]
    for level in levels:
        if not 1 <= level <= len(base.stages):
            raise SystemExit(f"level {level} out of range 1..{len(base.stages)}")
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for level in levels:
        config = base.at_level(level)
        data = _load_split(args.data, config)
        val = _load_split(args.val, config) if args.val else None
        sweep_args = argparse.Namespace(**vars(args))
        sweep_args.out = os.path.join(args.out, f"level{level}")
        result = _run_training(sweep_args, config, data, val)
        plan = parameter_plan(config)
        ensemble = ensemble_parameter_count(config, args.branches)
        saving = 1.0 - ensemble / (args.branches * plan["single"])
        acc = ""
        if val is not None:
            acc = f"{evaluate(result.model.predict_logits(val.inputs), val.labels).accuracy:.4f}"
        rows.append([level, ensemble, plan["single"], f"{100 * saving:.2f}", acc])
        print(f"level {level}: params {ensemble}, saving {100 * saving:.2f}%"
              + (f", val acc {acc}" if acc else ""))
    path = os.path.join(args.out, "sweep.csv")
    with open(path, "w", newline="") as fh:
        writer = csv_mod.writer(fh)
        writer.writerow(["level", "ensemble_params", "single_params",
                         "saving_pct", "val_accuracy"])
        writer.writerows(rows)
    print(f"wrote {path}")
    return 0


def cmd_eval(args) -> int:
    import numpy as np

    from .checkpoint import load_checkpoint
    from .metrics import ensemble_affect

    models = [load_checkpoint(p) for p in args.checkpoint]
    config = models[0].config
    data = _load_split(args.data, config)
    logits = np.concatenate([m.predict_logits(data.inputs) for m in models], axis=0)
    if data.labels is None:
        raise SystemExit("manifest has no emotion labels to score against")
    report, text = _write_report(logits, data, args.out, args.method)
    print(text, end="")
    if all(m.has_affect_heads for m in models) and data.arousal is not None:
        preds = np.concatenate([m.predict_affect(data.inputs) for m in models], axis=0)
        rmse = float(np.sqrt(np.mean((ensemble_affect(preds) - data.affect_targets) ** 2)))
        print(f"affect rmse: {rmse:.4f}")
    return 0


def cmd_explain(args) -> int:
    import numpy as np

    from .checkpoint import load_checkpoint
    from .data import load_dataset
    from .data.preprocess import preprocess
    from .explain import (branch_saliency_maps, diversity_score, grad_cam,
                          render_heatmap, save_cam_csv, save_heatmap_png)

    model = load_checkpoint(args.checkpoint)
    config = model.config
    index = load_dataset(args.data)
    if not 0 <= args.row < len(index):
        raise SystemExit(f"--row must be in 0..{len(index) - 1}")
    raw = index.load_image(index[args.row])
    tensor = preprocess(raw, config.input_shape[1:], channels=config.input_shape[0])
    gray = np.asarray(raw, dtype=np.float64)
    gray = (gray if gray.ndim == 2 else gray.mean(axis=2)) / 255.0

    if args.branch:
        results = [grad_cam(model, tensor, args.branch, args.class_index)]
    else:
        results = branch_saliency_maps(model, tensor, args.class_index)
    os.makedirs(args.out, exist_ok=True)
    for res in results:
        png = os.path.join(args.out, f"heatmap_branch{res.branch}.png")
        save_heatmap_png(png, render_heatmap(gray, res.cam, alpha=args.alpha))
        save_cam_csv(os.path.join(args.out, f"cam_branch{res.branch}.csv"), res.cam)
        print(f"branch {res.branch}: class {res.class_index}, layer {res.layer}, {png}")
    if len(results) > 1:
        print(f"diversity score: {diversity_score(results):.4f}")
    return 0


def cmd_count(args) -> int:
    from .architecture import ensemble_parameter_count, load_architecture, parameter_plan

    base = load_architecture(args.config)
    levels = ([int(v) for v in args.levels.split(",")] if args.levels
              else list(range(1, len(base.stages) + 1)))
    single = parameter_plan(base)["single"]
    print(f"{args.config}: single network {single} parameters, "
          f"{args.branches} independent nets {args.branches * single}")
    print("level  shared  per-branch  ensemble  saving")
    for level in levels:
        cfg = base.at_level(level)
        plan = parameter_plan(cfg)
        ensemble = ensemble_parameter_count(cfg, args.branches)
        saving = 1.0 - ensemble / (args.branches * single)
        print(f"{level:>5}  {plan['shared']:>6}  {plan['branch']:>10}  "
              f"{ensemble:>8}  {100 * saving:6.2f}%")
    return 0


def cmd_synth(args) -> int:
    from .data import SynthConfig, write_dataset

    cfg = SynthConfig(subjects=args.subjects,
                      samples_per_subject=args.samples_per_subject,
                      size=args.size, difficulty=args.difficulty, seed=args.seed)
    splits = None if args.no_splits else (0.6, 0.2, 0.2)
    paths = write_dataset(args.out, cfg, splits=splits)
    for name in sorted(paths):
        print(f"{name}: {paths[name]}")
    return 0


_HANDLERS = {
    "train": cmd_train,
    "sweep": cmd_sweep,
    "eval": cmd_eval,
    "explain": cmd_explain,
    "count": cmd_count,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    _pin_threads(args.threads)
    return _HANDLERS[args.command](args)


if __name__ == "__main__":
    raise SystemExit(main())
