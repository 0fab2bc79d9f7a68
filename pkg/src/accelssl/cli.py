"""Command-line surface tying the pipeline, training and protocols together.

Exit codes: 0 success, 2 configuration/validation error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import multiprocessing
import sys
from pathlib import Path

import numpy as np

from .data import compute_norm_stats, load_dataset, read_manifest
from .errors import ConfigError, FormatError, HarnessError, SchemaError
from .runner import prepare_dataset, run, validate_config
from .report import VIEWS, report
from .store import read_records
from .synthetic import SyntheticConfig, make_synthetic_dataset
from .training import HyperparamCombo, TrainBudget, pretrain

log = logging.getLogger(__name__)


def _load_config(args) -> dict:
    if not args.config:
        return {}
    path = Path(args.config)
    try:
        if path.is_file():
            with open(path, encoding="utf-8") as f:
                return json.load(f)
        return json.loads(args.config)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e


def _merge_common(config: dict, args) -> dict:
    config = dict(config)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.out:
        config["out"] = args.out
    if args.store:
        config["store"] = args.store
    return config


def cmd_prepare_data(args):
    config = _merge_common(_load_config(args), args)
    out = Path(config.get("out", "prepared"))
    if "synthetic" in config:
        cfg = SyntheticConfig(**config["synthetic"])
        if args.seed is not None:
            cfg.seed = args.seed
        make_synthetic_dataset(out, cfg)
        print(json.dumps({"dataset": str(out), "users": cfg.num_users,
                          "classes": cfg.num_classes}))
        return 0
    dataset = config.get("dataset")
    if not dataset:
        raise ConfigError("prepare-data needs 'dataset' or 'synthetic' in the config")
    prep = prepare_dataset(dataset, rate_hz=float(config.get("rate_hz", 50.0)),
                           window=int(config.get("window", 100)),
                           overlap=float(config.get("overlap", 0.5)),
                           k_folds=int(config.get("folds", 5)),
                           seed=int(config.get("seed", 0)))
    out.mkdir(parents=True, exist_ok=True)
    stats = compute_norm_stats(prep.windows)
    np.savez_compressed(out / "windows.npz", values=prep.windows.values,
                        labels=prep.windows.labels,
                        user_ids=np.asarray(prep.windows.user_ids, dtype=str),
                        origins=prep.windows.origins)
    with open(out / "stats.json", "w", encoding="utf-8") as f:
        json.dump({"mean": stats.mean.tolist(), "std": stats.std.tolist(),
                   "source_dataset_id": stats.source_dataset_id}, f, indent=2)
    with open(out / "folds.json", "w", encoding="utf-8") as f:
        json.dump([{"train": sorted(fd.train_users), "val": sorted(fd.val_users),
                    "test": sorted(fd.test_users)}
                   for fd in prep.fold_plan.folds], f, indent=2)
    print(json.dumps({"windows": len(prep.windows),
                      "classes": prep.schema.class_names,
                      "out": str(out)}))
    return 0


def cmd_pretrain(args):
    config = _merge_common(_load_config(args), args)
    method = config.get("method")
    dataset = config.get("dataset")
    if not method or not dataset:
        raise ConfigError("pretrain needs 'method' and 'dataset'")
    prep = prepare_dataset(dataset, rate_hz=float(config.get("rate_hz", 50.0)),
                           window=int(config.get("window", 100)),
                           overlap=float(config.get("overlap", 0.0)),
                           k_folds=2, seed=int(config.get("seed", 0)))
    from .runner import source_pretrain_splits
    train_ws, val_ws, _ = source_pretrain_splits(prep, seed=int(config.get("seed", 0)))
    budget = TrainBudget(max_epochs=int(config.get("max_epochs", 50)),
                         early_stop_patience=int(config.get("patience", 5)),
                         batch_size=int(config.get("batch_size", 256)))
    combo = HyperparamCombo(config.get("combo", {}))
    ckpt, history = pretrain(method, train_ws, combo, budget,
                             seed=int(config.get("seed", 0)), val_ws=val_ws)
    out = Path(config.get("out", f"checkpoint_{method}"))
    from .checkpoint import save_checkpoint
    save_checkpoint(ckpt, out)
    print(json.dumps({"checkpoint": str(out), "epochs": history.epochs_run,
                      "best_epoch": history.best_epoch,
                      "best_val_loss": min(history.val_loss)}))
    return 0


def cmd_finetune(args):
    config = _merge_common(_load_config(args), args)
    ckpt_path = config.get("checkpoint")
    dataset = config.get("dataset")
    if not ckpt_path or not dataset:
        raise ConfigError("finetune needs 'checkpoint' and 'dataset'")
    from .checkpoint import load_checkpoint
    from .runner import evaluate_fold
    ckpt = load_checkpoint(ckpt_path)
    prep = prepare_dataset(dataset, rate_hz=float(config.get("rate_hz", 50.0)),
                           window=int(config.get("window", 100)),
                           overlap=float(config.get("overlap", 0.5)),
                           k_folds=int(config.get("folds", 5)),
                           seed=int(config.get("seed", 0)))
    budget = TrainBudget(max_epochs=int(config.get("max_epochs", 50)),
                         early_stop_patience=int(config.get("patience", 5)),
                         batch_size=int(config.get("batch_size", 256)))
    metrics = evaluate_fold(ckpt, prep, int(config.get("fold", 0)),
                            config.get("head", "linear"),
                            HyperparamCombo(config.get("combo", {})), budget,
                            seed=int(config.get("seed", 0)))
    print(json.dumps(metrics))
    return 0


def _run_config(config):
    records, new_runs = run(config)
    return len(records), new_runs


def cmd_run_like(args, criterion=None):
    config = _merge_common(_load_config(args), args)
    if criterion is not None:
        config["criterion"] = criterion
    config = validate_config(config)
    workers = args.workers or int(config.get("workers", 1))
    methods = config["methods"]
    if workers > 1 and len(methods) > 1:
        # one process per method; record appends are line-atomic
        chunks = [dict(config, methods=[m]) for m in methods]
        with multiprocessing.get_context("spawn").Pool(min(workers, len(chunks))) as pool:
            results = pool.map(_run_config, chunks)
        total = sum(r[0] for r in results)
        fresh = sum(r[1] for r in results)
    else:
        total, fresh = _run_config(config)
    print(json.dumps({"records": total, "new_runs": fresh}))
    return 0


def cmd_analyze(args):
    config = _merge_common(_load_config(args), args)
    config["criterion"] = "feature_space"
    config = validate_config(config)
    records, _ = run(config)
    wanted = {
        "cka": ("cka_diag_mean",),
        "separability": ("separability_gap", "true_label_f1", "random_label_f1"),
        "dimensionality": ("evr_5", "evr_20"),
    }[args.kind]
    summary = {}
    for record in records:
        entry = summary.setdefault(record.method, {})
        for key in wanted:
            if key in record.metrics:
                entry.setdefault(key, []).append(record.metrics[key])
    print(json.dumps({m: {k: float(np.mean(v)) for k, v in e.items()}
                      for m, e in summary.items()}, indent=2))
    return 0


def cmd_report(args):
    config = _merge_common(_load_config(args), args)
    store = config.get("store")
    if not store:
        raise ConfigError("report needs --store")
    files = report(store, args.view, config.get("out", "reports"))
    print(json.dumps({"files": [str(f) for f in files]}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="accelssl",
        description="Self-supervised pretraining and assessment for "
                    "tri-axial accelerometer data")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON string or path to a JSON file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--store", default=None)
        p.add_argument("--workers", type=int, default=None)

    common(sub.add_parser("prepare-data", help="ingest/resample/window/normalize "
                                               "or generate the synthetic dataset"))
    common(sub.add_parser("pretrain", help="pretrain one method on a dataset"))
    common(sub.add_parser("finetune", help="fine-tune a checkpoint on one fold"))
    common(sub.add_parser("sweep", help="random hyperparameter search with k-fold CV"))
    protocol = sub.add_parser("protocol", help="run an assessment criterion by name")
    common(protocol)
    analyze = sub.add_parser("analyze", help="feature-space analyses")
    analyze.add_argument("kind", choices=["cka", "separability", "dimensionality"])
    common(analyze)
    rep = sub.add_parser("report", help="render tables/plots from a record store")
    rep.add_argument("view", choices=list(VIEWS))
    common(rep)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "prepare-data":
            return cmd_prepare_data(args)
        if args.command == "pretrain":
            return cmd_pretrain(args)
        if args.command == "finetune":
            return cmd_finetune(args)
        if args.command == "sweep":
            return cmd_run_like(args, criterion="sweep")
        if args.command == "protocol":
            return cmd_run_like(args)
        if args.command == "analyze":
            return cmd_analyze(args)
        if args.command == "report":
            return cmd_report(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, SchemaError, FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except HarnessError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # pragma: no cover - defensive
        log.exception("unhandled failure")
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
