"""Desk-scale learning-signal benchmark on the shipped synthetic dataset.

For each pretext method: pretrain on the train split of one user fold,
freeze, fit a linear probe, and score test macro F1. The control arm runs
the identical probe on the same architecture at random initialization, so
the margin isolates what pretraining itself contributed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .data import compute_norm_stats, normalize
from .pretext import METHOD_NAMES, build_pretext_model
from .protocols import macro_f1
from .runner import fold_window_sets, prepare_dataset
from .synthetic import SyntheticConfig, generate_sequences
from .training import (HyperparamCombo, TrainBudget, extract_features, pretrain,
                       rebuild_pretext_model, train_head_on_features)

# hyperparameters that train well within a couple of minutes of CPU time;
# optimizer families still follow the per-method routing table
DESK_COMBOS = {
    "multitask": {"lr": 5e-4, "l2": 1e-4},
    "masked_recon": {"layers": 2, "mask_pct": 10, "lr": 1e-3},
    "cpc": {"lr": 1e-3, "l2": 0.0, "kernel": 3, "k": 32, "batch_size": 128},
    "autoencoder": {"lr": 1e-3, "l2": 0.0, "kernel": 3},
    "simclr": {"lr": 1e-2, "l2": 0.0, "batch_size": 256},
    "simsiam": {"lr": 5e-2, "l2": 0.0, "batch_size": 256},
    "byol": {"lr": 1e-2, "l2": 0.0, "batch_size": 256, "ema_decay": 0.99},
}

DESK_EPOCHS = {
    "multitask": 10,
    "masked_recon": 5,
    "cpc": 5,
    "autoencoder": 8,
    "simclr": 12,
    "simsiam": 12,
    "byol": 12,
}


@dataclass
class BenchmarkResult:
    method: str
    pretrained_f1: list = field(default_factory=list)
    random_f1: list = field(default_factory=list)
    wall_time_s: float = 0.0

    @property
    def mean_pretrained(self) -> float:
        return float(np.mean(self.pretrained_f1))

    @property
    def mean_random(self) -> float:
        return float(np.mean(self.random_f1))

    @property
    def margin_points(self) -> float:
        """Mean improvement over the random-init probe, in F1 points."""
        return 100.0 * (self.mean_pretrained - self.mean_random)


def _probe(features_train, labels_train, features_val, labels_val,
           features_test, labels_test, num_classes, seed):
    clf = train_head_on_features(
        features_train, labels_train, features_val, labels_val,
        "linear", num_classes,
        HyperparamCombo({"classifier_lr": 1e-2, "classifier_l2": 0.0}),
        TrainBudget(max_epochs=30, early_stop_patience=5, batch_size=256),
        seed=seed)
    predictions = clf.predict_features(features_test)
    return macro_f1(predictions, labels_test, num_classes)


def linear_probe_margin(method: str, splits, num_classes: int, seed: int,
                        max_epochs: int | None = None,
                        combo: dict | None = None) -> tuple[float, float]:
    """(pretrained probe F1, random-init probe F1) for one method and seed."""
    train_ws, val_ws, test_ws = splits
    combo = HyperparamCombo(dict(DESK_COMBOS[method], **(combo or {})))
    epochs = max_epochs or DESK_EPOCHS[method]
    budget = TrainBudget(max_epochs=epochs, early_stop_patience=max(2, epochs - 1),
                         batch_size=int(combo.get("batch_size", 256)))
    ckpt, _ = pretrain(method, train_ws, combo, budget, seed=seed, val_ws=val_ws)
    model = rebuild_pretext_model(ckpt).eval()

    torch.manual_seed(seed)
    random_model = build_pretext_model(method, combo.values).eval()

    scores = []
    for net in (model, random_model):
        feats = [extract_features(net, ws.values)
                 for ws in (train_ws, val_ws, test_ws)]
        scores.append(_probe(feats[0], train_ws.labels, feats[1], val_ws.labels,
                             feats[2], test_ws.labels, num_classes, seed))
    return scores[0], scores[1]


def desk_benchmark(methods=METHOD_NAMES, seeds=(0, 1, 2, 3, 4),
                   cfg: SyntheticConfig | None = None, fold_index: int = 0,
                   max_epochs: int | None = None,
                   verbose: bool = False) -> dict[str, BenchmarkResult]:
    """Run the pretrained-vs-random probe comparison on the synthetic dataset."""
    cfg = cfg or SyntheticConfig()
    prep = prepare_dataset(generate_sequences(cfg), cfg.schema(),
                           rate_hz=cfg.sample_rate_hz,
                           window=cfg.window_length,
                           overlap=cfg.overlap_fraction, k_folds=5, seed=0)
    train_ws, val_ws, test_ws = fold_window_sets(prep, fold_index)
    stats = compute_norm_stats(train_ws)
    splits = tuple(normalize(ws, stats) for ws in (train_ws, val_ws, test_ws))
    results = {}
    for method in methods:
        started = time.perf_counter()
        result = BenchmarkResult(method=method)
        for seed in seeds:
            pretrained, random_init = linear_probe_margin(
                method, splits, prep.num_classes, seed, max_epochs=max_epochs)
            result.pretrained_f1.append(pretrained)
            result.random_f1.append(random_init)
        result.wall_time_s = time.perf_counter() - started
        results[method] = result
        if verbose:
            print(f"{method:>13}: pretrained {result.mean_pretrained:.3f} "
                  f"random {result.mean_random:.3f} "
                  f"margin {result.margin_points:+.1f} pts "
                  f"({result.wall_time_s:.0f}s)")
    return results
