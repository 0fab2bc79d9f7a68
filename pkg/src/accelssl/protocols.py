"""Assessment protocol primitives: the macro-F1 metric and the subset
generators behind the dataset-characteristic and transfer criteria."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .data import (ChannelStats, SensorSequence, WindowSet, compute_norm_stats,
                   make_windows, normalize, windows_from_sequences, resample)
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

CRITERIA = ("position_transfer", "activity_transfer", "rate_mismatch",
            "user_quantity", "window_quantity", "source_imbalance",
            "limited_labels", "norm_source_ablation", "feature_space")

USER_PCT_GRID = (1, 5, 10, 25, 50, 100)
WINDOW_PCT_GRID = (0.01, 0.1, 1, 10, 50, 100)
LABELS_PER_CLASS_GRID = (2, 5, 10, 50, 100)
IMBALANCE_RATIOS = (0.001, 0.01, 0.1)


@dataclass
class ProtocolConfig:
    criterion: str
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ConfigError(f"unknown criterion {self.criterion!r}")


# ---------------------------------------------------------------------------
# metric
# ---------------------------------------------------------------------------

def macro_f1(predictions, labels, num_classes: int) -> float:
    """Unweighted mean of per-class F1 = 2pr/(p+r).

    Classes with zero precision+recall denominator contribute 0.
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise DataError("predictions and labels must be equal-length 1D arrays")
    if predictions.size == 0:
        raise DataError("cannot score an empty prediction set")
    for arr, name in ((predictions, "prediction"), (labels, "label")):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise DataError(f"{name} ids outside [0, {num_classes})")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (labels, predictions), 1)
    tp = np.diag(confusion).astype(np.float64)
    predicted = confusion.sum(axis=0).astype(np.float64)
    actual = confusion.sum(axis=1).astype(np.float64)
    f1 = np.zeros(num_classes)
    # per-class F1 written via counts: 2tp / (predicted + actual)
    denom = predicted + actual
    nonzero = denom > 0
    f1[nonzero] = 2.0 * tp[nonzero] / denom[nonzero]
    return float(f1.mean())


# ---------------------------------------------------------------------------
# dataset-characteristic subset generators
# ---------------------------------------------------------------------------

def subsample_users(users, pct: float, seed: int = 0) -> list[str]:
    """floor(pct% of the users), at least 1, drawn uniformly without replacement."""
    users = sorted(map(str, users))
    n = max(1, int(math.floor(pct * len(users) / 100.0)))
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(users), size=n, replace=False)
    return sorted(users[i] for i in picked)


def subsample_windows(ws: WindowSet, pct: float, seed: int = 0) -> WindowSet:
    """Uniform without-replacement window subset of floor(pct%) windows."""
    n = max(1, int(math.floor(pct * len(ws) / 100.0)))
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(ws), size=n, replace=False))
    return ws.select(idx)


@dataclass
class ImbalanceSpec:
    rho: float
    majority_count: int = 20000
    num_classes: int = 6

    def __post_init__(self):
        if not 0.0 < self.rho <= 1.0:
            raise ConfigError(f"rho must lie in (0, 1], got {self.rho}")
        if self.num_classes < 2:
            raise ConfigError("imbalance needs at least 2 classes")


def imbalance_counts(spec: ImbalanceSpec) -> np.ndarray:
    """Per-class window counts on the exponential ladder.

    Class i (0-indexed) receives round(majority * exp(beta * i)) windows with
    beta = ln(rho) / (C - 1), so the rarest class ends at majority * rho.
    Rounding is numpy's round-half-to-even.
    """
    beta = math.log(spec.rho) / (spec.num_classes - 1)
    raw = spec.majority_count * np.exp(beta * np.arange(spec.num_classes))
    return np.round(raw).astype(np.int64)


def balanced_counts(spec: ImbalanceSpec) -> np.ndarray:
    """Equal split of the imbalanced total; remainders go to the first classes."""
    total = int(imbalance_counts(spec).sum())
    base, rem = divmod(total, spec.num_classes)
    counts = np.full(spec.num_classes, base, dtype=np.int64)
    counts[:rem] += 1
    return counts


@dataclass
class ImbalanceResult:
    imbalanced: WindowSet
    balanced: WindowSet
    counts: np.ndarray
    class_order: np.ndarray  # class id receiving counts[i]
    used_replacement: bool = False

    def __iter__(self):
        return iter((self.imbalanced, self.balanced))


def _draw_per_class(ws, class_ids, per_class_counts, rng):
    chosen, replaced = [], False
    for class_id, count in zip(class_ids, per_class_counts):
        pool = np.flatnonzero(ws.labels == class_id)
        if pool.size == 0:
            raise DataError(f"class {class_id} has no windows to draw from")
        if pool.size >= count:
            chosen.append(rng.choice(pool, size=count, replace=False))
        else:
            log.warning("class %d has %d windows, drawing %d with replacement",
                        class_id, pool.size, count)
            replaced = True
            chosen.append(rng.choice(pool, size=count, replace=True))
    return np.concatenate(chosen), replaced


def imbalance_subsets(ws: WindowSet, spec: ImbalanceSpec, seed: int = 0) -> ImbalanceResult:
    """Exponentially imbalanced subset plus its equal-total balanced twin.

    Which class plays majority/rarest is randomized by the seed. Classes
    short of windows fall back to drawing with replacement (flagged).
    """
    rng = np.random.default_rng(seed)
    class_order = rng.permutation(spec.num_classes)
    counts = imbalance_counts(spec)
    imb_idx, r1 = _draw_per_class(ws, class_order, counts, rng)
    bal_idx, r2 = _draw_per_class(ws, class_order, balanced_counts(spec), rng)
    return ImbalanceResult(imbalanced=ws.select(imb_idx), balanced=ws.select(bal_idx),
                           counts=counts, class_order=class_order,
                           used_replacement=r1 or r2)


def limited_label_subset(train: WindowSet, n_per_class: int, seed: int = 0) -> WindowSet:
    """At most n_per_class labeled windows per class, drawn uniformly."""
    rng = np.random.default_rng(seed)
    chosen = []
    for class_id in np.unique(train.labels):
        if class_id < 0:
            continue
        pool = np.flatnonzero(train.labels == class_id)
        take = min(n_per_class, pool.size)
        if take < n_per_class:
            log.warning("class %d has only %d windows (asked for %d)",
                        class_id, pool.size, n_per_class)
        chosen.append(rng.choice(pool, size=take, replace=False))
    if not chosen:
        raise DataError("no labeled windows available")
    return train.select(np.sort(np.concatenate(chosen)))


# ---------------------------------------------------------------------------
# transfer-condition variants
# ---------------------------------------------------------------------------

def rate_mismatch_variant(sequences: list[SensorSequence], use_native: bool,
                          dst_hz: float = 50.0, length_samples: int = 100,
                          overlap_fraction: float = 0.5,
                          class_names=None) -> WindowSet:
    """Window at the native rate (same sample count, shorter duration) or
    after downsampling to the pretraining rate."""
    if not use_native:
        sequences = [resample(s, min(dst_hz, s.sample_rate_hz)) for s in sequences]
    return windows_from_sequences(sequences, length_samples, overlap_fraction,
                                  class_names=class_names)


def norm_ablation(target: WindowSet, source_stats: ChannelStats | None,
                  mode: str) -> WindowSet:
    """Normalize a target set with source statistics or its own."""
    if mode == "source":
        if source_stats is None:
            raise ConfigError("source mode needs source statistics")
        return normalize(target, source_stats)
    if mode == "target":
        return normalize(target, compute_norm_stats(target))
    raise ConfigError(f"unknown normalization mode {mode!r}")
