"""Optimization loops, schedules, random hyperparameter search and the
pretrain -> freeze -> fine-tune workflow."""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import ModelCheckpoint, checkpoint_from_module, load_into_module
from .data import WindowSet
from .errors import ConfigError, DataError, TrainingDiverged
from .models import freeze, make_baseline, make_head
from .pretext import build_pretext_model, feature_dim
from .protocols import macro_f1

# pretraining search spaces, one per method
PRETRAIN_SPACES = {
    "multitask": {"lr": [1e-4, 3e-4, 5e-4], "l2": [1e-4, 3e-4, 5e-4]},
    "masked_recon": {"layers": [2, 3, 4, 5, 6],
                     "warmup": [20000, 40000, 60000, 80000, 100000],
                     "mask_pct": [10, 20, 30, 40, 50, 60, 70]},
    "cpc": {"lr": [1e-3, 5e-4, 1e-4], "l2": [0.0, 1e-4, 1e-5],
            "kernel": [3, 5], "batch_size": [64, 128, 256], "k": [32, 48, 64]},
    "autoencoder": {"lr": [1e-3, 5e-4, 1e-4], "l2": [0.0, 1e-4, 1e-5],
                    "kernel": [3, 5, 7, 9, 11]},
    "simclr": {"lr": [1e-2, 1e-3, 5e-3, 1e-4], "l2": [0.0, 1e-4, 1e-5],
               "batch_size": [1024, 2048, 4096]},
    "simsiam": {"lr": [1e-2, 5e-2, 1e-3, 5e-3, 1e-4, 5e-4, 1e-5],
                "l2": [0.0, 1e-4, 1e-5], "batch_size": [128, 256, 512]},
    "byol": {"lr": [1e-2, 5e-2, 1e-3, 5e-3, 1e-4, 5e-4, 1e-5],
             "l2": [0.0, 1e-4, 1e-5], "batch_size": [512, 1024, 2048, 4096]},
}

# classifier-stage spaces
CLASSIFIER_SPACES = {
    "multitask": {"classifier_lr": [1e-4, 3e-4, 5e-4],
                  "classifier_l2": [1e-4, 3e-4, 5e-4]},
    "default": {"classifier_lr": [1e-4, 5e-4, 1e-5],
                "classifier_l2": [0.0, 1e-4, 1e-5]},
}

# end-to-end baseline spaces
BASELINE_SPACES = {
    kind: {"lr": [1e-3, 5e-4, 1e-4], "l2": [0.0, 1e-4, 1e-5]}
    for kind in ("deepconvlstm", "lstm128", "gru128", "conv_classifier",
                 "mlp_classifier")
}

# which optimizer family each pretext method trains with
OPTIMIZER_ROUTING = {
    "multitask": "adam",
    "masked_recon": "adam",
    "cpc": "adam",
    "autoencoder": "adam",
    "simclr": "sgd_cosine",
    "simsiam": "sgd_cosine",
    "byol": "sgd_cosine",
}

SGD_MOMENTUM = 0.9


def classifier_space(method: str) -> dict:
    return CLASSIFIER_SPACES.get(method, CLASSIFIER_SPACES["default"])


@dataclass
class HyperparamCombo:
    values: dict
    draw_seed: int = 0

    def get(self, key, default=None):
        return self.values.get(key, default)

    def __getitem__(self, key):
        return self.values[key]


@dataclass
class TrainBudget:
    max_epochs: int = 50
    early_stop_patience: int = 5  # pretraining only
    batch_size: int = 256

    def __post_init__(self):
        if self.early_stop_patience >= self.max_epochs:
            raise ConfigError("patience must be smaller than max_epochs")


def space_size(space: dict) -> int:
    return int(np.prod([len(v) for v in space.values()])) if space else 0


def draw_combos(space: dict, n: int, seed: int = 0) -> list[HyperparamCombo]:
    """Full grid when the space has <= n points, else n distinct uniform draws."""
    if n < 1:
        raise ConfigError("n must be at least 1")
    keys = list(space.keys())
    sizes = [len(space[k]) for k in keys]
    if any(s == 0 for s in sizes):
        raise ConfigError("every space entry needs at least one value")
    total = space_size(space)
    if total <= n:
        picked = list(itertools.product(*(space[k] for k in keys)))
    else:
        rng = np.random.default_rng(seed)
        flat = rng.choice(total, size=n, replace=False)
        picked = []
        for code in flat:
            values, rem = [], int(code)
            for s in reversed(sizes):
                values.append(rem % s)
                rem //= s
            picked.append(tuple(space[k][i] for k, i in zip(keys, reversed(values))))
    return [HyperparamCombo(values=dict(zip(keys, combo)), draw_seed=seed)
            for combo in picked]


# ---------------------------------------------------------------------------
# learning-rate schedules
# ---------------------------------------------------------------------------

def lr_at(schedule: str, epoch_or_step: int, base_lr: float = 1e-3,
          extras: dict | None = None) -> float:
    extras = extras or {}
    if schedule == "step_decay":
        return base_lr * 0.8 ** (epoch_or_step // 10)
    if schedule == "cosine":
        max_epochs = extras.get("max_epochs", 50)
        return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch_or_step / max_epochs))
    if schedule == "noam":
        step = max(1, epoch_or_step)
        warmup = extras.get("warmup", 4000)
        dim = extras.get("embed_dim", 128)
        return dim ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)
    raise ConfigError(f"unknown schedule {schedule!r}")


def _minibatches(n: int, batch_size: int, rng=None):
    """Index chunks; a trailing singleton is merged into the previous chunk so
    batch-normalized heads always see >= 2 rows."""
    order = np.arange(n) if rng is None else rng.permutation(n)
    chunks = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_f1: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = -1
    epochs_run: int = 0
    wall_time_s: float = 0.0


def _check_finite(value: float, method: str, epoch: int):
    if not math.isfinite(value):
        raise TrainingDiverged(f"{method}: non-finite loss at epoch {epoch}",
                               method=method, epoch=epoch)


# ---------------------------------------------------------------------------
# pretraining
# ---------------------------------------------------------------------------

def _split_holdout(ws: WindowSet, fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    n = len(ws)
    n_val = max(1, int(round(fraction * n)))
    order = rng.permutation(n)
    return ws.select(order[n_val:]), ws.select(order[:n_val])


def _eval_pretext_loss(model, values: np.ndarray, batch_size: int, seed: int) -> float:
    """Mean pretext loss over a window array with a fixed augmentation stream."""
    model.eval()
    rng = np.random.default_rng(seed)
    losses = []
    with torch.no_grad():
        for idx in _minibatches(len(values), batch_size):
            losses.append(float(model.loss(values[idx], rng)))
    model.train()
    return float(np.mean(losses))


def pretrain(method: str, ws: WindowSet, combo: HyperparamCombo,
             budget: TrainBudget | None = None, seed: int = 0,
             val_ws: WindowSet | None = None):
    """Train one pretext method; returns (best checkpoint, history).

    Labels are ignored. Early stopping watches the validation pretext loss;
    when no validation set is supplied, 10% of the windows are held out.
    """
    budget = budget or TrainBudget()
    if val_ws is None:
        ws, val_ws = _split_holdout(ws, 0.1, seed)
    if len(ws) == 0 or len(val_ws) == 0:
        raise DataError("pretraining needs non-empty train and validation windows")
    torch.manual_seed(seed)
    model = build_pretext_model(method, combo.values)
    rng = np.random.default_rng(seed)

    base_lr = float(combo.get("lr", 1e-3))
    l2 = float(combo.get("l2", 0.0))
    routing = OPTIMIZER_ROUTING[method]
    if routing == "adam":
        optimizer = torch.optim.Adam(model.parameters(), lr=base_lr, weight_decay=l2)
    else:
        optimizer = torch.optim.SGD(model.parameters(), lr=base_lr,
                                    momentum=SGD_MOMENTUM, weight_decay=l2)
    noam_extras = None
    if method == "masked_recon" and "warmup" in combo.values:
        noam_extras = {"warmup": int(combo["warmup"]), "embed_dim": 128}

    batch_size = min(int(combo.get("batch_size", budget.batch_size)), len(ws))
    history = History()
    best_state, best_val = None, math.inf
    bad_epochs = 0
    step = 0
    started = time.perf_counter()
    values = ws.values
    for epoch in range(1, budget.max_epochs + 1):
        if routing == "sgd_cosine":
            epoch_lr = lr_at("cosine", epoch - 1, base_lr, {"max_epochs": budget.max_epochs})
            for group in optimizer.param_groups:
                group["lr"] = epoch_lr
        model.train()
        epoch_losses = []
        for idx in _minibatches(len(values), batch_size, rng):
            step += 1
            if noam_extras is not None:
                for group in optimizer.param_groups:
                    group["lr"] = lr_at("noam", step, extras=noam_extras)
            loss = model.loss(values[idx], rng)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            if method == "byol":
                model.ema_update()
            loss_value = float(loss.detach())
            _check_finite(loss_value, method, epoch)
            epoch_losses.append(loss_value)
        history.train_loss.append(float(np.mean(epoch_losses)))
        history.lr.append(optimizer.param_groups[0]["lr"])
        val_loss = _eval_pretext_loss(model, val_ws.values, batch_size, seed + 17)
        _check_finite(val_loss, method, epoch)
        history.val_loss.append(val_loss)
        history.epochs_run = epoch
        if val_loss < best_val:
            best_val = val_loss
            history.best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= budget.early_stop_patience:
                break
    history.wall_time_s = time.perf_counter() - started
    model.load_state_dict(best_state)
    arch = {"method": method, "combo": combo.values}
    ckpt = checkpoint_from_module(model, pretext_method=method,
                                  pretrain_config=combo.values, seed=seed, arch=arch)
    return ckpt, history


def rebuild_pretext_model(ckpt: ModelCheckpoint):
    model = build_pretext_model(ckpt.arch.get("method", ckpt.pretext_method),
                                ckpt.arch.get("combo", ckpt.pretrain_config))
    return load_into_module(ckpt, model)


# ---------------------------------------------------------------------------
# frozen-encoder feature extraction and classifier training
# ---------------------------------------------------------------------------

def extract_features(model, values: np.ndarray, batch_size: int = 512) -> np.ndarray:
    model.eval()
    out = []
    with torch.inference_mode():
        for idx in _minibatches(len(values), batch_size):
            out.append(model.features(values[idx]).cpu().numpy())
    return np.concatenate(out) if out else np.empty((0, 0))


@dataclass
class TrainedClassifier:
    head: torch.nn.Module
    head_kind: str
    num_classes: int
    history: History
    best_val_f1: float
    method: str = ""

    def predict_features(self, features: np.ndarray) -> np.ndarray:
        self.head.eval()
        with torch.inference_mode():
            logits = self.head(torch.as_tensor(features, dtype=torch.float32))
        return logits.argmax(dim=1).cpu().numpy()


def _check_labels(labels: np.ndarray, num_classes: int):
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DataError(f"labels outside [0, {num_classes})")


def train_head_on_features(train_x: np.ndarray, train_y: np.ndarray,
                           val_x: np.ndarray, val_y: np.ndarray,
                           head_kind: str, num_classes: int,
                           combo: HyperparamCombo | None = None,
                           budget: TrainBudget | None = None, seed: int = 0,
                           select_by: str = "val_f1") -> TrainedClassifier:
    """Cross-entropy training of a head on fixed features.

    The classifier learning rate decays by 0.8 every 10 epochs; the epoch
    with the best validation macro F1 wins.
    """
    budget = budget or TrainBudget()
    combo = combo or HyperparamCombo({})
    _check_labels(train_y, num_classes)
    _check_labels(val_y, num_classes)
    torch.manual_seed(seed)
    head = make_head(head_kind, train_x.shape[1], num_classes)
    base_lr = float(combo.get("classifier_lr", 1e-3))
    l2 = float(combo.get("classifier_l2", 0.0))
    optimizer = torch.optim.Adam(head.parameters(), lr=base_lr, weight_decay=l2)
    rng = np.random.default_rng(seed)
    x = torch.as_tensor(train_x, dtype=torch.float32)
    y = torch.as_tensor(train_y, dtype=torch.long)
    vx = torch.as_tensor(val_x, dtype=torch.float32)
    history = History()
    best_state, best_f1 = None, -1.0
    started = time.perf_counter()
    for epoch in range(1, budget.max_epochs + 1):
        epoch_lr = lr_at("step_decay", epoch - 1, base_lr)
        for group in optimizer.param_groups:
            group["lr"] = epoch_lr
        head.train()
        losses = []
        for idx in _minibatches(len(x), min(budget.batch_size, len(x)), rng):
            logits = head(x[idx])
            loss = F.cross_entropy(logits, y[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            loss_value = float(loss.detach())
            _check_finite(loss_value, head_kind, epoch)
            losses.append(loss_value)
        history.train_loss.append(float(np.mean(losses)))
        history.lr.append(epoch_lr)
        head.eval()
        with torch.inference_mode():
            val_pred = head(vx).argmax(dim=1).cpu().numpy()
        f1 = macro_f1(val_pred, val_y, num_classes) if len(val_y) else 0.0
        history.val_f1.append(f1)
        history.epochs_run = epoch
        if f1 > best_f1:
            best_f1 = f1
            history.best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in head.state_dict().items()}
    history.wall_time_s = time.perf_counter() - started
    head.load_state_dict(best_state)
    return TrainedClassifier(head=head, head_kind=head_kind, num_classes=num_classes,
                             history=history, best_val_f1=best_f1)


def finetune(ckpt: ModelCheckpoint, labeled: WindowSet, head_kind: str,
             combo: HyperparamCombo | None = None, budget: TrainBudget | None = None,
             seed: int = 0, val_ws: WindowSet | None = None,
             num_classes: int | None = None):
    """Freeze the pretrained encoder and train only the classifier head."""
    if val_ws is None:
        labeled, val_ws = _split_holdout(labeled, 0.2, seed)
    if num_classes is None:
        num_classes = int(max(labeled.labels.max(), val_ws.labels.max())) + 1
    model = freeze(rebuild_pretext_model(ckpt))
    train_x = extract_features(model, labeled.values)
    val_x = extract_features(model, val_ws.values)
    clf = train_head_on_features(train_x, labeled.labels, val_x, val_ws.labels,
                                 head_kind, num_classes, combo, budget, seed)
    clf.method = ckpt.pretext_method
    return clf


# ---------------------------------------------------------------------------
# end-to-end supervised baselines
# ---------------------------------------------------------------------------

@dataclass
class TrainedModel:
    model: torch.nn.Module
    kind: str
    num_classes: int
    history: History
    best_val_f1: float

    def predict(self, values: np.ndarray, batch_size: int = 512) -> np.ndarray:
        self.model.eval()
        preds = []
        with torch.inference_mode():
            for idx in _minibatches(len(values), batch_size):
                x = torch.as_tensor(values[idx], dtype=torch.float32)
                preds.append(self.model(x).argmax(dim=1).cpu().numpy())
        return np.concatenate(preds)


def supervised_train(kind: str, labeled: WindowSet, combo: HyperparamCombo | None = None,
                     budget: TrainBudget | None = None, seed: int = 0,
                     val_ws: WindowSet | None = None,
                     num_classes: int | None = None) -> TrainedModel:
    """End-to-end cross-entropy training of a named baseline architecture."""
    if num_classes is None:
        top = labeled.labels.max() if val_ws is None else \
            max(labeled.labels.max(), val_ws.labels.max())
        num_classes = int(top) + 1
    torch.manual_seed(seed)
    model = make_baseline(kind, num_classes, labeled.window_length_samples)
    trained = train_supervised_module(model, labeled, combo, budget, seed,
                                      val_ws=val_ws, num_classes=num_classes)
    trained.kind = kind
    return trained


def train_supervised_module(model: torch.nn.Module, labeled: WindowSet,
                            combo: HyperparamCombo | None = None,
                            budget: TrainBudget | None = None, seed: int = 0,
                            val_ws: WindowSet | None = None,
                            num_classes: int | None = None) -> TrainedModel:
    """End-to-end cross-entropy training of an arbitrary classifier module."""
    budget = budget or TrainBudget()
    combo = combo or HyperparamCombo({})
    if val_ws is None:
        labeled, val_ws = _split_holdout(labeled, 0.2, seed)
    if num_classes is None:
        num_classes = int(max(labeled.labels.max(), val_ws.labels.max())) + 1
    _check_labels(labeled.labels, num_classes)
    _check_labels(val_ws.labels, num_classes)
    kind = type(model).__name__
    base_lr = float(combo.get("lr", 1e-3))
    l2 = float(combo.get("l2", 0.0))
    optimizer = torch.optim.Adam(model.parameters(), lr=base_lr, weight_decay=l2)
    rng = np.random.default_rng(seed)
    x = torch.as_tensor(labeled.values, dtype=torch.float32)
    y = torch.as_tensor(labeled.labels, dtype=torch.long)
    history = History()
    best_state, best_f1 = None, -1.0
    started = time.perf_counter()
    for epoch in range(1, budget.max_epochs + 1):
        epoch_lr = lr_at("step_decay", epoch - 1, base_lr)
        for group in optimizer.param_groups:
            group["lr"] = epoch_lr
        model.train()
        losses = []
        for idx in _minibatches(len(x), min(budget.batch_size, len(x)), rng):
            loss = F.cross_entropy(model(x[idx]), y[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            loss_value = float(loss.detach())
            _check_finite(loss_value, kind, epoch)
            losses.append(loss_value)
        history.train_loss.append(float(np.mean(losses)))
        history.lr.append(epoch_lr)
        model.eval()
        with torch.inference_mode():
            vx = torch.as_tensor(val_ws.values, dtype=torch.float32)
            val_pred = model(vx).argmax(dim=1).cpu().numpy()
        f1 = macro_f1(val_pred, val_ws.labels, num_classes)
        history.val_f1.append(f1)
        history.epochs_run = epoch
        if f1 > best_f1:
            best_f1 = f1
            history.best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    history.wall_time_s = time.perf_counter() - started
    model.load_state_dict(best_state)
    return TrainedModel(model=model, kind=kind, num_classes=num_classes,
                        history=history, best_val_f1=best_f1)
