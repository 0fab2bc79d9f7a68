"""End-to-end protocol execution: prepare data, pretrain, sweep, evaluate.

Every unit of work emits one RunRecord keyed by
(method, dataset, criterion, fold, seed, combo, params); completed keys are
skipped on re-run, so interrupted experiments resume for free.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import protocols
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (DatasetSchema, FoldPlan, SensorSequence, WindowSet,
                   compute_norm_stats, load_dataset, make_user_folds, normalize,
                   read_manifest, resample, windows_from_sequences)
from .errors import ConfigError
from .features import (implicit_dimensionality, layerwise_similarity,
                       separability_gap_from_features)
from .pretext import METHOD_NAMES, build_supervised_twin
from .protocols import ProtocolConfig, macro_f1
from .store import RunRecord, completed_keys, persist, read_records
from .training import (BASELINE_SPACES, HyperparamCombo, PRETRAIN_SPACES,
                       TrainBudget, classifier_space, draw_combos, extract_features,
                       finetune, freeze, pretrain, rebuild_pretext_model,
                       supervised_train, train_supervised_module)
from .models import BASELINE_KINDS

log = logging.getLogger(__name__)

DEFAULT_RATE_HZ = 50.0
DEFAULT_WINDOW = 100
TARGET_OVERLAP = 0.5
SOURCE_OVERLAP = 0.0


@dataclass
class PreparedDataset:
    schema: DatasetSchema
    windows: WindowSet
    fold_plan: FoldPlan

    @property
    def num_classes(self) -> int:
        return len(self.schema.class_names)


def prepare_dataset(source, schema: DatasetSchema | None = None,
                    rate_hz: float = DEFAULT_RATE_HZ, window: int = DEFAULT_WINDOW,
                    overlap: float = TARGET_OVERLAP, k_folds: int = 5,
                    seed: int = 0) -> PreparedDataset:
    """Load (path) or accept (sequences) a dataset, resample and window it.

    Sequences recorded above ``rate_hz`` are downsampled to it; slower ones
    keep their native rate.
    """
    if isinstance(source, (str, Path)):
        schema = read_manifest(source)
        sequences = load_dataset(source, schema)
    else:
        sequences = list(source)
        if schema is None:
            raise ConfigError("in-memory datasets need an explicit schema")
    if rate_hz:
        sequences = [resample(s, min(rate_hz, s.sample_rate_hz)) for s in sequences]
    windows = windows_from_sequences(sequences, window, overlap,
                                     class_names=schema.class_names)
    windows.dataset_id = schema.dataset_id
    users = sorted({s.user_id for s in sequences})
    fold_plan = make_user_folds(users, k=min(k_folds, len(users)), seed=seed)
    return PreparedDataset(schema=schema, windows=windows, fold_plan=fold_plan)


def source_pretrain_splits(prep: PreparedDataset, val_fraction: float = 0.1,
                           seed: int = 0):
    """Split a pretraining corpus by user into train/val plus train stats."""
    users = prep.windows.users
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(users))
    n_val = max(1, int(round(val_fraction * len(users))))
    val_users = {users[i] for i in order[:n_val]}
    train_ws = prep.windows.for_users([u for u in users if u not in val_users])
    val_ws = prep.windows.for_users(sorted(val_users))
    stats = compute_norm_stats(train_ws)
    return normalize(train_ws, stats), normalize(val_ws, stats), stats


# ---------------------------------------------------------------------------
# cached pretraining
# ---------------------------------------------------------------------------

def _combo_hash(values: dict) -> str:
    return hashlib.sha256(json.dumps(values, sort_keys=True).encode()).hexdigest()[:10]


def pretrain_cached(method: str, train_ws, val_ws, combo: HyperparamCombo,
                    budget: TrainBudget, seed: int, cache_dir) -> "ModelCheckpoint":
    """Pretrain once per (method, combo, seed); later calls load from disk."""
    cache_dir = Path(cache_dir)
    slot = cache_dir / method / f"{_combo_hash(combo.values)}_s{seed}"
    if (slot / "manifest.json").is_file():
        return load_checkpoint(slot)
    ckpt, _ = pretrain(method, train_ws, combo, budget, seed, val_ws=val_ws)
    save_checkpoint(ckpt, slot)
    return ckpt


def split_combo(method: str, combo: HyperparamCombo):
    """Separate pretraining keys from classifier keys of a joint combo."""
    pre_keys = set(PRETRAIN_SPACES.get(method, {}))
    pre = {k: v for k, v in combo.values.items() if k in pre_keys}
    clf = {k: v for k, v in combo.values.items() if k not in pre_keys}
    return (HyperparamCombo(pre, combo.draw_seed),
            HyperparamCombo(clf, combo.draw_seed))


def joint_space(method: str) -> dict:
    space = dict(PRETRAIN_SPACES.get(method, {}))
    space.update(classifier_space(method))
    return space


# ---------------------------------------------------------------------------
# single-fold evaluation
# ---------------------------------------------------------------------------

def fold_window_sets(prep: PreparedDataset, fold_index: int):
    fold = prep.fold_plan.folds[fold_index]
    ws = prep.windows.labeled()
    return (ws.for_users(sorted(fold.train_users)),
            ws.for_users(sorted(fold.val_users)),
            ws.for_users(sorted(fold.test_users)))


def evaluate_fold(ckpt, prep: PreparedDataset, fold_index: int, head_kind: str,
                  clf_combo: HyperparamCombo, budget: TrainBudget, seed: int,
                  stats=None) -> dict:
    """Fine-tune a frozen checkpoint on one fold; returns metric dict."""
    train_ws, val_ws, test_ws = fold_window_sets(prep, fold_index)
    stats = stats or compute_norm_stats(train_ws)
    train_ws, val_ws, test_ws = (normalize(w, stats) for w in (train_ws, val_ws, test_ws))
    clf = finetune(ckpt, train_ws, head_kind, clf_combo, budget, seed,
                   val_ws=val_ws, num_classes=prep.num_classes)
    model = freeze(rebuild_pretext_model(ckpt))
    test_pred = clf.predict_features(extract_features(model, test_ws.values))
    return {
        "macro_f1": macro_f1(test_pred, test_ws.labels, prep.num_classes),
        "val_f1": clf.best_val_f1,
        "epochs": float(clf.history.epochs_run),
    }


def evaluate_supervised_fold(kind: str, prep: PreparedDataset, fold_index: int,
                             combo: HyperparamCombo, budget: TrainBudget,
                             seed: int, stats=None) -> dict:
    train_ws, val_ws, test_ws = fold_window_sets(prep, fold_index)
    stats = stats or compute_norm_stats(train_ws)
    train_ws, val_ws, test_ws = (normalize(w, stats) for w in (train_ws, val_ws, test_ws))
    trained = supervised_train(kind, train_ws, combo, budget, seed,
                               val_ws=val_ws, num_classes=prep.num_classes)
    pred = trained.predict(test_ws.values)
    return {
        "macro_f1": macro_f1(pred, test_ws.labels, prep.num_classes),
        "val_f1": trained.best_val_f1,
        "epochs": float(trained.history.epochs_run),
    }


class Recorder:
    """Writes records unless an identical completed one already exists."""

    def __init__(self, store_path):
        self.store_path = store_path
        self.existing = completed_keys(store_path) if store_path else set()
        self.new_runs = 0
        self.records: list[RunRecord] = []

    def seen(self, record: RunRecord) -> bool:
        return record.key() in self.existing

    def add(self, record: RunRecord):
        self.records.append(record)
        if self.store_path:
            persist(record, self.store_path)
        self.existing.add(record.key())
        self.new_runs += 1

    def run_unit(self, record_stub: RunRecord, work) -> RunRecord:
        """Execute ``work`` unless the stub's key is already in the store."""
        if self.seen(record_stub):
            self.records.append(record_stub)
            return record_stub
        started = time.perf_counter()
        record_stub.metrics = work()
        record_stub.wall_time_s = time.perf_counter() - started
        self.add(record_stub)
        return record_stub


# ---------------------------------------------------------------------------
# the hyperparameter sweep (random search + best-combo seed re-runs)
# ---------------------------------------------------------------------------

def sweep(method: str, target: PreparedDataset, source: PreparedDataset | None = None,
          n_combos: int = 20, seeds=(0, 1, 2, 3, 4), budget: TrainBudget | None = None,
          head_kind: str = "linear", store_path=None, cache_dir=None,
          criterion: str = "sweep", seed: int = 0, norm_mode: str = "auto"):
    """Random search over the joint pretrain+classifier space with k-fold CV,
    then the best combo re-run with the given seeds.

    Record accounting: n_combos * k_folds search records plus
    len(seeds) * k_folds best-combo records.
    """
    budget = budget or TrainBudget()
    cache_dir = Path(cache_dir) if cache_dir else Path(".accelssl_cache")
    combos = draw_combos(joint_space(method), n_combos, seed)
    k = len(target.fold_plan.folds)
    recorder = Recorder(store_path)

    if source is not None:
        pre_train, pre_val, source_stats = source_pretrain_splits(source, seed=seed)
    else:
        pre_train = pre_val = source_stats = None
    stats = source_stats if (norm_mode in ("auto", "source") and source_stats is not None) else None

    is_baseline = method in BASELINE_KINDS

    def one_fold(combo, fold_index, run_seed):
        if is_baseline:
            return lambda: evaluate_supervised_fold(method, target, fold_index,
                                                    combo, budget, run_seed, stats)
        pre_combo, clf_combo = split_combo(method, combo)

        def work():
            if pre_train is not None:
                ckpt = pretrain_cached(method, pre_train, pre_val, pre_combo,
                                       budget, run_seed, cache_dir)
            else:
                train_ws, val_ws, _ = fold_window_sets(target, fold_index)
                fold_stats = stats or compute_norm_stats(train_ws)
                ckpt = pretrain_cached(method, normalize(train_ws, fold_stats),
                                       normalize(val_ws, fold_stats), pre_combo,
                                       budget, run_seed,
                                       Path(cache_dir) / f"fold{fold_index}")
            return evaluate_fold(ckpt, target, fold_index, head_kind, clf_combo,
                                 budget, run_seed, stats)
        return work

    # stage 1: search, one record per (combo, fold)
    for combo in combos:
        for fold_index in range(k):
            stub = RunRecord(method=method, dataset_id=target.schema.dataset_id,
                             criterion=criterion, fold=fold_index, seed=seed,
                             combo=combo.values, metrics={},
                             params={"stage": "search", "head": head_kind},
                             data_hash=target.windows.data_hash())
            recorder.run_unit(stub, one_fold(combo, fold_index, seed))

    # pick the best combo by mean test F1 over folds
    search = [r for r in recorder.records if r.params.get("stage") == "search"]
    by_combo = {}
    for record in search:
        by_combo.setdefault(json.dumps(record.combo, sort_keys=True), []).append(
            record.metrics.get("macro_f1", 0.0))
    combo_keys = [json.dumps(c.values, sort_keys=True) for c in combos]
    means = [float(np.mean(by_combo.get(ck, [0.0]))) for ck in combo_keys]
    best_combo = combos[int(np.argmax(means))]

    # stage 2: seed re-runs of the best combo, one record per (seed, fold)
    for run_seed in seeds:
        for fold_index in range(k):
            stub = RunRecord(method=method, dataset_id=target.schema.dataset_id,
                             criterion=criterion, fold=fold_index, seed=int(run_seed),
                             combo=best_combo.values, metrics={},
                             params={"stage": "best", "head": head_kind},
                             data_hash=target.windows.data_hash())
            recorder.run_unit(stub, one_fold(best_combo, fold_index, int(run_seed)))

    return recorder.records, recorder.new_runs, best_combo


cross_validate = sweep


# ---------------------------------------------------------------------------
# criterion executors
# ---------------------------------------------------------------------------

def _fixed_combo(method: str, override: dict | None = None) -> HyperparamCombo:
    """Default single combo: first value of every space entry, plus overrides."""
    space = joint_space(method) if method not in BASELINE_KINDS else \
        dict(BASELINE_SPACES[method])
    values = {k: v[0] for k, v in space.items()}
    values.update(override or {})
    return HyperparamCombo(values)


def _pretrain_for(method, combo, source, target, fold_index, budget, run_seed,
                  cache_dir, stats, pre_splits=None):
    pre_combo, clf_combo = split_combo(method, combo)
    if pre_splits is not None:
        pre_train, pre_val = pre_splits
        ckpt = pretrain_cached(method, pre_train, pre_val, pre_combo, budget,
                               run_seed, cache_dir)
    elif source is not None:
        pre_train, pre_val, _ = source_pretrain_splits(source, seed=run_seed)
        ckpt = pretrain_cached(method, pre_train, pre_val, pre_combo, budget,
                               run_seed, cache_dir)
    else:
        train_ws, val_ws, _ = fold_window_sets(target, fold_index)
        fold_stats = stats or compute_norm_stats(train_ws)
        ckpt = pretrain_cached(method, normalize(train_ws, fold_stats),
                               normalize(val_ws, fold_stats), pre_combo, budget,
                               run_seed, Path(cache_dir) / f"fold{fold_index}")
    return ckpt, clf_combo


def run_transfer(criterion, methods, target, source, combo_overrides, seeds, budget,
                 head_kind, store_path, cache_dir, norm_mode="auto"):
    """Transfer evaluation (sensor position or activity mismatch live in the
    choice of source/target datasets): per method, folds x seeds records."""
    recorder = Recorder(store_path)
    stats = None
    if source is not None and norm_mode in ("auto", "source"):
        _, _, stats = source_pretrain_splits(source, seed=0)
    k = len(target.fold_plan.folds)
    for method in methods:
        combo = _fixed_combo(method, combo_overrides.get(method))
        for run_seed in seeds:
            for fold_index in range(k):
                stub = RunRecord(method=method, dataset_id=target.schema.dataset_id,
                                 criterion=criterion, fold=fold_index,
                                 seed=int(run_seed), combo=combo.values, metrics={},
                                 params={"head": head_kind},
                                 data_hash=target.windows.data_hash())

                def work(method=method, combo=combo, fold_index=fold_index,
                         run_seed=run_seed):
                    if method in BASELINE_KINDS:
                        return evaluate_supervised_fold(method, target, fold_index,
                                                        combo, budget, run_seed, stats)
                    ckpt, clf_combo = _pretrain_for(method, combo, source, target,
                                                    fold_index, budget, run_seed,
                                                    cache_dir, stats)
                    return evaluate_fold(ckpt, target, fold_index, head_kind,
                                         clf_combo, budget, run_seed, stats)
                recorder.run_unit(stub, work)
    return recorder.records, recorder.new_runs


def run_rate_mismatch(methods, target_sequences, schema, source, combo_overrides,
                      seeds, budget, head_kind, store_path, cache_dir,
                      rate_hz=DEFAULT_RATE_HZ, window=DEFAULT_WINDOW, seed=0):
    """Evaluate each method on native-rate windows vs downsampled windows."""
    recorder = Recorder(store_path)
    for variant, use_native in (("downsampled", False), ("native", True)):
        ws = protocols.rate_mismatch_variant(target_sequences, use_native,
                                             dst_hz=rate_hz, length_samples=window,
                                             overlap_fraction=TARGET_OVERLAP,
                                             class_names=schema.class_names)
        ws.dataset_id = schema.dataset_id
        users = sorted({str(u) for u in ws.user_ids})
        plan = make_user_folds(users, k=min(5, len(users)), seed=seed)
        prep = PreparedDataset(schema=schema, windows=ws, fold_plan=plan)
        stats = None
        if source is not None:
            _, _, stats = source_pretrain_splits(source, seed=0)
        for method in methods:
            combo = _fixed_combo(method, combo_overrides.get(method))
            for run_seed in seeds:
                for fold_index in range(len(plan.folds)):
                    stub = RunRecord(method=method, dataset_id=schema.dataset_id,
                                     criterion="rate_mismatch", fold=fold_index,
                                     seed=int(run_seed), combo=combo.values,
                                     metrics={},
                                     params={"variant": variant, "head": head_kind},
                                     data_hash=ws.data_hash())

                    def work(method=method, combo=combo, prep=prep,
                             fold_index=fold_index, run_seed=run_seed, stats=stats):
                        if method in BASELINE_KINDS:
                            return evaluate_supervised_fold(method, prep, fold_index,
                                                            combo, budget, run_seed,
                                                            stats)
                        ckpt, clf_combo = _pretrain_for(method, combo, source, prep,
                                                        fold_index, budget, run_seed,
                                                        cache_dir, stats)
                        return evaluate_fold(ckpt, prep, fold_index, head_kind,
                                             clf_combo, budget, run_seed, stats)
                    recorder.run_unit(stub, work)
    return recorder.records, recorder.new_runs


def run_quantity_sweep(kind, methods, target, source, combo_overrides, seeds,
                       budget, head_kind, store_path, cache_dir, grid=None):
    """Pretrain on user- or window-subsets of the source corpus."""
    if source is None:
        raise ConfigError(f"{kind} sweep needs a source dataset to subsample")
    grid = grid or (protocols.USER_PCT_GRID if kind == "user_quantity"
                    else protocols.WINDOW_PCT_GRID)
    recorder = Recorder(store_path)
    k = len(target.fold_plan.folds)
    for method in methods:
        combo = _fixed_combo(method, combo_overrides.get(method))
        for pct in grid:
            for run_seed in seeds:
                if kind == "user_quantity":
                    users = protocols.subsample_users(source.windows.users, pct,
                                                      seed=run_seed)
                    sub = source.windows.for_users(users)
                else:
                    sub = protocols.subsample_windows(source.windows, pct,
                                                      seed=run_seed)
                stats = compute_norm_stats(sub)
                pre_train, pre_val = _holdout_by_windows(normalize(sub, stats),
                                                         seed=run_seed)
                slot = Path(cache_dir) / kind / f"pct{pct}"
                for fold_index in range(k):
                    stub = RunRecord(method=method,
                                     dataset_id=target.schema.dataset_id,
                                     criterion=kind, fold=fold_index,
                                     seed=int(run_seed), combo=combo.values,
                                     metrics={},
                                     params={"pct": pct, "head": head_kind},
                                     data_hash=target.windows.data_hash())

                    def work(method=method, combo=combo, fold_index=fold_index,
                             run_seed=run_seed, pre_train=pre_train,
                             pre_val=pre_val, stats=stats, slot=slot):
                        ckpt, clf_combo = _pretrain_for(
                            method, combo, None, target, fold_index, budget,
                            run_seed, slot, stats, pre_splits=(pre_train, pre_val))
                        return evaluate_fold(ckpt, target, fold_index, head_kind,
                                             clf_combo, budget, run_seed, stats)
                    recorder.run_unit(stub, work)
    return recorder.records, recorder.new_runs


def _holdout_by_windows(ws, fraction: float = 0.1, seed: int = 0):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ws))
    n_val = max(1, int(round(fraction * len(ws))))
    return ws.select(order[n_val:]), ws.select(order[:n_val])


def run_source_imbalance(methods, target, source, combo_overrides, seeds, budget,
                         head_kind, store_path, cache_dir, ratios=None,
                         majority_count=None):
    """Pretrain on exponentially imbalanced source subsets and balanced twins."""
    if source is None:
        raise ConfigError("source_imbalance needs a source dataset")
    ratios = ratios or protocols.IMBALANCE_RATIOS
    num_classes = len(source.schema.class_names)
    labeled = source.windows.labeled()
    if majority_count is None:
        counts = np.bincount(labeled.labels, minlength=num_classes)
        majority_count = int(counts.max())
    recorder = Recorder(store_path)
    k = len(target.fold_plan.folds)
    for method in methods:
        combo = _fixed_combo(method, combo_overrides.get(method))
        for rho in ratios:
            spec = protocols.ImbalanceSpec(rho=rho, majority_count=majority_count,
                                           num_classes=num_classes)
            for run_seed in seeds:
                result = protocols.imbalance_subsets(labeled, spec, seed=run_seed)
                for subset_name, subset in (("imbalanced", result.imbalanced),
                                            ("balanced", result.balanced)):
                    stats = compute_norm_stats(subset)
                    pre_train, pre_val = _holdout_by_windows(
                        normalize(subset, stats), seed=run_seed)
                    slot = Path(cache_dir) / "imbalance" / f"rho{rho}_{subset_name}"
                    for fold_index in range(k):
                        stub = RunRecord(
                            method=method, dataset_id=target.schema.dataset_id,
                            criterion="source_imbalance", fold=fold_index,
                            seed=int(run_seed), combo=combo.values, metrics={},
                            params={"rho": rho, "subset": subset_name,
                                    "head": head_kind,
                                    "with_replacement": result.used_replacement},
                            data_hash=target.windows.data_hash())

                        def work(method=method, combo=combo, fold_index=fold_index,
                                 run_seed=run_seed, pre_train=pre_train,
                                 pre_val=pre_val, stats=stats, slot=slot):
                            ckpt, clf_combo = _pretrain_for(
                                method, combo, None, target, fold_index, budget,
                                run_seed, slot, stats,
                                pre_splits=(pre_train, pre_val))
                            return evaluate_fold(ckpt, target, fold_index,
                                                 head_kind, clf_combo, budget,
                                                 run_seed, stats)
                        recorder.run_unit(stub, work)
    return recorder.records, recorder.new_runs


def run_limited_labels(methods, target, source, combo_overrides, seeds, budget,
                       head_kind, store_path, cache_dir, grid=None):
    """Fine-tune with n labeled windows per class; validation/test untouched."""
    grid = grid or protocols.LABELS_PER_CLASS_GRID
    recorder = Recorder(store_path)
    stats = None
    if source is not None:
        _, _, stats = source_pretrain_splits(source, seed=0)
    k = len(target.fold_plan.folds)
    for method in methods:
        combo = _fixed_combo(method, combo_overrides.get(method))
        for n_labels in grid:
            for run_seed in seeds:
                for fold_index in range(k):
                    stub = RunRecord(method=method,
                                     dataset_id=target.schema.dataset_id,
                                     criterion="limited_labels", fold=fold_index,
                                     seed=int(run_seed), combo=combo.values,
                                     metrics={},
                                     params={"labels_per_class": n_labels,
                                             "head": head_kind},
                                     data_hash=target.windows.data_hash())

                    def work(method=method, combo=combo, fold_index=fold_index,
                             run_seed=run_seed, n_labels=n_labels):
                        train_ws, val_ws, test_ws = fold_window_sets(target, fold_index)
                        fold_stats = stats or compute_norm_stats(train_ws)
                        limited = protocols.limited_label_subset(train_ws, n_labels,
                                                                 seed=run_seed)
                        limited = normalize(limited, fold_stats)
                        val_n = normalize(val_ws, fold_stats)
                        test_n = normalize(test_ws, fold_stats)
                        if method in BASELINE_KINDS:
                            trained = supervised_train(method, limited, combo, budget,
                                                       run_seed, val_ws=val_n,
                                                       num_classes=target.num_classes)
                            pred = trained.predict(test_n.values)
                            return {"macro_f1": macro_f1(pred, test_n.labels,
                                                         target.num_classes),
                                    "val_f1": trained.best_val_f1}
                        ckpt, clf_combo = _pretrain_for(method, combo, source, target,
                                                        fold_index, budget, run_seed,
                                                        cache_dir, stats)
                        model = freeze(rebuild_pretext_model(ckpt))
                        clf = finetune(ckpt, limited, head_kind, clf_combo, budget,
                                       run_seed, val_ws=val_n,
                                       num_classes=target.num_classes)
                        pred = clf.predict_features(
                            extract_features(model, test_n.values))
                        return {"macro_f1": macro_f1(pred, test_n.labels,
                                                     target.num_classes),
                                "val_f1": clf.best_val_f1}
                    recorder.run_unit(stub, work)
    return recorder.records, recorder.new_runs


def run_norm_ablation(methods, target, source, combo_overrides, seeds, budget,
                      head_kind, store_path, cache_dir):
    """Source-statistics vs target-statistics normalization, same pipeline."""
    if source is None:
        raise ConfigError("norm_source_ablation needs a source dataset")
    _, _, source_stats = source_pretrain_splits(source, seed=0)
    recorder = Recorder(store_path)
    k = len(target.fold_plan.folds)
    for method in methods:
        combo = _fixed_combo(method, combo_overrides.get(method))
        for mode in ("source", "target"):
            stats = source_stats if mode == "source" else None
            for run_seed in seeds:
                for fold_index in range(k):
                    stub = RunRecord(method=method,
                                     dataset_id=target.schema.dataset_id,
                                     criterion="norm_source_ablation",
                                     fold=fold_index, seed=int(run_seed),
                                     combo=combo.values, metrics={},
                                     params={"norm": mode, "head": head_kind},
                                     data_hash=target.windows.data_hash())

                    def work(method=method, combo=combo, fold_index=fold_index,
                             run_seed=run_seed, stats=stats):
                        if method in BASELINE_KINDS:
                            return evaluate_supervised_fold(method, target,
                                                            fold_index, combo,
                                                            budget, run_seed, stats)
                        ckpt, clf_combo = _pretrain_for(method, combo, source,
                                                        target, fold_index, budget,
                                                        run_seed, cache_dir, stats)
                        return evaluate_fold(ckpt, target, fold_index, head_kind,
                                             clf_combo, budget, run_seed, stats)
                    recorder.run_unit(stub, work)
    return recorder.records, recorder.new_runs


def run_feature_space(methods, target, source, combo_overrides, seeds, budget,
                      store_path, cache_dir, out_dir, probe_size=1000):
    """CKA against a supervised twin, separability gap and PCA curves.

    Uses the first fold; similarity matrices and variance curves land as
    JSON sidecars in out_dir, scalar summaries go into the records.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    recorder = Recorder(store_path)
    fold_index = 0
    train_ws, val_ws, _ = fold_window_sets(target, fold_index)
    stats = None
    if source is not None:
        _, _, stats = source_pretrain_splits(source, seed=0)
    fold_stats = stats or compute_norm_stats(train_ws)
    train_n = normalize(train_ws, fold_stats)
    val_n = normalize(val_ws, fold_stats)
    for method in methods:
        combo = _fixed_combo(method, combo_overrides.get(method))
        for run_seed in seeds:
            stub = RunRecord(method=method, dataset_id=target.schema.dataset_id,
                             criterion="feature_space", fold=fold_index,
                             seed=int(run_seed), combo=combo.values, metrics={},
                             params={"probe": probe_size},
                             data_hash=target.windows.data_hash())

            def work(method=method, combo=combo, run_seed=run_seed):
                rng = np.random.default_rng(run_seed)
                probe_idx = rng.choice(len(train_n),
                                       size=min(probe_size, len(train_n)),
                                       replace=False)
                probe = train_n.values[probe_idx]
                ckpt, _ = _pretrain_for(method, combo, source, target, fold_index,
                                        budget, run_seed, cache_dir, stats)
                model = freeze(rebuild_pretext_model(ckpt))
                twin = build_supervised_twin(method, target.num_classes,
                                             split_combo(method, combo)[0].values)
                trained_twin = train_supervised_module(
                    twin, train_n, HyperparamCombo({"lr": 1e-3}), budget, run_seed,
                    val_ws=val_n, num_classes=target.num_classes)
                sim = layerwise_similarity(model.encoder,
                                           trained_twin.model.encoder, probe)
                sim_file = out_dir / f"cka_{method}_seed{run_seed}.json"
                with open(sim_file, "w", encoding="utf-8") as f:
                    json.dump(sim.to_dict(), f)
                pca_feats = extract_features(model, probe) if method != "cpc" else \
                    _cpc_conv_features(model, probe)
                evr = implicit_dimensionality(pca_feats)
                evr_file = out_dir / f"evr_{method}_seed{run_seed}.json"
                with open(evr_file, "w", encoding="utf-8") as f:
                    json.dump({"cumulative_explained_variance": evr.tolist()}, f)
                gap, true_f1, random_f1 = separability_gap_from_features(
                    extract_features(model, train_n.values), train_n.labels,
                    target.num_classes, seed=run_seed, return_details=True)
                return {"separability_gap": gap, "true_label_f1": true_f1,
                        "random_label_f1": random_f1,
                        "evr_5": float(evr[min(4, len(evr) - 1)]),
                        "evr_20": float(evr[-1]),
                        "cka_diag_mean": float(np.mean(np.diag(sim.values)))}
            recorder.run_unit(stub, work)
    return recorder.records, recorder.new_runs


def _cpc_conv_features(model, values):
    """Mean-pooled last-conv-layer latents (the GRU stays out of PCA)."""
    import torch
    model.eval()
    with torch.inference_mode():
        latents = model.encoder.latents(torch.as_tensor(values, dtype=torch.float32))
    return latents.mean(dim=1).cpu().numpy()


# ---------------------------------------------------------------------------
# config-driven entry point
# ---------------------------------------------------------------------------

def validate_config(config: dict) -> dict:
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    criterion = config.get("criterion", "sweep")
    if criterion not in protocols.CRITERIA + ("sweep",):
        raise ConfigError(f"unknown criterion {criterion!r}")
    methods = config.get("methods") or [config.get("method")]
    methods = [m for m in methods if m]
    if not methods:
        raise ConfigError("config needs 'method' or 'methods'")
    for m in methods:
        if m not in METHOD_NAMES + BASELINE_KINDS:
            raise ConfigError(f"unknown method {m!r}")
    if "target" not in config and "dataset" not in config:
        raise ConfigError("config needs a 'dataset' (target) path")
    out = dict(config)
    out["criterion"] = criterion
    out["methods"] = methods
    return out


def run(config: dict, store_path=None, out_dir=None, seed: int | None = None):
    """Execute one experiment configuration end to end; returns its records.

    Completed (method, fold, combo, seed) units found in the store are
    skipped, making re-runs no-ops.
    """
    config = validate_config(config)
    criterion = config["criterion"]
    methods = config["methods"]
    seed = seed if seed is not None else int(config.get("seed", 0))
    out_dir = Path(out_dir or config.get("out", "accelssl_out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    store_path = store_path or config.get("store") or (out_dir / "records.jsonl")
    cache_dir = Path(config.get("cache", out_dir / "checkpoints"))
    budget = TrainBudget(
        max_epochs=int(config.get("max_epochs", 50)),
        early_stop_patience=int(config.get("patience", 5)),
        batch_size=int(config.get("batch_size", 256)))
    window = int(config.get("window", DEFAULT_WINDOW))
    rate = float(config.get("rate_hz", DEFAULT_RATE_HZ))
    overlap = float(config.get("overlap", TARGET_OVERLAP))
    seeds = config.get("seeds", [0, 1, 2, 3, 4])
    head_kind = config.get("head", "linear")
    combo_overrides = config.get("combos_by_method", {})
    if "combo" in config:
        combo_overrides = {m: config["combo"] for m in methods}

    target_path = config.get("target") or config.get("dataset")
    target_schema = read_manifest(target_path)
    target_sequences = load_dataset(target_path, target_schema)
    target = prepare_dataset(target_sequences, target_schema, rate_hz=rate,
                             window=window, overlap=overlap,
                             k_folds=int(config.get("folds", 5)), seed=seed)
    source = None
    if config.get("source"):
        source = prepare_dataset(config["source"], rate_hz=rate, window=window,
                                 overlap=float(config.get("source_overlap",
                                                          SOURCE_OVERLAP)),
                                 k_folds=2, seed=seed)

    if criterion == "sweep":
        records = []
        new_runs = 0
        for method in methods:
            recs, fresh, _ = sweep(method, target, source,
                                   n_combos=int(config.get("n_combos", 20)),
                                   seeds=seeds, budget=budget, head_kind=head_kind,
                                   store_path=store_path, cache_dir=cache_dir,
                                   seed=seed)
            records.extend(recs)
            new_runs += fresh
        return records, new_runs
    if criterion in ("position_transfer", "activity_transfer"):
        return run_transfer(criterion, methods, target, source, combo_overrides,
                            seeds, budget, head_kind, store_path, cache_dir)
    if criterion == "rate_mismatch":
        return run_rate_mismatch(methods, target_sequences, target_schema, source,
                                 combo_overrides, seeds, budget, head_kind,
                                 store_path, cache_dir, rate_hz=rate, window=window,
                                 seed=seed)
    if criterion in ("user_quantity", "window_quantity"):
        return run_quantity_sweep(criterion, methods, target, source,
                                  combo_overrides, seeds, budget, head_kind,
                                  store_path, cache_dir,
                                  grid=config.get("grid"))
    if criterion == "source_imbalance":
        return run_source_imbalance(methods, target, source, combo_overrides, seeds,
                                    budget, head_kind, store_path, cache_dir,
                                    ratios=config.get("ratios"),
                                    majority_count=config.get("majority_count"))
    if criterion == "limited_labels":
        return run_limited_labels(methods, target, source, combo_overrides, seeds,
                                  budget, head_kind, store_path, cache_dir,
                                  grid=config.get("grid"))
    if criterion == "norm_source_ablation":
        return run_norm_ablation(methods, target, source, combo_overrides, seeds,
                                 budget, head_kind, store_path, cache_dir)
    if criterion == "feature_space":
        return run_feature_space(methods, target, source, combo_overrides, seeds,
                                 budget, store_path, cache_dir, out_dir,
                                 probe_size=int(config.get("probe", 1000)))
    raise ConfigError(f"unhandled criterion {criterion!r}")
