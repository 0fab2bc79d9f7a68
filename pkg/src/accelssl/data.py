"""Dataset ingestion, resampling, windowing, normalization and user-level splits.

The canonical on-disk format is a directory with a ``manifest.json``
(dataset_id, sample_rate_hz, sensor_position, ordered class_names) and one
``user_<id>.csv`` per participant with header ``t_s,ax,ay,az,label``.
Label cells hold a class-name string or are empty for unlabeled samples.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DataError, EmptySetError, FormatError, SchemaError

SENSOR_POSITIONS = ("wrist", "waist", "leg", "other")

UNLABELED = -1

STD_FLOOR = 1e-8


@dataclass
class DatasetSchema:
    """Metadata manifest of a canonical dataset directory."""

    dataset_id: str
    sample_rate_hz: float
    sensor_position: str
    class_names: list[str]

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise SchemaError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if self.sensor_position not in SENSOR_POSITIONS:
            raise SchemaError(f"unknown sensor_position {self.sensor_position!r}")
        if len(set(self.class_names)) != len(self.class_names):
            raise SchemaError("class_names contains duplicates")


@dataclass
class SensorSequence:
    """One user's continuous tri-axial recording with a per-sample label stream."""

    user_id: str
    sample_rate_hz: float
    samples: np.ndarray  # [T, 3] float
    labels: np.ndarray  # [T] int, UNLABELED where no annotation
    dataset_id: str = ""
    sensor_position: str = "other"

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.ndim != 2 or self.samples.shape[1] != 3:
            raise DataError(f"samples must be [T, 3], got {self.samples.shape}")
        if self.samples.shape[0] < 1:
            raise DataError(f"sequence for user {self.user_id!r} is empty")
        if self.labels.shape != (self.samples.shape[0],):
            raise DataError("labels length must equal samples length")
        if self.sample_rate_hz <= 0:
            raise DataError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass
class Window:
    """A fixed-length slice of one sequence."""

    values: np.ndarray  # [L, 3]
    label: int
    user_id: str
    origin_index: int


@dataclass
class ChannelStats:
    """Per-channel moments used for z-normalization."""

    mean: np.ndarray  # [3]
    std: np.ndarray  # [3], floored at STD_FLOOR
    source_dataset_id: str = ""

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(3)
        self.std = np.asarray(self.std, dtype=np.float64).reshape(3)
        if np.any(self.std <= 0):
            raise DataError("std components must be positive")


class WindowSet:
    """Fixed-length windows stored as dense arrays.

    Iterating or indexing yields :class:`Window` views; the ``values``,
    ``labels``, ``user_ids`` and ``origins`` arrays back vectorized work.
    """

    def __init__(self, values, labels, user_ids, origins, window_length_samples,
                 overlap_fraction, class_names=None, normalization=None,
                 sample_rate_hz=None, dataset_id=""):
        self.values = np.asarray(values, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.user_ids = np.asarray(user_ids)
        self.origins = np.asarray(origins, dtype=np.int64)
        self.window_length_samples = int(window_length_samples)
        self.overlap_fraction = float(overlap_fraction)
        self.class_names = list(class_names) if class_names is not None else None
        self.normalization: ChannelStats | None = normalization
        self.sample_rate_hz = sample_rate_hz
        self.dataset_id = dataset_id
        if not (0 <= self.overlap_fraction < 1):
            raise DataError(f"overlap_fraction must be in [0, 1), got {overlap_fraction}")
        if self.values.ndim != 3 or self.values.shape[2] != 3:
            raise DataError(f"values must be [N, L, 3], got {self.values.shape}")
        if self.values.shape[1] != self.window_length_samples:
            raise DataError("window length mismatch between values and window_length_samples")
        n = self.values.shape[0]
        if not (self.labels.shape[0] == self.user_ids.shape[0] == self.origins.shape[0] == n):
            raise DataError("per-window arrays must have identical first dimension")

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, i: int) -> Window:
        return Window(values=self.values[i], label=int(self.labels[i]),
                      user_id=str(self.user_ids[i]), origin_index=int(self.origins[i]))

    def __iter__(self) -> Iterator[Window]:
        for i in range(len(self)):
            yield self[i]

    @property
    def windows(self) -> list[Window]:
        return [self[i] for i in range(len(self))]

    @property
    def users(self) -> list[str]:
        return sorted({str(u) for u in self.user_ids})

    def select(self, indices) -> "WindowSet":
        """New WindowSet keeping the given window indices (copy)."""
        idx = np.asarray(indices, dtype=np.int64)
        return WindowSet(self.values[idx].copy(), self.labels[idx].copy(),
                         self.user_ids[idx].copy(), self.origins[idx].copy(),
                         self.window_length_samples, self.overlap_fraction,
                         self.class_names, self.normalization,
                         self.sample_rate_hz, self.dataset_id)

    def for_users(self, users: Sequence[str]) -> "WindowSet":
        wanted = set(map(str, users))
        mask = np.array([str(u) in wanted for u in self.user_ids])
        return self.select(np.flatnonzero(mask))

    def labeled(self) -> "WindowSet":
        return self.select(np.flatnonzero(self.labels != UNLABELED))

    def data_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.values).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()[:16]


@dataclass
class Fold:
    train_users: frozenset
    val_users: frozenset
    test_users: frozenset


@dataclass
class FoldPlan:
    folds: list[Fold]
    seed: int


def concat_window_sets(sets: Sequence[WindowSet]) -> WindowSet:
    """Stack several compatible WindowSets into one."""
    if not sets:
        raise EmptySetError("nothing to concatenate")
    first = sets[0]
    for ws in sets[1:]:
        if ws.window_length_samples != first.window_length_samples:
            raise DataError("window lengths differ across sets")
    return WindowSet(
        np.concatenate([ws.values for ws in sets]),
        np.concatenate([ws.labels for ws in sets]),
        np.concatenate([np.asarray(ws.user_ids, dtype=object) for ws in sets]),
        np.concatenate([ws.origins for ws in sets]),
        first.window_length_samples, first.overlap_fraction,
        first.class_names, first.normalization, first.sample_rate_hz, first.dataset_id)


# ---------------------------------------------------------------------------
# canonical format IO
# ---------------------------------------------------------------------------

def read_manifest(path) -> DatasetSchema:
    manifest_path = Path(path) / "manifest.json"
    if not manifest_path.is_file():
        raise FormatError(f"missing manifest.json in {path}")
    with open(manifest_path, encoding="utf-8") as f:
        raw = json.load(f)
    try:
        return DatasetSchema(
            dataset_id=raw["dataset_id"],
            sample_rate_hz=float(raw["sample_rate_hz"]),
            sensor_position=raw["sensor_position"],
            class_names=list(raw["class_names"]),
        )
    except KeyError as e:
        raise FormatError(f"manifest.json missing field {e}") from e


def write_manifest(path, schema: DatasetSchema) -> None:
    with open(Path(path) / "manifest.json", "w", encoding="utf-8") as f:
        json.dump({
            "dataset_id": schema.dataset_id,
            "sample_rate_hz": schema.sample_rate_hz,
            "sensor_position": schema.sensor_position,
            "class_names": schema.class_names,
        }, f, indent=2)
        f.write("\n")


def load_dataset(path, schema: DatasetSchema | None = None) -> list[SensorSequence]:
    """Read every user_<id>.csv under `path` into SensorSequences.

    Label strings are mapped to their index in the manifest's class_names;
    empty label cells become UNLABELED.
    """
    path = Path(path)
    if schema is None:
        schema = read_manifest(path)
    label_ids = {name: i for i, name in enumerate(schema.class_names)}
    user_files = sorted(path.glob("user_*.csv"))
    if not user_files:
        raise FormatError(f"no user_*.csv files in {path}")
    sequences = []
    for user_file in user_files:
        user_id = user_file.stem[len("user_"):]
        times, rows, labels = [], [], []
        with open(user_file, newline="", encoding="utf-8") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != ["t_s", "ax", "ay", "az", "label"]:
                raise FormatError(f"{user_file.name}: bad header {header}")
            for line in reader:
                if not line:
                    continue
                t_s, ax, ay, az, label = line
                times.append(float(t_s))
                rows.append((float(ax), float(ay), float(az)))
                if label == "":
                    labels.append(UNLABELED)
                elif label in label_ids:
                    labels.append(label_ids[label])
                else:
                    raise SchemaError(f"{user_file.name}: label {label!r} not in manifest")
        if not rows:
            raise DataError(f"{user_file.name}: empty recording")
        times = np.asarray(times)
        if np.any(np.diff(times) <= 0):
            raise DataError(f"{user_file.name}: non-monotonic timestamps")
        sequences.append(SensorSequence(
            user_id=user_id, sample_rate_hz=schema.sample_rate_hz,
            samples=np.asarray(rows), labels=np.asarray(labels),
            dataset_id=schema.dataset_id, sensor_position=schema.sensor_position))
    return sequences


def save_dataset(path, schema: DatasetSchema, sequences: Sequence[SensorSequence]) -> None:
    """Write sequences in the canonical directory format."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    write_manifest(path, schema)
    for seq in sequences:
        with open(path / f"user_{seq.user_id}.csv", "w", newline="\n", encoding="utf-8") as f:
            f.write("t_s,ax,ay,az,label\n")
            dt = 1.0 / schema.sample_rate_hz
            for i in range(len(seq)):
                name = "" if seq.labels[i] == UNLABELED else schema.class_names[seq.labels[i]]
                x, y, z = seq.samples[i]
                f.write(f"{i * dt:.6f},{x:.6f},{y:.6f},{z:.6f},{name}\n")


# ---------------------------------------------------------------------------
# resampling and windowing
# ---------------------------------------------------------------------------

def resample(seq: SensorSequence, dst_hz: float) -> SensorSequence:
    """Downsample a sequence to dst_hz.

    Integer rate ratios decimate; fractional ratios linearly interpolate onto
    the target time grid. Labels follow by nearest-sample assignment. Output
    length is floor(T * dst / src). Upsampling is unsupported.
    """
    src_hz = seq.sample_rate_hz
    if dst_hz > src_hz:
        raise DataError(f"upsampling {src_hz} Hz -> {dst_hz} Hz is unsupported")
    if dst_hz == src_hz:
        return seq
    t = len(seq)
    out_len = int(math.floor(t * dst_hz / src_hz))
    if out_len < 1:
        raise DataError("sequence too short for target rate")
    ratio = src_hz / dst_hz
    if abs(ratio - round(ratio)) < 1e-9:
        idx = np.arange(out_len) * int(round(ratio))
        samples = seq.samples[idx]
        labels = seq.labels[idx]
    else:
        dst_times = np.arange(out_len) / dst_hz
        src_times = np.arange(t) / src_hz
        samples = np.stack([np.interp(dst_times, src_times, seq.samples[:, c])
                            for c in range(3)], axis=1)
        nearest = np.clip(np.round(dst_times * src_hz).astype(np.int64), 0, t - 1)
        labels = seq.labels[nearest]
    return SensorSequence(user_id=seq.user_id, sample_rate_hz=dst_hz,
                          samples=samples, labels=labels,
                          dataset_id=seq.dataset_id, sensor_position=seq.sensor_position)


def _majority_label(labels: np.ndarray) -> int:
    # majority vote; ties go to the smallest value (UNLABELED sorts first)
    values, counts = np.unique(labels, return_counts=True)
    return int(values[np.argmax(counts)])


def make_windows(seq: SensorSequence, length_samples: int = 100,
                 overlap_fraction: float = 0.0) -> WindowSet:
    """Slice a sequence into fixed-length windows.

    stride = round(length * (1 - overlap)); each window is labeled by the
    majority label of its samples, ties broken by the smallest label value.
    """
    t = len(seq)
    if length_samples > t:
        raise EmptySetError(f"window of {length_samples} samples exceeds sequence length {t}")
    stride = int(round(length_samples * (1.0 - overlap_fraction)))
    if stride < 1:
        raise DataError("overlap_fraction too close to 1: stride would be 0")
    n = (t - length_samples) // stride + 1
    origins = np.arange(n) * stride
    values = np.stack([seq.samples[o:o + length_samples] for o in origins])
    labels = np.array([_majority_label(seq.labels[o:o + length_samples]) for o in origins])
    return WindowSet(values=values, labels=labels,
                     user_ids=np.array([seq.user_id] * n, dtype=object),
                     origins=origins, window_length_samples=length_samples,
                     overlap_fraction=overlap_fraction,
                     sample_rate_hz=seq.sample_rate_hz, dataset_id=seq.dataset_id)


def windows_from_sequences(sequences: Sequence[SensorSequence], length_samples: int = 100,
                           overlap_fraction: float = 0.0,
                           class_names: list[str] | None = None) -> WindowSet:
    ws = concat_window_sets([make_windows(s, length_samples, overlap_fraction)
                             for s in sequences])
    ws.class_names = class_names
    return ws


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def compute_norm_stats(ws: WindowSet) -> ChannelStats:
    """Per-channel mean/std over every sample of every window (std floored)."""
    if len(ws) == 0:
        raise EmptySetError("cannot compute statistics of an empty window set")
    flat = ws.values.reshape(-1, 3)
    mean = flat.mean(axis=0)
    std = np.maximum(flat.std(axis=0), STD_FLOOR)
    return ChannelStats(mean=mean, std=std, source_dataset_id=ws.dataset_id)


def normalize(ws: WindowSet, stats: ChannelStats) -> WindowSet:
    """Channel-wise (x - mean) / std; the stats reference is recorded."""
    values = (ws.values - stats.mean) / stats.std
    return WindowSet(values, ws.labels.copy(), ws.user_ids.copy(), ws.origins.copy(),
                     ws.window_length_samples, ws.overlap_fraction, ws.class_names,
                     normalization=stats, sample_rate_hz=ws.sample_rate_hz,
                     dataset_id=ws.dataset_id)


def denormalize(ws: WindowSet, stats: ChannelStats) -> WindowSet:
    values = ws.values * stats.std + stats.mean
    return WindowSet(values, ws.labels.copy(), ws.user_ids.copy(), ws.origins.copy(),
                     ws.window_length_samples, ws.overlap_fraction, ws.class_names,
                     normalization=None, sample_rate_hz=ws.sample_rate_hz,
                     dataset_id=ws.dataset_id)


# ---------------------------------------------------------------------------
# user-level cross-validation folds
# ---------------------------------------------------------------------------

def make_user_folds(users, k: int = 5, val_fraction: float = 0.2, seed: int = 0) -> FoldPlan:
    """Partition users into k test groups; per fold the rest split train/val.

    Every user lands in exactly one test set. The validation share is
    ceil(val_fraction * remaining) so at least one user validates.
    """
    users = sorted(map(str, users))
    if len(users) < k:
        raise DataError(f"need at least k={k} users, got {len(users)}")
    rng = np.random.default_rng(seed)
    order = [users[i] for i in rng.permutation(len(users))]
    test_groups = [list(g) for g in np.array_split(np.array(order, dtype=object), k)]
    folds = []
    for g in test_groups:
        rest = [u for u in order if u not in set(g)]
        n_val = max(1, math.ceil(val_fraction * len(rest)))
        val = rest[:n_val]
        train = rest[n_val:]
        folds.append(Fold(train_users=frozenset(train), val_users=frozenset(val),
                          test_users=frozenset(map(str, g))))
    return FoldPlan(folds=folds, seed=seed)
