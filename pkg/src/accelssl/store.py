"""Append-only JSON Lines store for run records."""

from __future__ import annotations

import json
import logging
import math
import os
import time
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path

log = logging.getLogger(__name__)


@dataclass
class RunRecord:
    method: str
    dataset_id: str
    criterion: str
    fold: int
    seed: int
    combo: dict
    metrics: dict
    run_id: str = field(default_factory=lambda: uuid.uuid4().hex)
    status: str = "ok"
    wall_time_s: float = 0.0
    data_hash: str = ""
    params: dict = field(default_factory=dict)
    created_at: float = field(default_factory=time.time)

    def __post_init__(self):
        for key, value in self.metrics.items():
            if isinstance(value, float) and not math.isfinite(value):
                raise ValueError(f"metric {key!r} is not finite")

    def key(self) -> tuple:
        """Identity used for resume checks (combo order-insensitive)."""
        return (self.method, self.dataset_id, self.criterion, self.fold,
                self.seed, json.dumps(self.combo, sort_keys=True),
                json.dumps(self.params, sort_keys=True))


def persist(record: RunRecord, store_path) -> None:
    """Append one record as a single JSON line.

    The line is written with one os.write on an O_APPEND descriptor, so
    concurrent writers never interleave within a line.
    """
    line = json.dumps(asdict(record), sort_keys=True) + "\n"
    store_path = Path(store_path)
    store_path.parent.mkdir(parents=True, exist_ok=True)
    fd = os.open(store_path, os.O_WRONLY | os.O_CREAT | os.O_APPEND, 0o644)
    try:
        os.write(fd, line.encode("utf-8"))
    finally:
        os.close(fd)


def read_records(store_path) -> list[RunRecord]:
    """Parse the store, skipping malformed lines with a warning."""
    store_path = Path(store_path)
    if not store_path.exists():
        return []
    records = []
    with open(store_path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
                records.append(RunRecord(**raw))
            except (json.JSONDecodeError, TypeError, ValueError) as e:
                log.warning("%s:%d skipped malformed row (%s)", store_path, lineno, e)
    return records


def completed_keys(store_path) -> set:
    return {r.key() for r in read_records(store_path) if r.status == "ok"}
