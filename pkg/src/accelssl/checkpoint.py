"""Checkpoint container: manifest.json plus one raw little-endian file per array."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError, IntegrityError


@dataclass
class ModelCheckpoint:
    arch_manifest: dict  # weight name -> {"shape": [...], "dtype": "float32"}
    weights: dict  # weight name -> np.ndarray
    pretext_method: str = ""
    pretrain_config: dict = field(default_factory=dict)
    seed: int = 0
    arch: dict = field(default_factory=dict)  # enough to rebuild the module

    def __post_init__(self):
        for name, meta in self.arch_manifest.items():
            arr = self.weights.get(name)
            if arr is None:
                raise IntegrityError(f"manifest entry {name!r} has no weight array")
            if list(arr.shape) != list(meta["shape"]):
                raise IntegrityError(
                    f"{name}: weight shape {list(arr.shape)} != manifest {meta['shape']}")


def checkpoint_from_module(module: torch.nn.Module, pretext_method: str = "",
                           pretrain_config: dict | None = None, seed: int = 0,
                           arch: dict | None = None) -> ModelCheckpoint:
    weights, manifest = {}, {}
    for name, tensor in module.state_dict().items():
        arr = tensor.detach().cpu().numpy().copy()
        weights[name] = arr
        manifest[name] = {"shape": list(arr.shape), "dtype": str(arr.dtype)}
    return ModelCheckpoint(arch_manifest=manifest, weights=weights,
                           pretext_method=pretext_method,
                           pretrain_config=dict(pretrain_config or {}),
                           seed=seed, arch=dict(arch or {}))


def load_into_module(ckpt: ModelCheckpoint, module: torch.nn.Module) -> torch.nn.Module:
    state = {name: torch.from_numpy(arr.copy()) for name, arr in ckpt.weights.items()}
    module.load_state_dict(state)
    return module


def _weight_filename(name: str) -> str:
    return name.replace("/", "_") + ".bin"


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "pretext_method": ckpt.pretext_method,
        "pretrain_config": ckpt.pretrain_config,
        "seed": ckpt.seed,
        "arch": ckpt.arch,
        "weights": ckpt.arch_manifest,
    }
    with open(path / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2)
        f.write("\n")
    for name, arr in ckpt.weights.items():
        arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        with open(path / _weight_filename(name), "wb") as f:
            f.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path) -> ModelCheckpoint:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.is_file():
        raise FormatError(f"missing manifest.json in {path}")
    with open(manifest_path, encoding="utf-8") as f:
        meta = json.load(f)
    weights = {}
    for name, spec in meta["weights"].items():
        wfile = path / _weight_filename(name)
        if not wfile.is_file():
            raise IntegrityError(f"weight file for {name!r} is missing")
        dtype = np.dtype(spec["dtype"]).newbyteorder("<")
        raw = wfile.read_bytes()
        expected = int(np.prod(spec["shape"])) * dtype.itemsize if spec["shape"] else dtype.itemsize
        if len(raw) != expected:
            raise IntegrityError(
                f"{name}: file holds {len(raw)} bytes, manifest implies {expected}")
        arr = np.frombuffer(raw, dtype=dtype).reshape(spec["shape"]).copy()
        weights[name] = arr.astype(np.dtype(spec["dtype"]))
    return ModelCheckpoint(arch_manifest=meta["weights"], weights=weights,
                           pretext_method=meta.get("pretext_method", ""),
                           pretrain_config=meta.get("pretrain_config", {}),
                           seed=meta.get("seed", 0), arch=meta.get("arch", {}))
