"""Feature-space analyses: linear CKA between layers, the linear-separability
gap under random labels, and PCA-based implicit dimensionality."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DataError
from .protocols import macro_f1

PROBE_WINDOWS = 1000
PCA_COMPONENTS = 20


@dataclass
class FeatureMatrix:
    values: np.ndarray  # [rows, cols]
    layer_name: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 2:
            raise DataError("feature matrix must be [rows >= 2, cols]")
        if not np.isfinite(self.values).all():
            raise DataError("feature matrix contains non-finite values")


@dataclass
class SimilarityMatrix:
    values: np.ndarray  # [La, Lb] in [0, 1]
    layer_names_a: list[str]
    layer_names_b: list[str]

    def to_dict(self) -> dict:
        return {"values": self.values.tolist(),
                "layer_names_a": self.layer_names_a,
                "layer_names_b": self.layer_names_b}


def _as_array(x) -> np.ndarray:
    if isinstance(x, FeatureMatrix):
        return x.values
    return np.asarray(x, dtype=np.float64)


def linear_cka(x, y) -> float:
    """Linear centered kernel alignment between two feature matrices.

    ||Yc^T Xc||_F^2 / (||Xc^T Xc||_F ||Yc^T Yc||_F) after column centering.
    Wide matrices route through the row-Gram form, which is algebraically
    identical and avoids cols_a x cols_b intermediates.
    """
    x = _as_array(x)
    y = _as_array(y)
    if x.shape[0] != y.shape[0]:
        raise DataError("feature matrices must share their row count")
    n = x.shape[0]
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    if n * n <= x.shape[1] * y.shape[1]:
        kx = xc @ xc.T
        ky = yc @ yc.T
        numerator = float((kx * ky).sum())
        denominator = float(np.linalg.norm(kx) * np.linalg.norm(ky))
    else:
        numerator = float(np.linalg.norm(yc.T @ xc) ** 2)
        denominator = float(np.linalg.norm(xc.T @ xc) * np.linalg.norm(yc.T @ yc))
    if denominator <= 0.0:
        raise DataError("CKA is undefined for zero-variance features")
    return numerator / denominator


def _collect_activations(module, values: np.ndarray, batch_size: int = 256):
    """Run layer_activations over batches; returns [(name, [N, flat])]."""
    module.eval()
    pieces: dict[str, list] = {}
    names: list[str] = []
    with torch.inference_mode():
        for start in range(0, len(values), batch_size):
            x = torch.as_tensor(values[start:start + batch_size], dtype=torch.float32)
            for name, act in module.layer_activations(x):
                if name not in pieces:
                    pieces[name] = []
                    names.append(name)
                pieces[name].append(act.flatten(1).cpu().numpy())
    return [(name, np.concatenate(pieces[name]).astype(np.float64)) for name in names]


def layerwise_similarity(module_a, module_b, probe_values: np.ndarray) -> SimilarityMatrix:
    """Pairwise linear CKA between every layer of two encoders.

    Both modules see the same probe windows; activations are taken at the
    layer outputs themselves (before activation functions and dropout) and
    time-distributed maps are flattened to rows x (time * channels).
    """
    acts_a = _collect_activations(module_a, probe_values)
    acts_b = _collect_activations(module_b, probe_values)
    values = np.zeros((len(acts_a), len(acts_b)))
    for i, (_, xa) in enumerate(acts_a):
        for j, (_, xb) in enumerate(acts_b):
            values[i, j] = linear_cka(xa, xb)
    return SimilarityMatrix(values=values,
                            layer_names_a=[n for n, _ in acts_a],
                            layer_names_b=[n for n, _ in acts_b])


# ---------------------------------------------------------------------------
# linear separability
# ---------------------------------------------------------------------------

def _train_linear_probe(x: np.ndarray, y: np.ndarray, num_classes: int,
                        seed: int, epochs: int = 200, lr: float = 1e-2) -> float:
    """Full-batch linear probe; returns the train-set macro F1."""
    torch.manual_seed(seed)
    xt = torch.as_tensor(x, dtype=torch.float32)
    yt = torch.as_tensor(y, dtype=torch.long)
    probe = torch.nn.Linear(x.shape[1], num_classes)
    optimizer = torch.optim.Adam(probe.parameters(), lr=lr)
    for _ in range(epochs):
        loss = F.cross_entropy(probe(xt), yt)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    with torch.inference_mode():
        pred = probe(xt).argmax(dim=1).cpu().numpy()
    return macro_f1(pred, y, num_classes)


def separability_gap_from_features(features: np.ndarray, labels: np.ndarray,
                                   num_classes: int, seed: int = 0,
                                   return_details: bool = False):
    """Train-F1 difference between probes fit on true vs uniformly random labels."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    random_labels = rng.integers(0, num_classes, size=labels.shape)
    true_f1 = _train_linear_probe(features, labels, num_classes, seed)
    random_f1 = _train_linear_probe(features, random_labels, num_classes, seed)
    gap = true_f1 - random_f1
    if return_details:
        return gap, true_f1, random_f1
    return gap


def separability_gap(extract_fn, labeled_ws, seed: int = 0,
                     num_classes: int | None = None,
                     return_details: bool = False):
    """Separability gap of a frozen encoder on a labeled window set.

    ``extract_fn`` maps a [N, L, 3] array to [N, F] features.
    """
    features = np.asarray(extract_fn(labeled_ws.values))
    labels = labeled_ws.labels
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    return separability_gap_from_features(features, labels, num_classes, seed,
                                          return_details=return_details)


# ---------------------------------------------------------------------------
# implicit dimensionality
# ---------------------------------------------------------------------------

def implicit_dimensionality(features, n: int = PCA_COMPONENTS) -> np.ndarray:
    """Cumulative explained-variance fractions of the first n principal
    components; entry i is (sum of top i eigenvalues) / (total variance)."""
    x = _as_array(features)
    if x.shape[0] <= n:
        raise DataError(f"need more than n={n} rows, got {x.shape[0]}")
    n = min(n, x.shape[1])
    centered = x - x.mean(axis=0)
    singular = np.linalg.svd(centered, compute_uv=False)
    eigenvalues = singular ** 2
    total = eigenvalues.sum()
    if total <= 0.0:
        raise DataError("implicit dimensionality is undefined for constant features")
    return np.clip(np.cumsum(eigenvalues[:n]) / total, 0.0, 1.0)
