"""The eight accelerometer window transformations and their samplers.

All functions are pure given an explicit numpy Generator. Batch variants
(``*_batch``, operating on [B, L, 3]) are the fast path used during
training; the single-window surface wraps them.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DataError


class TransformKind(Enum):
    JITTER = "jitter"
    SCALING = "scaling"
    ROTATION = "rotation"
    CHANNEL_PERMUTE = "channel_permute"
    SCRAMBLE = "scramble"
    TIME_WARP = "time_warp"
    NEGATION = "negation"
    REVERSING = "reversing"


TRANSFORM_ORDER = tuple(TransformKind)


@dataclass
class TransformParams:
    jitter_std: float = 0.05
    scale_mean: float = 1.0
    scale_std: float = 0.1
    scramble_sections: int = 4
    warp_knots: int = 4
    warp_speed_std: float = 0.2

    def __post_init__(self):
        if min(self.jitter_std, self.scale_mean, self.scale_std,
               self.warp_knots, self.warp_speed_std) <= 0:
            raise DataError("transform parameters must be positive")
        if self.scramble_sections < 2:
            raise DataError("scramble_sections must be at least 2")


# ---------------------------------------------------------------------------
# batch kernels, input [B, L, 3]
# ---------------------------------------------------------------------------

def jitter_batch(x, params: TransformParams, rng) -> np.ndarray:
    return x + rng.normal(0.0, params.jitter_std, size=x.shape)


def scaling_batch(x, params: TransformParams, rng) -> np.ndarray:
    factors = rng.normal(params.scale_mean, params.scale_std, size=(x.shape[0], 1, 3))
    return x * factors


def random_rotation_matrices(b: int, rng) -> np.ndarray:
    """[b, 3, 3] proper rotations: uniform axis on the sphere, angle uniform
    in [0, 2pi), assembled with the Rodrigues formula."""
    axis = rng.normal(size=(b, 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    angle = rng.uniform(0.0, 2.0 * np.pi, size=b)
    zeros = np.zeros(b)
    k = np.stack([
        np.stack([zeros, -axis[:, 2], axis[:, 1]], axis=1),
        np.stack([axis[:, 2], zeros, -axis[:, 0]], axis=1),
        np.stack([-axis[:, 1], axis[:, 0], zeros], axis=1),
    ], axis=1)
    eye = np.broadcast_to(np.eye(3), (b, 3, 3))
    sin = angle[:, None, None]
    return eye + np.sin(sin) * k + (1.0 - np.cos(sin)) * (k @ k)


def rotation_batch(x, params: TransformParams, rng) -> np.ndarray:
    mats = random_rotation_matrices(x.shape[0], rng)
    # row vectors: rotated = v @ R^T for every timestep
    return np.einsum("blc,bdc->bld", x, mats)


def channel_permute_batch(x, params: TransformParams, rng) -> np.ndarray:
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        out[i] = x[i][:, rng.permutation(3)]
    return out


def scramble_batch(x, params: TransformParams, rng) -> np.ndarray:
    l = x.shape[1]
    sections = params.scramble_sections
    if l < sections:
        raise DataError(f"window length {l} shorter than {sections} scramble sections")
    bounds = [s[0] for s in np.array_split(np.arange(l), sections)] + [l]
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        order = rng.permutation(sections)
        pieces = [x[i, bounds[j]:bounds[j + 1]] for j in order]
        out[i] = np.concatenate(pieces, axis=0)
    return out


def time_warp_batch(x, params: TransformParams, rng) -> np.ndarray:
    """Re-time each window with a cubic spline through `warp_knots` random
    speed knots (positive Gaussian, mean 1), then resample back to length L.

    Speeds integrate to a warped clock which is rescaled to span the original
    duration, so the output length is exactly L.
    """
    b, l, _ = x.shape
    knots_x = np.linspace(0.0, l - 1.0, params.warp_knots)
    speeds = rng.normal(1.0, params.warp_speed_std, size=(b, params.warp_knots))
    speeds = np.clip(speeds, 0.1, None)
    spline = CubicSpline(knots_x, speeds, axis=1)
    rate = np.clip(spline(np.arange(l)), 0.05, None)  # [b, l]
    clock = np.cumsum(rate, axis=1)
    clock -= clock[:, :1]
    clock *= (l - 1.0) / np.maximum(clock[:, -1:], 1e-12)
    low = np.clip(np.floor(clock).astype(np.int64), 0, l - 2)
    frac = (clock - low)[..., None]
    rows = np.arange(b)[:, None]
    return x[rows, low] * (1.0 - frac) + x[rows, low + 1] * frac


def negation_batch(x, params: TransformParams, rng) -> np.ndarray:
    return -x


def reversing_batch(x, params: TransformParams, rng) -> np.ndarray:
    return x[:, ::-1, :].copy()


_BATCH_KERNELS = {
    TransformKind.JITTER: jitter_batch,
    TransformKind.SCALING: scaling_batch,
    TransformKind.ROTATION: rotation_batch,
    TransformKind.CHANNEL_PERMUTE: channel_permute_batch,
    TransformKind.SCRAMBLE: scramble_batch,
    TransformKind.TIME_WARP: time_warp_batch,
    TransformKind.NEGATION: negation_batch,
    TransformKind.REVERSING: reversing_batch,
}


def apply_transform_batch(kind: TransformKind, x, params: TransformParams, rng) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != 3:
        raise DataError(f"expected [B, L, 3], got {x.shape}")
    return _BATCH_KERNELS[kind](x, params, rng)


def apply_transform(kind: TransformKind, w, params: TransformParams, rng) -> np.ndarray:
    """Apply one named transformation to a single [L, 3] window."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[1] != 3:
        raise DataError(f"expected [L, 3], got {w.shape}")
    return apply_transform_batch(kind, w[None], params, rng)[0]


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------

def sample_contrastive_pair(w, params: TransformParams, rng):
    """Two views of one window, each from one independently drawn transform."""
    a, b = contrastive_views_batch(np.asarray(w, dtype=np.float64)[None], params, rng)
    return a[0], b[0]


def contrastive_views_batch(x, params: TransformParams, rng):
    """Per window, draw two transforms independently and apply one per view."""
    x = np.asarray(x, dtype=np.float64)
    kinds_a = rng.integers(0, len(TRANSFORM_ORDER), size=x.shape[0])
    kinds_b = rng.integers(0, len(TRANSFORM_ORDER), size=x.shape[0])
    return (_apply_kinds(x, kinds_a, params, rng),
            _apply_kinds(x, kinds_b, params, rng))


def _apply_kinds(x, kind_idx, params, rng):
    out = np.empty_like(x)
    for k, kind in enumerate(TRANSFORM_ORDER):
        sel = np.flatnonzero(kind_idx == k)
        if sel.size:
            out[sel] = _BATCH_KERNELS[kind](x[sel], params, rng)
    return out


def sample_multitask_batch(w, params: TransformParams, rng):
    """Each transform fires independently with p=0.5, composed in enum order.

    Returns (transformed window, applied bits in enum order).
    """
    out, bits = multitask_views_batch(np.asarray(w, dtype=np.float64)[None], params, rng)
    return out[0], bits[0]


def multitask_views_batch(x, params: TransformParams, rng):
    x = np.asarray(x, dtype=np.float64)
    b = x.shape[0]
    bits = rng.integers(0, 2, size=(b, len(TRANSFORM_ORDER)))
    out = x.copy()
    for k, kind in enumerate(TRANSFORM_ORDER):
        sel = np.flatnonzero(bits[:, k] == 1)
        if sel.size:
            out[sel] = _BATCH_KERNELS[kind](out[sel], params, rng)
    return out, bits
