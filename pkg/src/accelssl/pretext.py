"""The seven pretext objectives.

Each method is a torch module exposing ``loss(batch, rng)`` for training and
``features(x)`` for frozen-encoder classification. Batches arrive as numpy
arrays [B, L, 3]; augmentation happens in numpy before tensors enter the
network, so gradients never flow through the transforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .augment import TransformParams, contrastive_views_batch, multitask_views_batch, TRANSFORM_ORDER
from .errors import DataError
from .models import (CausalConvStack, ConvDecoder, ConvEncoder, ConvEncoderConfig,
                     CpcEncoder, CpcEncoderConfig, TransformerEncoder,
                     TransformerEncoderConfig, make_head)

EPS = 1e-8


class PretextMethod(Enum):
    MULTITASK = "multitask"
    MASKED_RECON = "masked_recon"
    CPC = "cpc"
    AUTOENCODER = "autoencoder"
    SIMCLR = "simclr"
    SIMSIAM = "simsiam"
    BYOL = "byol"


METHOD_NAMES = tuple(m.value for m in PretextMethod)


@dataclass
class MaskSpec:
    mask_fraction: float = 0.1
    masked_indices: frozenset | None = None  # explicit indices, applied to every window

    def count(self, length: int) -> int:
        n = int(round(self.mask_fraction * length))
        if self.masked_indices is not None:
            n = len(self.masked_indices)
        if n < 1:
            raise DataError("mask selects no timesteps")
        return n


# ---------------------------------------------------------------------------
# loss primitives (tested directly against closed-form identities)
# ---------------------------------------------------------------------------

def info_nce(scores: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Cross entropy of the true candidate among N scored candidates.

    With all scores equal this is ln(N) exactly.
    """
    return F.cross_entropy(scores, targets)


def nt_xent(embeddings: torch.Tensor, temperature: float) -> torch.Tensor:
    """Normalized temperature-scaled cross entropy over 2B paired embeddings.

    Row i of the first half pairs with row i of the second half. Every anchor
    scores its positive against the 2B-2 remaining embeddings plus the
    positive itself; identical embeddings give ln(2B-1).
    """
    n = embeddings.shape[0]
    if n < 4 or n % 2:
        raise DataError("need an even number >= 4 of embeddings (two views of B >= 2 windows)")
    z = F.normalize(embeddings, dim=1, eps=EPS)
    sim = z @ z.T / temperature
    # self-similarity is never a candidate
    sim = sim.masked_fill(torch.eye(n, dtype=torch.bool, device=sim.device), float("-inf"))
    b = n // 2
    positives = torch.cat([torch.arange(b, n), torch.arange(0, b)]).to(sim.device)
    return F.cross_entropy(sim, positives)


def negative_cosine(p: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of -cos(p, z); inputs need not be normalized."""
    return -F.cosine_similarity(p, z, dim=1, eps=EPS).mean()


def normalized_mse(p: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    """Mean squared error between L2-normalized rows; equals 2 - 2 cos(p, t)."""
    p = F.normalize(p, dim=1, eps=EPS)
    t = F.normalize(t, dim=1, eps=EPS)
    return ((p - t) ** 2).sum(dim=1).mean()


def multitask_bce(logits: torch.Tensor, applied: torch.Tensor) -> torch.Tensor:
    """Mean over tasks and batch of binary cross entropy; ln 2 at zero logits."""
    return F.binary_cross_entropy_with_logits(logits, applied.to(logits.dtype))


def masked_mse(recon: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """MSE restricted to masked timesteps (mask [B, L] bool)."""
    if not bool(mask.any()):
        raise DataError("mask is empty")
    m = mask.unsqueeze(-1).to(recon.dtype)
    return ((recon - target) ** 2 * m).sum() / (m.sum() * recon.shape[-1])


def _to_tensor(batch, like: nn.Module) -> torch.Tensor:
    dtype = next(like.parameters()).dtype
    if isinstance(batch, torch.Tensor):
        return batch.to(dtype)
    return torch.as_tensor(np.ascontiguousarray(batch), dtype=dtype)


# ---------------------------------------------------------------------------
# method modules
# ---------------------------------------------------------------------------

class MultitaskModel(nn.Module):
    """Conv encoder + one binary head per transformation."""

    def __init__(self, encoder_cfg: ConvEncoderConfig | None = None,
                 params: TransformParams | None = None):
        super().__init__()
        self.encoder = ConvEncoder(encoder_cfg)
        self.params = params or TransformParams()
        f = self.encoder.feature_dim
        self.task_heads = nn.ModuleList([
            nn.Sequential(nn.Linear(f, 256), nn.ReLU(), nn.Linear(256, 1))
            for _ in TRANSFORM_ORDER])

    def head_logits(self, x):
        h = self.encoder(x)
        return torch.cat([head(h) for head in self.task_heads], dim=1)

    def loss(self, batch, rng):
        views, bits = multitask_views_batch(batch, self.params, rng)
        logits = self.head_logits(_to_tensor(views, self))
        return multitask_bce(logits, torch.as_tensor(bits))

    def features(self, x):
        return self.encoder(_to_tensor(x, self))


class MaskedReconModel(nn.Module):
    """Transformer encoder reconstructing the signal at zeroed timesteps."""

    def __init__(self, encoder_cfg: TransformerEncoderConfig | None = None,
                 mask_spec: MaskSpec | None = None):
        super().__init__()
        self.encoder = TransformerEncoder(encoder_cfg)
        self.mask_spec = mask_spec or MaskSpec()
        self.recon_head = nn.Linear(self.encoder.feature_dim, 3)

    def build_mask(self, b: int, length: int, rng) -> np.ndarray:
        n = self.mask_spec.count(length)
        mask = np.zeros((b, length), dtype=bool)
        if self.mask_spec.masked_indices is not None:
            idx = np.fromiter(self.mask_spec.masked_indices, dtype=np.int64)
            if idx.min() < 0 or idx.max() >= length:
                raise DataError("masked indices out of range")
            mask[:, idx] = True
        else:
            for i in range(b):
                mask[i, rng.choice(length, size=n, replace=False)] = True
        return mask

    def reconstruct(self, x, mask: torch.Tensor):
        masked_input = x * (~mask).unsqueeze(-1).to(x.dtype)
        return self.recon_head(self.encoder(masked_input))

    def loss(self, batch, rng):
        x = _to_tensor(batch, self)
        mask = torch.as_tensor(self.build_mask(x.shape[0], x.shape[1], rng))
        return masked_mse(self.reconstruct(x, mask), x, mask)

    def features(self, x):
        return self.encoder(_to_tensor(x, self)).mean(dim=1)


class CpcModel(nn.Module):
    """Causal encoder context predicting k future latents against batch negatives."""

    def __init__(self, k: int = 32, encoder_cfg: CpcEncoderConfig | None = None):
        super().__init__()
        self.encoder = CpcEncoder(encoder_cfg)
        self.k = k
        self.predictors = nn.ModuleList([
            nn.Linear(self.encoder.context_dim, self.encoder.latent_dim, bias=False)
            for _ in range(k)])

    def loss(self, batch, rng):
        x = _to_tensor(batch, self)
        b, length = x.shape[0], x.shape[1]
        if self.k >= length:
            raise DataError(f"k={self.k} must be smaller than window length {length}")
        anchors = rng.integers(0, length - self.k, size=b)
        max_t = int(anchors.max())
        z, context = self.encoder(x, steps=max_t + 1)
        rows = torch.arange(b)
        c_t = context[rows, torch.as_tensor(anchors)]
        total = x.new_zeros(())
        for i, predictor in enumerate(self.predictors, start=1):
            pred = predictor(c_t)  # [B, Z]
            future = z[rows, torch.as_tensor(anchors + i)]  # [B, Z]
            scores = pred @ future.T
            total = total + info_nce(scores, rows)
        return total / self.k

    def features(self, x):
        _, context = self.encoder(_to_tensor(x, self))
        return context[:, -1]


class AutoencoderModel(nn.Module):
    """Conv encoder with a mirrored conv decoder reconstructing the window."""

    def __init__(self, kernel: int = 3, filters=(32, 64, 128), dropout: float = 0.2,
                 extra_block: tuple | None = None):
        super().__init__()
        enc_filters = list(filters) + ([extra_block[0]] if extra_block else [])
        self.encoder = CausalConvStack(enc_filters, kernel, dropout)
        self.decoder = ConvDecoder(self.encoder.latent_dim,
                                   tuple(reversed(enc_filters)), kernel, dropout)

    def reconstruct(self, x):
        return self.decoder(self.encoder(x))

    def loss(self, batch, rng=None):
        x = _to_tensor(batch, self)
        return F.mse_loss(self.reconstruct(x), x)

    def features(self, x):
        return self.encoder(_to_tensor(x, self)).mean(dim=1)


class SimclrModel(nn.Module):
    """Conv encoder + MLP projection trained with NT-Xent over two views."""

    def __init__(self, temperature: float = 0.1,
                 encoder_cfg: ConvEncoderConfig | None = None,
                 params: TransformParams | None = None):
        super().__init__()
        self.encoder = ConvEncoder(encoder_cfg)
        self.projection = make_head("simclr_proj", self.encoder.feature_dim)
        self.temperature = temperature
        self.params = params or TransformParams()

    def loss(self, batch, rng):
        if len(batch) < 2:
            raise DataError("contrastive loss needs at least 2 windows for negatives")
        view_a, view_b = contrastive_views_batch(batch, self.params, rng)
        x = _to_tensor(np.concatenate([view_a, view_b]), self)
        return nt_xent(self.projection(self.encoder(x)), self.temperature)

    def features(self, x):
        return self.encoder(_to_tensor(x, self))


class SimsiamModel(nn.Module):
    """Siamese views, prediction head on one side, stop-gradient on the other."""

    def __init__(self, encoder_cfg: ConvEncoderConfig | None = None,
                 params: TransformParams | None = None):
        super().__init__()
        self.encoder = ConvEncoder(encoder_cfg)
        self.projection = make_head("simsiam_proj", self.encoder.feature_dim)
        self.prediction = make_head("simsiam_pred", 96)
        self.params = params or TransformParams()

    def branches(self, x):
        z = self.projection(self.encoder(x))
        return z, self.prediction(z)

    def loss_from_branches(self, z_a, p_a, z_b, p_b):
        return 0.5 * negative_cosine(p_a, z_b.detach()) + \
            0.5 * negative_cosine(p_b, z_a.detach())

    def loss(self, batch, rng):
        view_a, view_b = contrastive_views_batch(batch, self.params, rng)
        z_a, p_a = self.branches(_to_tensor(view_a, self))
        z_b, p_b = self.branches(_to_tensor(view_b, self))
        return self.loss_from_branches(z_a, p_a, z_b, p_b)

    def features(self, x):
        return self.encoder(_to_tensor(x, self))


class ByolModel(nn.Module):
    """Online network chases an EMA target network across two views.

    Only online parameters carry gradients; the target copies move by
    ``target <- ema_decay * target + (1 - ema_decay) * online`` after each
    optimizer step.
    """

    def __init__(self, ema_decay: float = 0.996,
                 encoder_cfg: ConvEncoderConfig | None = None,
                 params: TransformParams | None = None):
        super().__init__()
        if not 0.0 < ema_decay < 1.0:
            raise DataError("ema_decay must lie in (0, 1)")
        self.ema_decay = ema_decay
        self.params = params or TransformParams()
        self.encoder = ConvEncoder(encoder_cfg)
        self.projection = make_head("byol_proj", self.encoder.feature_dim)
        self.prediction = make_head("byol_pred", 64)
        self.target_encoder = ConvEncoder(encoder_cfg)
        self.target_projection = make_head("byol_proj", self.encoder.feature_dim)
        self.reset_target()

    def reset_target(self):
        self.target_encoder.load_state_dict(self.encoder.state_dict())
        self.target_projection.load_state_dict(self.projection.state_dict())
        for p in self.target_encoder.parameters():
            p.requires_grad_(False)
        for p in self.target_projection.parameters():
            p.requires_grad_(False)

    def online(self, x):
        return self.prediction(self.projection(self.encoder(x)))

    def target(self, x):
        with torch.no_grad():
            return self.target_projection(self.target_encoder(x))

    def loss(self, batch, rng):
        view_a, view_b = contrastive_views_batch(batch, self.params, rng)
        a = _to_tensor(view_a, self)
        b = _to_tensor(view_b, self)
        return 0.5 * normalized_mse(self.online(a), self.target(b)) + \
            0.5 * normalized_mse(self.online(b), self.target(a))

    @torch.no_grad()
    def ema_update(self):
        for online, target in ((self.encoder, self.target_encoder),
                               (self.projection, self.target_projection)):
            for p_o, p_t in zip(online.state_dict().values(), target.state_dict().values()):
                if p_t.dtype.is_floating_point:
                    p_t.mul_(self.ema_decay).add_(p_o, alpha=1.0 - self.ema_decay)
                else:
                    p_t.copy_(p_o)

    def features(self, x):
        return self.encoder(_to_tensor(x, self))


def byol_step(model: ByolModel, batch, rng, optimizer=None):
    """One training step: loss, optional gradient update, then the EMA move."""
    loss = model.loss(batch, rng)
    if optimizer is not None:
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    model.ema_update()
    return loss, model


# ---------------------------------------------------------------------------
# construction from hyperparameter combos
# ---------------------------------------------------------------------------

def build_pretext_model(method: str, combo: dict | None = None,
                        params: TransformParams | None = None) -> nn.Module:
    """Instantiate a method module from a hyperparameter combo.

    Only architecture-bearing keys are consumed here; optimizer keys are
    read by the training engine.
    """
    combo = dict(combo or {})
    if method == "multitask":
        return MultitaskModel(params=params)
    if method == "masked_recon":
        cfg = TransformerEncoderConfig(layers=int(combo.get("layers", 2)))
        frac = float(combo.get("mask_pct", 10)) / 100.0
        return MaskedReconModel(cfg, MaskSpec(mask_fraction=frac))
    if method == "cpc":
        cfg = CpcEncoderConfig(kernel=int(combo.get("kernel", 3)))
        return CpcModel(k=int(combo.get("k", 32)), encoder_cfg=cfg)
    if method == "autoencoder":
        return AutoencoderModel(kernel=int(combo.get("kernel", 3)))
    if method == "simclr":
        return SimclrModel(temperature=float(combo.get("temperature", 0.1)), params=params)
    if method == "simsiam":
        return SimsiamModel(params=params)
    if method == "byol":
        return ByolModel(ema_decay=float(combo.get("ema_decay", 0.996)), params=params)
    raise DataError(f"unknown pretext method {method!r}")


def feature_dim(method: str, combo: dict | None = None) -> int:
    if method in ("multitask", "simclr", "simsiam", "byol"):
        return ConvEncoderConfig().feature_dim
    if method == "cpc":
        return CpcEncoderConfig().gru_units
    if method in ("masked_recon",):
        return TransformerEncoderConfig().embed_dim
    if method == "autoencoder":
        return CpcEncoderConfig().filters[-1]
    raise DataError(f"unknown pretext method {method!r}")


# ---------------------------------------------------------------------------
# supervised twins (identical encoders trained end to end, for CKA baselines)
# ---------------------------------------------------------------------------

class _EncoderClassifier(nn.Module):
    def __init__(self, encoder, feature_fn, in_dim, num_classes):
        super().__init__()
        self.encoder = encoder
        self._feature_fn = feature_fn
        self.head = nn.Linear(in_dim, num_classes)

    def forward(self, x):
        return self.head(self._feature_fn(self.encoder, x))


def build_supervised_twin(method: str, num_classes: int,
                          combo: dict | None = None) -> nn.Module:
    """End-to-end classifier sharing the pretext method's encoder layout."""
    combo = dict(combo or {})
    if method in ("multitask", "simclr", "simsiam", "byol"):
        encoder = ConvEncoder()
        return _EncoderClassifier(encoder, lambda enc, x: enc(x),
                                  encoder.feature_dim, num_classes)
    if method == "cpc":
        encoder = CpcEncoder(CpcEncoderConfig(kernel=int(combo.get("kernel", 3))))
        return _EncoderClassifier(encoder, lambda enc, x: enc(x)[1][:, -1],
                                  encoder.context_dim, num_classes)
    if method == "masked_recon":
        cfg = TransformerEncoderConfig(layers=int(combo.get("layers", 2)))
        encoder = TransformerEncoder(cfg)
        return _EncoderClassifier(encoder, lambda enc, x: enc(x).mean(dim=1),
                                  encoder.feature_dim, num_classes)
    if method == "autoencoder":
        encoder = CausalConvStack(kernel=int(combo.get("kernel", 3)))
        return _EncoderClassifier(encoder, lambda enc, x: enc(x).mean(dim=1),
                                  encoder.latent_dim, num_classes)
    raise DataError(f"unknown pretext method {method!r}")
