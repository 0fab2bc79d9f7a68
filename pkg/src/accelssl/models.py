"""Network architectures: encoders, decoder, heads and supervised baselines.

Tensor convention is [B, L, 3] at the interface; conv stacks transpose to
channel-first internally. All modules run in float32 by default and can be
cast with ``.double()`` for high-precision gradient checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import DataError


@dataclass
class ConvEncoderConfig:
    filters: tuple = (32, 64, 96)
    kernels: tuple = (24, 16, 8)
    dropout: float = 0.1
    global_max_pool: bool = True
    extra_block: tuple | None = None  # (filters, kernel)

    def __post_init__(self):
        if len(self.filters) != len(self.kernels):
            raise DataError("filters and kernels must have equal length")

    @property
    def feature_dim(self) -> int:
        return self.extra_block[0] if self.extra_block else self.filters[-1]


@dataclass
class CpcEncoderConfig:
    filters: tuple = (32, 64, 128)
    kernel: int = 3
    dropout: float = 0.2
    gru_units: int = 256
    gru_layers: int = 2
    extra_block: tuple | None = None


@dataclass
class TransformerEncoderConfig:
    embed_dim: int = 128
    heads: int = 8
    layers: int = 2
    feedforward_dim: int = 256
    dropout: float = 0.1
    use_positional: bool = True

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise DataError("embed_dim must be divisible by heads")


def _same_pad(kernel: int) -> nn.Module:
    # explicit zero padding keeps output length == input length for stride 1
    return nn.ConstantPad1d(((kernel - 1) // 2, kernel // 2), 0.0)


class ConvEncoder(nn.Module):
    """1D conv blocks (conv -> ReLU -> dropout) with global max pooling.

    Blocks are length-preserving so windows down to a handful of samples
    still produce a feature vector of size ``cfg.feature_dim``.
    """

    def __init__(self, cfg: ConvEncoderConfig | None = None):
        super().__init__()
        self.cfg = cfg or ConvEncoderConfig()
        specs = list(zip(self.cfg.filters, self.cfg.kernels))
        if self.cfg.extra_block:
            specs.append(tuple(self.cfg.extra_block))
        blocks = []
        in_ch = 3
        for out_ch, kernel in specs:
            blocks.append(nn.Sequential(
                _same_pad(kernel),
                nn.Conv1d(in_ch, out_ch, kernel),
                nn.ReLU(),
                nn.Dropout(self.cfg.dropout),
            ))
            in_ch = out_ch
        self.blocks = nn.ModuleList(blocks)
        self.feature_dim = self.cfg.feature_dim

    def forward(self, x):
        h = x.transpose(1, 2)
        for block in self.blocks:
            h = block(h)
        if self.cfg.global_max_pool:
            return h.amax(dim=2)
        return h.transpose(1, 2)

    def layer_activations(self, x):
        """Per-block conv outputs (before activation/dropout), as [B, L, C]."""
        h = x.transpose(1, 2)
        acts = []
        for i, block in enumerate(self.blocks):
            pre = block[1](block[0](h))
            acts.append((f"conv{i + 1}", pre.transpose(1, 2)))
            h = block[3](block[2](pre))
        return acts


class CausalConvStack(nn.Module):
    """Length-preserving conv blocks with left-side reflect padding.

    The latent at step t depends only on samples <= t, which keeps
    downstream per-step contexts strictly causal.
    """

    def __init__(self, filters=(32, 64, 128), kernel: int = 3, dropout: float = 0.2):
        super().__init__()
        blocks = []
        in_ch = 3
        for out_ch in filters:
            blocks.append(nn.Sequential(
                nn.ReflectionPad1d((kernel - 1, 0)),
                nn.Conv1d(in_ch, out_ch, kernel),
                nn.ReLU(),
                nn.Dropout(dropout),
            ))
            in_ch = out_ch
        self.blocks = nn.ModuleList(blocks)
        self.latent_dim = in_ch

    def forward(self, x):
        h = x.transpose(1, 2)
        for block in self.blocks:
            h = block(h)
        return h.transpose(1, 2)

    def layer_activations(self, x):
        h = x.transpose(1, 2)
        acts = []
        for i, block in enumerate(self.blocks):
            pre = block[1](block[0](h))
            acts.append((f"conv{i + 1}", pre.transpose(1, 2)))
            h = block[3](block[2](pre))
        return acts


class CpcEncoder(nn.Module):
    """Causal conv stack plus a 2-layer GRU producing per-step context."""

    def __init__(self, cfg: CpcEncoderConfig | None = None):
        super().__init__()
        self.cfg = cfg or CpcEncoderConfig()
        filters = list(self.cfg.filters)
        if self.cfg.extra_block:
            filters.append(self.cfg.extra_block[0])
        self.conv = CausalConvStack(filters, self.cfg.kernel, self.cfg.dropout)
        self.latent_dim = self.conv.latent_dim
        self.gru = nn.GRU(self.latent_dim, self.cfg.gru_units,
                          num_layers=self.cfg.gru_layers, batch_first=True,
                          dropout=self.cfg.dropout)
        self.context_dim = self.cfg.gru_units

    def latents(self, x):
        return self.conv(x)

    def forward(self, x, steps: int | None = None):
        """Returns (latents [B, L, Z], context [B, S, C]) where S = steps or L."""
        z = self.latents(x)
        inp = z if steps is None else z[:, :steps]
        context, _ = self.gru(inp)
        return z, context

    def layer_activations(self, x):
        acts = self.conv.layer_activations(x)
        context, _ = self.gru(self.latents(x))
        acts.append(("gru", context))
        return acts


def sinusoidal_positions(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Standard alternating sine/cosine position codes, [length, dim]."""
    position = torch.arange(length, dtype=dtype).unsqueeze(1)
    div = torch.exp(torch.arange(0, dim, 2, dtype=dtype) * (-math.log(10000.0) / dim))
    codes = torch.zeros(length, dim, dtype=dtype)
    codes[:, 0::2] = torch.sin(position * div)
    codes[:, 1::2] = torch.cos(position * div)
    return codes


class TransformerEncoder(nn.Module):
    """Conv embedding to 128 dims + sinusoidal positions + self-attention stack."""

    def __init__(self, cfg: TransformerEncoderConfig | None = None):
        super().__init__()
        self.cfg = cfg or TransformerEncoderConfig()
        # kernel size 1 keeps masked (zeroed) steps from borrowing neighbors
        self.embed = nn.Conv1d(3, self.cfg.embed_dim, kernel_size=1)
        layer = nn.TransformerEncoderLayer(
            d_model=self.cfg.embed_dim, nhead=self.cfg.heads,
            dim_feedforward=self.cfg.feedforward_dim, dropout=self.cfg.dropout,
            batch_first=True)
        self.encoder = nn.TransformerEncoder(layer, self.cfg.layers)
        self.feature_dim = self.cfg.embed_dim

    def _embedded(self, x):
        h = self.embed(x.transpose(1, 2)).transpose(1, 2)
        if self.cfg.use_positional:
            h = h + sinusoidal_positions(x.shape[1], self.cfg.embed_dim,
                                         dtype=h.dtype).to(h.device)
        return h

    def forward(self, x):
        return self.encoder(self._embedded(x))

    def layer_activations(self, x):
        h = self._embedded(x)
        acts = [("embed", h)]
        for i, layer in enumerate(self.encoder.layers):
            h = layer(h)
            acts.append((f"attn{i + 1}", h))
        return acts


class ConvDecoder(nn.Module):
    """Mirror of the CPC-style conv encoder: filters shrink back to 3 channels."""

    def __init__(self, latent_dim: int = 128, filters: tuple = (128, 64, 32),
                 kernel: int = 3, dropout: float = 0.2):
        super().__init__()
        blocks = []
        in_ch = latent_dim
        for out_ch in filters:
            blocks.append(nn.Sequential(
                _same_pad(kernel),
                nn.Conv1d(in_ch, out_ch, kernel),
                nn.ReLU(),
                nn.Dropout(dropout),
            ))
            in_ch = out_ch
        self.blocks = nn.ModuleList(blocks)
        self.project = nn.Conv1d(in_ch, 3, kernel_size=1)

    def forward(self, latent):
        h = latent.transpose(1, 2)
        for block in self.blocks:
            h = block(h)
        return self.project(h).transpose(1, 2)


# ---------------------------------------------------------------------------
# heads
# ---------------------------------------------------------------------------

def make_head(kind: str, in_dim: int, num_classes: int | None = None) -> nn.Module:
    """Build a named head. Projection/prediction sizes are fixed by kind."""
    if kind == "linear":
        return nn.Linear(in_dim, num_classes)
    if kind == "mlp256_128":
        return nn.Sequential(
            nn.Linear(in_dim, 256), nn.BatchNorm1d(256), nn.ReLU(), nn.Dropout(0.2),
            nn.Linear(256, 128), nn.BatchNorm1d(128), nn.ReLU(), nn.Dropout(0.2),
            nn.Linear(128, num_classes))
    if kind == "simclr_proj":
        return nn.Sequential(
            nn.Linear(in_dim, 256), nn.ReLU(),
            nn.Linear(256, 128), nn.ReLU(),
            nn.Linear(128, 50))
    if kind == "simsiam_proj":
        return nn.Sequential(
            nn.Linear(in_dim, 128), nn.BatchNorm1d(128), nn.ReLU(),
            nn.Linear(128, 128), nn.BatchNorm1d(128), nn.ReLU(),
            nn.Linear(128, 96), nn.BatchNorm1d(96), nn.ReLU())
    if kind == "simsiam_pred":
        return nn.Sequential(
            nn.Linear(96, 64), nn.BatchNorm1d(64), nn.ReLU(),
            nn.Linear(64, 96))
    if kind == "byol_proj":
        return nn.Sequential(
            nn.Linear(in_dim, 256), nn.BatchNorm1d(256), nn.ReLU(),
            nn.Linear(256, 64))
    if kind == "byol_pred":
        return nn.Sequential(
            nn.Linear(64, 128), nn.BatchNorm1d(128), nn.ReLU(),
            nn.Linear(128, 64))
    raise DataError(f"unknown head kind {kind!r}")


def classifier_forward(features: torch.Tensor, head: nn.Module) -> torch.Tensor:
    if features.ndim != 2:
        raise DataError(f"expected [B, F] features, got {tuple(features.shape)}")
    return head(features)


# ---------------------------------------------------------------------------
# supervised baselines
# ---------------------------------------------------------------------------

class DeepConvLstm(nn.Module):
    """Four 5x1 conv layers (64 filters) over time, then a 2-layer LSTM.

    After the conv stack the 3 sensor channels x 64 filters are flattened to
    a 192-wide sequence feature fed to the LSTM.
    """

    def __init__(self, num_classes: int):
        super().__init__()
        convs = []
        in_ch = 1
        for _ in range(4):
            convs.extend([nn.Conv2d(in_ch, 64, kernel_size=(5, 1)), nn.ReLU()])
            in_ch = 64
        self.convs = nn.Sequential(*convs)
        self.lstm = nn.LSTM(64 * 3, 128, num_layers=2, batch_first=True)
        self.head = nn.Linear(128, num_classes)

    def forward(self, x):
        h = self.convs(x.unsqueeze(1))  # [B, 64, L-16, 3]
        h = h.permute(0, 2, 1, 3).flatten(2)  # [B, L-16, 192]
        out, _ = self.lstm(h)
        return self.head(out[:, -1])


class RecurrentClassifier(nn.Module):
    """Single 128-unit LSTM or GRU layer, dropout, linear softmax head."""

    def __init__(self, num_classes: int, cell: str = "lstm"):
        super().__init__()
        rnn_cls = {"lstm": nn.LSTM, "gru": nn.GRU}[cell]
        self.rnn = rnn_cls(3, 128, batch_first=True)
        self.dropout = nn.Dropout(0.2)
        self.head = nn.Linear(128, num_classes)

    def forward(self, x):
        out, _ = self.rnn(x)
        return self.head(self.dropout(out[:, -1]))


class ConvClassifier(nn.Module):
    """Default conv encoder with a single linear layer on the pooled features."""

    def __init__(self, num_classes: int, cfg: ConvEncoderConfig | None = None):
        super().__init__()
        self.encoder = ConvEncoder(cfg)
        self.head = nn.Linear(self.encoder.feature_dim, num_classes)

    def forward(self, x):
        return self.head(self.encoder(x))


class MlpClassifier(nn.Module):
    """Flattened raw window through the 3-layer MLP head."""

    def __init__(self, num_classes: int, window_length: int = 100):
        super().__init__()
        self.head = make_head("mlp256_128", window_length * 3, num_classes)

    def forward(self, x):
        return self.head(x.flatten(1))


BASELINE_KINDS = ("deepconvlstm", "lstm128", "gru128", "conv_classifier", "mlp_classifier")


def make_baseline(kind: str, num_classes: int, window_length: int = 100) -> nn.Module:
    if kind == "deepconvlstm":
        return DeepConvLstm(num_classes)
    if kind == "lstm128":
        return RecurrentClassifier(num_classes, "lstm")
    if kind == "gru128":
        return RecurrentClassifier(num_classes, "gru")
    if kind == "conv_classifier":
        return ConvClassifier(num_classes)
    if kind == "mlp_classifier":
        return MlpClassifier(num_classes, window_length)
    raise DataError(f"unknown baseline kind {kind!r}")


def freeze(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    module.eval()
    return module


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
