"""Synthetic accelerometer datasets for desk-scale runs.

Every class is a sinusoid mixture: a fundamental on a geometric frequency
grid between ``freq_lo`` and ``freq_hi`` plus a half-strength second
harmonic, with per-class per-channel amplitudes drawn once from the config
seed (uniform in [0.5, 1.5]) and then rescaled so every class carries the
same total signal power. Classes therefore differ in frequency content,
not loudness. Nuisances: a per-user sensor orientation (proper 3D
rotation), a per-user gain in ``user_gain_range``, an extra per-segment
gain from the same range, and random segment phases. White Gaussian noise
of ``noise_std`` is added per channel; at the defaults the SNR is below
0 dB, so untrained features are deliberately weak.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .augment import random_rotation_matrices
from .data import DatasetSchema, SensorSequence, save_dataset


@dataclass
class SyntheticConfig:
    num_classes: int = 3
    num_users: int = 6
    sample_rate_hz: float = 50.0
    target_windows: int = 2000
    window_length: int = 100
    overlap_fraction: float = 0.5
    segment_seconds: float = 8.0
    freq_lo: float = 1.2
    freq_hi: float = 4.9
    noise_std: float = 1.0
    user_gain_range: tuple = (0.7, 1.3)
    rotate_users: bool = True
    seed: int = 0
    dataset_id: str = "synthetic"
    sensor_position: str = "other"

    @property
    def stride(self) -> int:
        return int(round(self.window_length * (1.0 - self.overlap_fraction)))

    def class_frequencies(self) -> np.ndarray:
        c = self.num_classes
        if c == 1:
            return np.array([self.freq_lo])
        ratio = (self.freq_hi / self.freq_lo) ** (1.0 / (c - 1))
        return self.freq_lo * ratio ** np.arange(c)

    def class_amplitudes(self) -> np.ndarray:
        """[num_classes, 3 channels, 2 harmonics], fixed by the config seed.

        Rescaled so every class has equal total power: loudness never
        identifies a class, only spectral shape does.
        """
        rng = np.random.default_rng(self.seed + 90001)
        amps = rng.uniform(0.5, 1.5, size=(self.num_classes, 3, 2))
        amps[:, :, 1] *= 0.5
        power = (amps ** 2).sum(axis=(1, 2), keepdims=True)
        return amps * np.sqrt(3.0 / power)

    def windows_per_user(self) -> list[int]:
        base, extra = divmod(self.target_windows, self.num_users)
        return [base + (1 if u < extra else 0) for u in range(self.num_users)]

    def class_names(self) -> list[str]:
        return [f"activity_{i}" for i in range(self.num_classes)]

    def schema(self) -> DatasetSchema:
        return DatasetSchema(dataset_id=self.dataset_id,
                             sample_rate_hz=self.sample_rate_hz,
                             sensor_position=self.sensor_position,
                             class_names=self.class_names())


def generate_sequences(cfg: SyntheticConfig | None = None) -> list[SensorSequence]:
    cfg = cfg or SyntheticConfig()
    rng = np.random.default_rng(cfg.seed)
    freqs = cfg.class_frequencies()
    amps = cfg.class_amplitudes()
    seg_samples = max(1, int(round(cfg.segment_seconds * cfg.sample_rate_hz)))
    sequences = []
    for user_index, n_windows in enumerate(cfg.windows_per_user()):
        total = cfg.window_length + cfg.stride * (n_windows - 1)
        rotation = (random_rotation_matrices(1, rng)[0] if cfg.rotate_users
                    else np.eye(3))
        gain = rng.uniform(*cfg.user_gain_range)
        samples = np.zeros((total, 3))
        labels = np.zeros(total, dtype=np.int64)
        class_cycle = rng.permutation(cfg.num_classes)
        position = 0
        segment = 0
        while position < total:
            label = int(class_cycle[segment % cfg.num_classes])
            if segment and segment % cfg.num_classes == 0:
                class_cycle = rng.permutation(cfg.num_classes)
            end = min(position + seg_samples, total)
            t = np.arange(position, end) / cfg.sample_rate_hz
            phase = rng.uniform(0.0, 2.0 * math.pi, size=(3, 2))
            clean = np.zeros((end - position, 3))
            for harmonic in (1, 2):
                arg = 2.0 * math.pi * freqs[label] * harmonic * t
                for ch in range(3):
                    clean[:, ch] += amps[label, ch, harmonic - 1] * np.sin(
                        arg + phase[ch, harmonic - 1])
            segment_gain = rng.uniform(*cfg.user_gain_range)
            clean = clean @ rotation.T * (gain * segment_gain)
            samples[position:end] = clean
            labels[position:end] = label
            position = end
            segment += 1
        samples += rng.normal(0.0, cfg.noise_std, size=samples.shape)
        sequences.append(SensorSequence(
            user_id=f"{user_index:02d}", sample_rate_hz=cfg.sample_rate_hz,
            samples=samples, labels=labels, dataset_id=cfg.dataset_id,
            sensor_position=cfg.sensor_position))
    return sequences


def make_synthetic_dataset(path, cfg: SyntheticConfig | None = None):
    """Write a synthetic dataset in the canonical directory format."""
    cfg = cfg or SyntheticConfig()
    sequences = generate_sequences(cfg)
    save_dataset(path, cfg.schema(), sequences)
    return sequences, cfg.schema()
