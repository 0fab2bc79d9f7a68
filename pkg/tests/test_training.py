import itertools
import math

import numpy as np
import pytest
import torch

from accelssl.data import WindowSet
from accelssl.errors import ConfigError, DataError, TrainingDiverged
from accelssl.pretext import PretextMethod
from accelssl.training import (CLASSIFIER_SPACES, HyperparamCombo,
                               OPTIMIZER_ROUTING, PRETRAIN_SPACES, TrainBudget,
                               draw_combos, extract_features, finetune, lr_at,
                               pretrain, rebuild_pretext_model, space_size,
                               supervised_train, train_head_on_features)
from conftest import make_window_set


class TestDrawCombos:
    def test_small_space_returns_full_grid(self):
        space = {"lr": [1, 2, 3], "l2": [4, 5, 6]}
        combos = draw_combos(space, n=20, seed=0)
        assert len(combos) == 9
        assert {tuple(c.values.items()) for c in combos} == {
            (("lr", a), ("l2", b)) for a, b in itertools.product([1, 2, 3], [4, 5, 6])}

    def test_large_space_gives_distinct_draws(self):
        space = {"a": list(range(10)), "b": list(range(9)), "c": list(range(6))}
        assert space_size(space) == 540
        combos = draw_combos(space, n=20, seed=1)
        assert len(combos) == 20
        seen = {tuple(sorted(c.values.items())) for c in combos}
        assert len(seen) == 20
        for combo in combos:
            for key, value in combo.values.items():
                assert value in space[key]

    def test_same_seed_same_draws(self):
        space = PRETRAIN_SPACES["byol"]
        a = draw_combos(space, 10, seed=42)
        b = draw_combos(space, 10, seed=42)
        assert [c.values for c in a] == [c.values for c in b]

    def test_multitask_grid_is_nine(self):
        combos = draw_combos(PRETRAIN_SPACES["multitask"], 20, seed=0)
        assert len(combos) == 9


class TestSchedules:
    def test_step_decay_formula(self):
        assert lr_at("step_decay", 25, 1e-3) == pytest.approx(1e-3 * 0.8 ** 2)
        assert lr_at("step_decay", 0, 1e-3) == pytest.approx(1e-3)

    def test_cosine_hits_zero_at_max(self):
        assert lr_at("cosine", 50, 0.1, {"max_epochs": 50}) == pytest.approx(0.0)
        assert lr_at("cosine", 0, 0.1, {"max_epochs": 50}) == pytest.approx(0.1)

    def test_noam_peaks_at_warmup(self):
        extras = {"warmup": 400, "embed_dim": 128}
        peak = lr_at("noam", 400, extras=extras)
        for step in (100, 399, 401, 4000):
            assert lr_at("noam", step, extras=extras) <= peak + 1e-12

    def test_unknown_schedule(self):
        with pytest.raises(ConfigError):
            lr_at("nope", 1)


class TestOptimizerRouting:
    @pytest.mark.parametrize("method", [m.value for m in PretextMethod])
    def test_every_method_has_a_route(self, method):
        assert OPTIMIZER_ROUTING[method] in ("adam", "sgd_cosine")

    def test_contrastive_methods_use_sgd(self):
        for method in ("simclr", "simsiam", "byol"):
            assert OPTIMIZER_ROUTING[method] == "sgd_cosine"
        for method in ("multitask", "masked_recon", "cpc", "autoencoder"):
            assert OPTIMIZER_ROUTING[method] == "adam"


def tiny_budget(epochs=3, patience=2, batch=16):
    return TrainBudget(max_epochs=epochs, early_stop_patience=patience,
                       batch_size=batch)


def sinusoid_window_set(n=64, length=32, seed=0, noise=0.05):
    g = np.random.default_rng(seed)
    t = np.arange(length) / 50.0
    values = np.zeros((n, length, 3))
    for i in range(n):
        freq = g.uniform(1.0, 6.0)
        phase = g.uniform(0, 2 * np.pi, size=3)
        values[i] = np.sin(2 * np.pi * freq * t[:, None] + phase)
    values += g.normal(scale=noise, size=values.shape)
    labels = g.integers(0, 3, size=n)
    return WindowSet(values, labels, np.array(["u"] * n, dtype=object),
                     np.arange(n), length, 0.0)


class TestPretrain:
    def test_autoencoder_overfits_tiny_set(self):
        ws = sinusoid_window_set(n=64, length=32, seed=0)
        combo = HyperparamCombo({"lr": 1e-3, "l2": 0.0, "kernel": 3})
        ckpt, history = pretrain("autoencoder", ws, combo,
                                 TrainBudget(max_epochs=50, early_stop_patience=49,
                                             batch_size=16),
                                 seed=0, val_ws=ws.select(range(8)))
        assert min(history.train_loss) < 0.1

    def test_replay_is_deterministic(self):
        ws = make_window_set(n=32, length=32, seed=1)
        combo = HyperparamCombo({"lr": 1e-4, "l2": 1e-4})
        _, h1 = pretrain("multitask", ws, combo, tiny_budget(), seed=7)
        _, h2 = pretrain("multitask", ws, combo, tiny_budget(), seed=7)
        assert h1.train_loss == h2.train_loss
        assert h1.val_loss == h2.val_loss

    def test_early_stopping_counts_patience_epochs(self, monkeypatch):
        ws = make_window_set(n=32, length=32)
        calls = iter(range(1, 100))

        def rising_val_loss(model, values, batch_size, seed):
            return float(next(calls))

        monkeypatch.setattr("accelssl.training._eval_pretext_loss", rising_val_loss)
        combo = HyperparamCombo({"lr": 1e-4, "l2": 0.0})
        _, history = pretrain("multitask", ws, combo,
                              TrainBudget(max_epochs=50, early_stop_patience=5,
                                          batch_size=16), seed=0)
        assert history.epochs_run == 6
        assert history.best_epoch == 1

    def test_best_checkpoint_not_worse_than_any_epoch(self):
        ws = make_window_set(n=48, length=32, seed=2)
        combo = HyperparamCombo({"lr": 1e-3, "l2": 0.0, "kernel": 3})
        _, history = pretrain("autoencoder", ws, combo, tiny_budget(epochs=6,
                                                                    patience=5),
                              seed=0)
        assert history.val_loss[history.best_epoch - 1] == min(history.val_loss)

    def test_divergence_aborts_with_diagnostic(self):
        ws = make_window_set(n=32, length=32)
        combo = HyperparamCombo({"lr": 1e9, "l2": 0.0})  # guaranteed blow-up
        with pytest.raises(TrainingDiverged):
            pretrain("multitask", ws, combo, tiny_budget(epochs=8), seed=0)

    def test_checkpoint_rebuilds(self):
        ws = make_window_set(n=24, length=32)
        combo = HyperparamCombo({"lr": 1e-4, "l2": 0.0})
        ckpt, _ = pretrain("multitask", ws, combo, tiny_budget(epochs=2, patience=1),
                           seed=0)
        model = rebuild_pretext_model(ckpt)
        feats = extract_features(model, ws.values)
        assert feats.shape == (24, 96)


def separable_features(n=160, num_classes=3, dim=8, seed=0, spread=4.0):
    g = np.random.default_rng(seed)
    labels = g.integers(0, num_classes, size=n)
    centers = g.normal(scale=spread, size=(num_classes, dim))
    return centers[labels] + g.normal(scale=0.3, size=(n, dim)), labels


class TestHeadTraining:
    def test_linearly_separable_reaches_high_f1(self):
        x, y = separable_features()
        clf = train_head_on_features(x[:120], y[:120], x[120:], y[120:], "linear", 3,
                                     HyperparamCombo({"classifier_lr": 1e-2}),
                                     TrainBudget(max_epochs=50,
                                                 early_stop_patience=5,
                                                 batch_size=32), seed=0)
        assert clf.best_val_f1 >= 0.95

    def test_single_class_degenerates_to_that_class(self):
        x = np.random.default_rng(0).normal(size=(40, 6))
        y = np.full(40, 2)
        clf = train_head_on_features(x, y, x, y, "linear", 4,
                                     HyperparamCombo({"classifier_lr": 0.1}),
                                     tiny_budget(epochs=50, patience=49), seed=0)
        pred = clf.predict_features(x)
        assert set(pred) == {2}

    def test_out_of_range_labels_rejected(self):
        x = np.zeros((4, 3))
        with pytest.raises(DataError):
            train_head_on_features(x, np.array([0, 1, 2, 5]), x,
                                   np.array([0, 0, 0, 0]), "linear", 3)


class TestFinetune:
    def test_encoder_bitwise_frozen(self):
        ws = make_window_set(n=40, length=32, seed=3)
        combo = HyperparamCombo({"lr": 1e-4, "l2": 0.0})
        ckpt, _ = pretrain("multitask", ws, combo, tiny_budget(epochs=2, patience=1),
                           seed=0)
        weights_before = {k: v.copy() for k, v in ckpt.weights.items()}
        clf = finetune(ckpt, ws, "linear",
                       HyperparamCombo({"classifier_lr": 1e-3}),
                       tiny_budget(epochs=3, patience=2), seed=0, num_classes=3)
        assert clf.best_val_f1 >= 0.0
        for key, arr in weights_before.items():
            np.testing.assert_array_equal(arr, ckpt.weights[key])

    def test_mlp_head_runs(self):
        ws = make_window_set(n=40, length=32, seed=4)
        ckpt, _ = pretrain("multitask", ws,
                           HyperparamCombo({"lr": 1e-4, "l2": 0.0}),
                           tiny_budget(epochs=2, patience=1), seed=0)
        clf = finetune(ckpt, ws, "mlp256_128",
                       HyperparamCombo({"classifier_lr": 1e-3}),
                       tiny_budget(epochs=2, patience=1), seed=0, num_classes=3)
        assert clf.head_kind == "mlp256_128"


class TestSupervised:
    def test_conv_classifier_learns_separable_windows(self):
        g = np.random.default_rng(0)
        n, length = 90, 32
        labels = np.arange(n) % 2
        t = np.arange(length) / 50.0
        values = np.zeros((n, length, 3))
        for i in range(n):
            freq = 2.0 if labels[i] == 0 else 8.0
            values[i] = np.sin(2 * np.pi * freq * t)[:, None] + \
                g.normal(scale=0.05, size=(length, 3))
        ws = WindowSet(values, labels, np.array(["u"] * n, dtype=object),
                       np.arange(n), length, 0.0)
        trained = supervised_train("conv_classifier", ws,
                                   HyperparamCombo({"lr": 1e-3}),
                                   TrainBudget(max_epochs=25,
                                               early_stop_patience=5,
                                               batch_size=32), seed=0)
        assert trained.best_val_f1 >= 0.9

    def test_classifier_space_routing(self):
        assert CLASSIFIER_SPACES["multitask"]["classifier_lr"] == [1e-4, 3e-4, 5e-4]
        assert CLASSIFIER_SPACES["default"]["classifier_l2"] == [0.0, 1e-4, 1e-5]
