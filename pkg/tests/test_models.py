import numpy as np
import pytest
import torch

from accelssl.checkpoint import (checkpoint_from_module, load_checkpoint,
                                 load_into_module, save_checkpoint)
from accelssl.errors import DataError, IntegrityError
from accelssl.models import (ConvDecoder, ConvEncoder, ConvEncoderConfig,
                             CpcEncoder, CpcEncoderConfig, DeepConvLstm,
                             TransformerEncoder, TransformerEncoderConfig,
                             count_parameters, freeze, make_baseline, make_head)


def batch(b=4, length=100, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(b, length, 3, generator=g)


class TestConvEncoder:
    def test_default_feature_dim(self):
        enc = ConvEncoder()
        assert enc(batch()).shape == (4, 96)

    def test_extra_block_feature_dim(self):
        enc = ConvEncoder(ConvEncoderConfig(extra_block=(128, 4)))
        assert enc(batch()).shape == (4, 128)

    def test_zero_input_zero_bias_gives_zero_output(self):
        enc = ConvEncoder()
        with torch.no_grad():
            for block in enc.blocks:
                block[1].bias.zero_()
        enc.eval()
        out = enc(torch.zeros(2, 100, 3))
        assert torch.all(out == 0)

    def test_short_windows_still_encode(self):
        enc = ConvEncoder()
        assert enc(batch(length=32)).shape == (4, 96)

    def test_layer_activations_names_and_shapes(self):
        enc = ConvEncoder()
        acts = enc.layer_activations(batch())
        assert [n for n, _ in acts] == ["conv1", "conv2", "conv3"]
        assert [a.shape[-1] for _, a in acts] == [32, 64, 96]


class TestCpcEncoder:
    def test_shapes(self):
        enc = CpcEncoder()
        z, c = enc(batch())
        assert z.shape == (4, 100, 128)
        assert c.shape == (4, 100, 256)

    @pytest.mark.parametrize("kernel", [3, 5])
    def test_length_preserved_for_both_kernels(self, kernel):
        enc = CpcEncoder(CpcEncoderConfig(kernel=kernel))
        z, _ = enc(batch())
        assert z.shape[1] == 100

    def test_context_is_causal(self):
        torch.manual_seed(0)
        enc = CpcEncoder().eval()
        x = batch(b=2, length=60)
        t = 25
        with torch.no_grad():
            _, c_ref = enc(x)
            perturbed = x.clone()
            perturbed[:, t + 1:] += torch.randn_like(perturbed[:, t + 1:])
            _, c_pert = enc(perturbed)
        assert torch.allclose(c_ref[:, : t + 1], c_pert[:, : t + 1], atol=1e-6)
        assert not torch.allclose(c_ref[:, -1], c_pert[:, -1], atol=1e-3)

    def test_gru_in_layer_activations(self):
        acts = CpcEncoder().layer_activations(batch(b=2, length=40))
        assert [n for n, _ in acts] == ["conv1", "conv2", "conv3", "gru"]


class TestTransformerEncoder:
    def test_output_shape_six_layers(self):
        enc = TransformerEncoder(TransformerEncoderConfig(layers=6))
        assert enc(batch(b=2)).shape == (2, 100, 128)

    def test_minimal_two_layer_config(self):
        enc = TransformerEncoder(TransformerEncoderConfig(layers=2))
        assert enc(batch(b=2, length=40)).shape == (2, 40, 128)

    def test_permutation_equivariance_without_positions(self):
        torch.manual_seed(1)
        enc = TransformerEncoder(
            TransformerEncoderConfig(layers=2, use_positional=False, dropout=0.0))
        enc.eval()
        x = batch(b=1, length=16)
        perm = torch.randperm(16)
        with torch.no_grad():
            out = enc(x)
            out_perm = enc(x[:, perm])
        assert torch.allclose(out[:, perm], out_perm, atol=1e-5)

    def test_positions_break_equivariance(self):
        torch.manual_seed(1)
        enc = TransformerEncoder(TransformerEncoderConfig(layers=2, dropout=0.0))
        enc.eval()
        x = batch(b=1, length=16)
        perm = torch.roll(torch.arange(16), 5)
        with torch.no_grad():
            out = enc(x)
            out_perm = enc(x[:, perm])
        assert not torch.allclose(out[:, perm], out_perm, atol=1e-3)


class TestDecoder:
    def test_round_trip_shape(self):
        dec = ConvDecoder()
        latent = torch.randn(3, 100, 128)
        assert dec(latent).shape == (3, 100, 3)

    def test_zero_latent_zero_bias(self):
        dec = ConvDecoder()
        with torch.no_grad():
            for block in dec.blocks:
                block[1].bias.zero_()
            dec.project.bias.zero_()
        dec.eval()
        assert torch.all(dec(torch.zeros(1, 50, 128)) == 0)

    @pytest.mark.parametrize("kernel", [3, 5, 7, 9, 11])
    def test_kernel_options(self, kernel):
        dec = ConvDecoder(kernel=kernel)
        assert dec(torch.randn(1, 64, 128)).shape == (1, 64, 3)


class TestHeads:
    def test_linear_head_logits(self):
        head = make_head("linear", 96, 6)
        assert head(torch.randn(5, 96)).shape == (5, 6)

    def test_mlp_parameter_count(self):
        head = make_head("mlp256_128", 96, 6)
        linear = 96 * 256 + 256 + 256 * 128 + 128 + 128 * 6 + 6
        batchnorm = 2 * 256 + 2 * 128
        assert count_parameters(head) == linear + batchnorm

    def test_zero_linear_head_zero_logits(self):
        head = make_head("linear", 8, 3)
        with torch.no_grad():
            head.weight.zero_()
            head.bias.zero_()
        assert torch.all(head(torch.randn(4, 8)) == 0)

    def test_projection_head_sizes(self):
        x = torch.randn(4, 96)
        assert make_head("simclr_proj", 96)(x).shape == (4, 50)
        assert make_head("simsiam_proj", 96)(x).shape == (4, 96)
        assert make_head("simsiam_pred", 96)(torch.randn(4, 96)).shape == (4, 96)
        assert make_head("byol_proj", 96)(x).shape == (4, 64)
        assert make_head("byol_pred", 64)(torch.randn(4, 64)).shape == (4, 64)

    def test_unknown_head_kind(self):
        with pytest.raises(DataError):
            make_head("nope", 8, 2)


class TestBaselines:
    @pytest.mark.parametrize("kind", ["deepconvlstm", "lstm128", "gru128",
                                      "conv_classifier", "mlp_classifier"])
    def test_logit_shapes(self, kind):
        model = make_baseline(kind, num_classes=12)
        assert model(batch(b=3)).shape == (3, 12)

    def test_conv_classifier_feature_dim(self):
        model = make_baseline("conv_classifier", 4)
        assert model.head.in_features == 96

    def test_deepconvlstm_recurrent_width(self):
        model = DeepConvLstm(5)
        assert model.lstm.input_size == 64 * 3


class TestEvalDeterminism:
    def test_dropout_off_at_eval(self):
        enc = ConvEncoder()
        enc.eval()
        x = batch()
        with torch.no_grad():
            a = enc(x)
            b = enc(x)
        assert torch.equal(a, b)

    def test_frozen_encoder_unchanged_by_head_step(self):
        enc = freeze(ConvEncoder())
        head = make_head("linear", 96, 3)
        before = {k: v.clone() for k, v in enc.state_dict().items()}
        opt = torch.optim.Adam(head.parameters(), lr=1e-2)
        for _ in range(3):
            logits = head(enc(batch()))
            loss = logits.sum()
            opt.zero_grad()
            loss.backward()
            opt.step()
        after = enc.state_dict()
        for key in before:
            assert torch.equal(before[key], after[key])


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        enc = ConvEncoder()
        ckpt = checkpoint_from_module(enc, pretext_method="multitask",
                                      pretrain_config={"lr": 1e-4}, seed=3)
        save_checkpoint(ckpt, tmp_path / "ck")
        loaded = load_checkpoint(tmp_path / "ck")
        assert loaded.pretext_method == "multitask"
        assert loaded.seed == 3
        for name, arr in ckpt.weights.items():
            np.testing.assert_array_equal(arr, loaded.weights[name])
        other = ConvEncoder()
        load_into_module(loaded, other)
        for a, b in zip(enc.state_dict().values(), other.state_dict().values()):
            assert torch.equal(a, b)

    def test_truncated_weight_file_is_integrity_error(self, tmp_path):
        ckpt = checkpoint_from_module(make_head("linear", 4, 2))
        save_checkpoint(ckpt, tmp_path / "ck")
        victim = next((tmp_path / "ck").glob("*.bin"))
        victim.write_bytes(victim.read_bytes()[:-4])
        with pytest.raises(IntegrityError):
            load_checkpoint(tmp_path / "ck")

    def test_method_tag_is_metadata_only(self, tmp_path):
        ckpt = checkpoint_from_module(make_head("linear", 4, 2),
                                      pretext_method="whatever")
        save_checkpoint(ckpt, tmp_path / "ck")
        loaded = load_checkpoint(tmp_path / "ck")
        assert loaded.pretext_method == "whatever"
