"""Backbone tests: shapes, determinism, pretraining, and snapshot round-trips."""

import numpy as np
import pytest

import tsadapt.autodiff as ad
from tsadapt.backbone import (
    EncoderConfig,
    Model,
    classify,
    cross_entropy,
    encode,
    forward,
    load_model,
    pretrain_source,
    save_model,
)
from tsadapt.data import ShiftSpec, generate_shifted_pair
from tsadapt.errors import ConformanceError, ContractError, LabelRangeError

from conftest import finite_difference_max_rel_error, tiny_model


class TestEncoderConfig:
    def test_defaults_match_three_block_shape(self):
        cfg = EncoderConfig(in_channels=9)
        assert cfg.filters == (64, 128, 128)
        assert cfg.feature_dim == 128

    def test_requires_three_blocks(self):
        with pytest.raises(ContractError):
            EncoderConfig(in_channels=1, filters=(32, 32))


class TestEncode:
    def test_default_feature_dim_is_128(self):
        # UCIHAR-shaped input (B, 9, 128) through the default encoder
        model = Model(EncoderConfig(in_channels=9), 6, seed=0)
        x = np.random.default_rng(0).normal(size=(3, 9, 128))
        feats = encode(model, x, "running-stats")
        assert feats.shape == (3, 128)

    def test_channel_mismatch_rejected(self):
        model = Model(EncoderConfig(in_channels=9), 6, seed=0)
        with pytest.raises(ConformanceError):
            encode(model, np.zeros((2, 8, 128)))

    def test_identical_samples_identical_features(self):
        model = tiny_model()
        row = np.random.default_rng(1).normal(size=(2, 16))
        x = np.stack([row, row, row])
        feats = encode(model, x, "running-stats")
        np.testing.assert_array_equal(feats.data[0], feats.data[1])
        np.testing.assert_array_equal(feats.data[0], feats.data[2])

    def test_deterministic_in_running_mode(self):
        model = tiny_model()
        x = np.random.default_rng(2).normal(size=(4, 2, 16))
        with ad.no_grad():
            a = encode(model, x, "running-stats").data
            b = encode(model, x, "running-stats").data
        np.testing.assert_array_equal(a, b)


class TestClassify:
    def test_zero_features_give_bias(self):
        model = tiny_model()
        model.cls_bias.data[...] = [0.5, -1.0, 2.0]
        logits = classify(model, np.zeros((2, model.config.feature_dim)))
        np.testing.assert_array_equal(logits.data, [[0.5, -1.0, 2.0]] * 2)

    def test_identity_block_copies_features(self):
        model = tiny_model()
        f = model.config.feature_dim
        model.cls_weight.data[...] = np.eye(3, f)
        model.cls_bias.data[...] = 0.0
        feats = np.random.default_rng(3).normal(size=(2, f))
        np.testing.assert_allclose(classify(model, feats).data, feats[:, :3], atol=0)

    def test_hand_matmul_case(self):
        model = Model(EncoderConfig(in_channels=1, filters=(2, 2, 3),
                                    kernel_sizes=(3, 3, 3)), 2, seed=0)
        model.cls_weight.data[...] = [[1.0, 2, 3], [4, 5, 6]]
        model.cls_bias.data[...] = [1.0, -1.0]
        logits = classify(model, np.array([[1.0, 0.5, 2.0]]))
        # rows of W dotted with the feature vector by hand
        np.testing.assert_array_equal(logits.data, [[1 + 1 + 6 + 1, 4 + 2.5 + 12 - 1]])

    def test_six_class_head_emits_six_logits(self):
        model = Model(EncoderConfig(in_channels=9), 6, seed=0)
        x = np.random.default_rng(4).normal(size=(2, 9, 128))
        _, logits = forward(model, x)
        assert logits.shape == (2, 6)


class TestPretrain:
    def test_linearly_separable_synthetic(self):
        # distinct-frequency classes are linearly separable in feature space
        spec = ShiftSpec(channels=1, length=32, class_freqs=(2.0, 6.0),
                         amplitude=1.0, noise_std=0.05)
        train, _ = generate_shifted_pair(spec, spec, (64, 8), seed=0)
        model = Model(EncoderConfig(in_channels=1, filters=(4, 6, 6),
                                    kernel_sizes=(5, 3, 3)), 2, seed=0)
        pretrain_source(model, train.values, train.labels, epochs=40,
                        batch_size=32, lr=1e-3, seed=0)
        with ad.no_grad():
            _, logits = forward(model, train.values, "running-stats")
        acc = (logits.data.argmax(axis=1) == train.labels).mean()
        assert acc > 0.95

    def test_loss_trend_over_three_seeds(self):
        spec = ShiftSpec(channels=1, length=32, class_freqs=(2.0, 6.0),
                         amplitude=1.0, noise_std=0.2)
        train, _ = generate_shifted_pair(spec, spec, (96, 8), seed=1)
        histories = []
        for seed in (0, 1, 2):
            model = Model(EncoderConfig(in_channels=1, filters=(4, 6, 6),
                                        kernel_sizes=(5, 3, 3)), 2, seed=seed)
            hist = []
            pretrain_source(model, train.values, train.labels, epochs=6,
                            batch_size=32, lr=1e-3, seed=seed, epoch_losses=hist)
            histories.append(hist)
        mean = np.mean(histories, axis=0)
        assert np.all(mean[1:] <= mean[0])

    def test_empty_dataset_rejected(self):
        model = tiny_model()
        with pytest.raises(ContractError):
            pretrain_source(model, np.zeros((0, 2, 16)), np.zeros(0, dtype=int))

    def test_label_out_of_range_rejected(self):
        model = tiny_model(n_classes=3)
        x = np.zeros((4, 2, 16))
        with pytest.raises(LabelRangeError):
            pretrain_source(model, x, np.array([0, 1, 2, 3]))

    def test_cross_entropy_gradient(self):
        model = tiny_model(seed=5)
        x = np.random.default_rng(6).normal(size=(2, 2, 16))
        y = np.array([0, 2])
        params = list(model.named_parameters().values())

        def loss_fn():
            _, logits = forward(model, x, "train-stats")
            return cross_entropy(logits, y)

        assert finite_difference_max_rel_error(loss_fn, params) < 1e-4


class TestSnapshots:
    def test_round_trip_reproduces_logits_bitwise(self, tmp_path):
        model = tiny_model(seed=7)
        # make running stats non-trivial before saving
        x = np.random.default_rng(8).normal(size=(6, 2, 16))
        with ad.no_grad():
            forward(model, x, "train-stats")
        path = tmp_path / "model.ttaw"
        save_model(path, model)
        restored = load_model(path)
        with ad.no_grad():
            _, original = forward(model, x, "running-stats")
            _, reloaded = forward(restored, x, "running-stats")
        np.testing.assert_array_equal(original.data, reloaded.data)

    def test_sidecar_restores_architecture(self, tmp_path):
        model = tiny_model(seed=9)
        path = tmp_path / "model.ttaw"
        save_model(path, model)
        restored = load_model(path)
        assert restored.config == model.config
        assert restored.n_classes == model.n_classes
