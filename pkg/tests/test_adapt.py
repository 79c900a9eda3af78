"""Streaming-loop tests: single-pass discipline, causality, reductions."""

import numpy as np
import pytest

from tsadapt.accup import AccupConfig
from tsadapt.adapt import AdaptState, LayerMask, RunRecord, adapt_batch, run_stream
from tsadapt.baselines import StrategyConfig, run_baseline_stream
from tsadapt.data import TimeSeriesBatch, make_stream
from tsadapt.errors import ConfigurationError, ContractError


def quiet_config(**overrides):
    base = dict(k_support=10, eta=20.0, tau=0.7, lr=0.0)
    base.update(overrides)
    return AccupConfig(**base)


def param_vector(model):
    return np.concatenate([p.data.ravel() for p in model.named_parameters().values()])


class TestLayerMask:
    def test_needs_one_trainable_block(self):
        with pytest.raises(ConfigurationError):
            LayerMask(False, False, False)

    def test_masked_blocks_stay_out_of_the_optimizer(self, pretrained):
        config = quiet_config(lr=1e-3)
        state = AdaptState(pretrained.clone(), config, LayerMask(False, False, True))
        names = set(state.model.encoder_parameters((False, False, True)))
        assert len(state.optimizer.params) == len(names)


class TestAdaptBatch:
    def test_zero_lr_is_a_noop_step_with_predictions(self, pretrained, shift_data):
        _, target = shift_data
        state = AdaptState(pretrained.clone(), quiet_config(use_contrast=True, lr=0.0))
        before = param_vector(state.model)
        preds, loss, state = adapt_batch(state, target.values[:32])
        assert preds.shape == (32,)
        assert np.isfinite(loss)
        np.testing.assert_array_equal(param_vector(state.model), before)

    def test_nonzero_lr_moves_parameters(self, pretrained, shift_data):
        _, target = shift_data
        state = AdaptState(pretrained.clone(), quiet_config(use_contrast=True, lr=3e-4))
        before = param_vector(state.model)
        batch = target.values[:32]
        adapt_batch(state, batch)
        adapt_batch(state, batch)  # same batch again: adaptation occurred
        delta = np.linalg.norm(param_vector(state.model) - before)
        assert delta > 0.0

    def test_documented_learning_rates_accepted(self):
        AccupConfig(lr=3e-4)
        AccupConfig(lr=1e-5)

    def test_classifier_parameters_never_move(self, pretrained, shift_data):
        _, target = shift_data
        state = AdaptState(pretrained.clone(), quiet_config(use_contrast=True, lr=1e-3))
        w_before = state.model.cls_weight.data.copy()
        b_before = state.model.cls_bias.data.copy()
        for start in (0, 32, 64):
            adapt_batch(state, target.values[start:start + 32])
        np.testing.assert_array_equal(state.model.cls_weight.data, w_before)
        np.testing.assert_array_equal(state.model.cls_bias.data, b_before)

    def test_one_optimizer_step_per_batch(self, pretrained, shift_data):
        _, target = shift_data
        state = AdaptState(pretrained.clone(), quiet_config(use_contrast=True, lr=1e-4))
        for i, start in enumerate((0, 32, 64)):
            adapt_batch(state, target.values[start:start + 32])
            assert state.optimizer.t == i + 1
            assert state.step == i + 1

    def test_disabling_contrast_freezes_parameters(self, pretrained, shift_data):
        _, target = shift_data
        state = AdaptState(pretrained.clone(), quiet_config(use_contrast=False, lr=1e-3))
        before = param_vector(state.model)
        for start in (0, 32, 64):
            adapt_batch(state, target.values[start:start + 32])
        np.testing.assert_array_equal(param_vector(state.model), before)
        assert state.optimizer.t == 3

    def test_labeled_batches_are_rejected(self, pretrained, shift_data):
        _, target = shift_data
        state = AdaptState(pretrained.clone(), quiet_config())
        labeled = TimeSeriesBatch(target.values[:8], target.labels[:8])
        with pytest.raises(ContractError):
            adapt_batch(state, labeled)

    def test_channel_mismatch_rejected(self, pretrained):
        from tsadapt.errors import ConformanceError

        state = AdaptState(pretrained.clone(), quiet_config())
        with pytest.raises(ConformanceError):
            adapt_batch(state, np.zeros((4, 5, 64)))


class TestModuleSwitchWiring:
    def test_no_prototypes_and_no_entcomp_yield_ensemble_logits(self, pretrained, shift_data):
        from tsadapt.adapt import accup_batch

        _, target = shift_data
        config = quiet_config(use_prototypes=False, use_entropy_comparison=False)
        import tsadapt.autodiff as ad
        with ad.no_grad():
            outs, _ = accup_batch(pretrained.clone(), target.values[:16],
                                  target.values[:16], config)
        np.testing.assert_array_equal(outs.p_out, outs.p_ens)
        assert outs.p_proto is None


class TestRunStream:
    def test_empty_stream_rejected(self, pretrained):
        with pytest.raises(ContractError):
            run_stream(pretrained, [], quiet_config())

    def test_input_model_is_not_mutated(self, pretrained, shift_data):
        _, target = shift_data
        before = param_vector(pretrained)
        bn_before = [blk.bn.running_mean.copy() for blk in pretrained.blocks]
        run_stream(pretrained, make_stream(target, 32)[:4],
                   quiet_config(use_contrast=True, lr=1e-3), seed=0)
        np.testing.assert_array_equal(param_vector(pretrained), before)
        for blk, rm in zip(pretrained.blocks, bn_before):
            np.testing.assert_array_equal(blk.bn.running_mean, rm)

    def test_prefix_causality(self, pretrained, shift_data):
        _, target = shift_data
        stream = make_stream(target, 32)
        full = run_stream(pretrained, stream, quiet_config(use_contrast=True, lr=1e-3),
                          seed=3)
        rng = np.random.default_rng(0)
        for _ in range(5):
            t = int(rng.integers(1, len(stream)))
            prefix = run_stream(pretrained, stream[:t],
                                quiet_config(use_contrast=True, lr=1e-3), seed=3)
            assert prefix.batch_predictions == full.batch_predictions[:t]

    def test_each_batch_consumed_once(self, pretrained, shift_data):
        _, target = shift_data
        consumed = []

        def stream():
            for i, batch in enumerate(make_stream(target, 32)[:4]):
                consumed.append(i)
                yield batch

        run_stream(pretrained, stream(), quiet_config(), seed=0)
        assert consumed == [0, 1, 2, 3]

    def test_labels_only_affect_scoring(self, pretrained, shift_data):
        _, target = shift_data
        stream = make_stream(target, 32)[:6]
        rng = np.random.default_rng(1)
        shuffled = [TimeSeriesBatch(b.values, rng.permutation(b.labels)) for b in stream]
        a = run_stream(pretrained, stream, quiet_config(use_contrast=True, lr=1e-3), seed=2)
        b = run_stream(pretrained, shuffled, quiet_config(use_contrast=True, lr=1e-3), seed=2)
        assert a.batch_predictions == b.batch_predictions
        assert a.macro_f1 != b.macro_f1

    def test_unlabeled_stream_has_no_score(self, pretrained, shift_data):
        _, target = shift_data
        stream = [b.without_labels() for b in make_stream(target, 32)[:3]]
        record = run_stream(pretrained, stream, quiet_config(), seed=0)
        assert record.macro_f1 is None

    def test_all_switches_off_with_frozen_bn_reproduces_source(self, pretrained, shift_data):
        _, target = shift_data
        stream = make_stream(target, 32)
        config = quiet_config(
            use_prototypes=False, use_entropy_comparison=False,
            use_augmentation=False, use_contrast=False,
            lr=0.0, bn_policy="running",
        )
        reduced = run_stream(pretrained, stream, config, seed=0)
        source = run_baseline_stream(pretrained, stream, StrategyConfig("source"))
        assert reduced.batch_predictions == source.batch_predictions
        assert reduced.macro_f1 == source.macro_f1

    def test_three_seed_records_aggregate(self, pretrained, shift_data):
        from tsadapt.metrics import aggregate_reports, macro_f1

        _, target = shift_data
        stream = make_stream(target, 32)[:6]
        reports = []
        for seed in (0, 1, 2):
            rec = run_stream(pretrained, stream, quiet_config(use_contrast=True, lr=1e-3),
                             seed=seed)
            truth = np.concatenate([b.labels for b in stream])
            reports.append(macro_f1(rec.all_predictions(), truth, 3))
        agg = aggregate_reports(reports)
        assert agg.mean == pytest.approx(np.mean(agg.per_seed))
        assert agg.std == pytest.approx(np.std(agg.per_seed))
        assert len(agg.per_seed) == 3


class TestRunRecord:
    def test_json_round_trip(self):
        rec = RunRecord(strategy="accup", seed=3, config_hash="abc",
                        batch_losses=[1.0, 2.0], batch_predictions=[[0, 1], [2, 0]],
                        macro_f1=0.5, wall_ms=12.5)
        import json

        restored = RunRecord.from_dict(json.loads(rec.to_json()))
        assert restored == rec
