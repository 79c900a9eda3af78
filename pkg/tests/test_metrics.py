"""Macro-F1 tests against a confusion-matrix oracle."""

import numpy as np
import pytest

from tsadapt.errors import ContractError, LabelRangeError
from tsadapt.metrics import aggregate_reports, macro_f1


def confusion_oracle(predictions, truth, n_classes):
    """Build the confusion matrix explicitly, then read off macro-F1."""
    cm = np.zeros((n_classes, n_classes), dtype=int)
    for p, t in zip(predictions, truth):
        cm[t, p] += 1
    f1 = np.zeros(n_classes)
    for c in range(n_classes):
        tp = cm[c, c]
        fp = cm[:, c].sum() - tp
        fn = cm[c, :].sum() - tp
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1[c] = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return f1.mean()


class TestMacroF1:
    def test_perfect_predictions(self):
        truth = np.array([0, 1, 2, 1, 0])
        assert macro_f1(truth, truth, 3).macro_f1 == 1.0

    def test_hand_computed_case(self):
        # class 0: P=1, R=1/2 -> F1=2/3; class 1: P=2/3, R=1 -> F1=4/5
        report = macro_f1(np.array([0, 1, 1, 1]), np.array([0, 0, 1, 1]), 2)
        assert report.f1[0] == pytest.approx(2 / 3)
        assert report.f1[1] == pytest.approx(4 / 5)
        assert report.macro_f1 == pytest.approx(11 / 15)

    def test_absent_class_scores_zero_and_lowers_macro(self):
        report = macro_f1(np.array([0, 1]), np.array([0, 1]), 3)
        assert report.f1[2] == 0.0
        assert report.macro_f1 == pytest.approx(2 / 3)

    def test_matches_confusion_oracle_on_random_cases(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            c = int(rng.integers(2, 7))
            n = int(rng.integers(1, 60))
            preds = rng.integers(0, c, size=n)
            truth = rng.integers(0, c, size=n)
            assert macro_f1(preds, truth, c).macro_f1 == pytest.approx(
                confusion_oracle(preds, truth, c), abs=1e-15
            )

    def test_values_in_unit_interval(self):
        rng = np.random.default_rng(1)
        preds = rng.integers(0, 4, size=100)
        truth = rng.integers(0, 4, size=100)
        report = macro_f1(preds, truth, 4)
        for arr in (report.precision, report.recall, report.f1):
            assert np.all((arr >= 0) & (arr <= 1))
        assert 0 <= report.macro_f1 <= 1

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            macro_f1(np.array([0, 1]), np.array([0]), 2)

    def test_label_out_of_range(self):
        with pytest.raises(LabelRangeError):
            macro_f1(np.array([0, 5]), np.array([0, 1]), 3)


class TestAggregate:
    def test_mean_and_std_over_seeds(self):
        reports = [macro_f1(np.array([0, 1]), np.array([0, 1]), 2),
                   macro_f1(np.array([0, 0]), np.array([0, 1]), 2)]
        agg = aggregate_reports(reports)
        assert agg.per_seed == [reports[0].macro_f1, reports[1].macro_f1]
        assert agg.mean == pytest.approx(np.mean(agg.per_seed))
        assert agg.std == pytest.approx(np.std(agg.per_seed))

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            aggregate_reports([])
