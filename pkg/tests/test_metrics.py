"""Hand-computed metric oracles and consistency properties."""

import numpy as np
import pytest

from emomatch.training import confusion_matrix, evaluate_predictions, metrics_from_confusion


def test_hand_computed_two_class_case():
    report = metrics_from_confusion(np.array([[2, 0], [1, 1]]))
    assert report.ua == pytest.approx(0.75, abs=1e-12)
    assert report.wap == pytest.approx(0.8333, abs=1e-4)
    assert report.weighted_f1 == pytest.approx(0.7333, abs=1e-4)
    assert report.per_class_precision == pytest.approx([2 / 3, 1.0])
    assert report.per_class_recall == pytest.approx([1.0, 0.5])


def test_perfect_predictions_all_ones():
    y = np.array([0, 1, 2, 3] * 5)
    report = evaluate_predictions(y, y, 4)
    assert report.wap == report.ua == report.weighted_f1 == 1.0
    np.testing.assert_array_equal(report.confusion, np.eye(4, dtype=int) * 5)


def test_all_one_class_predictor_on_balanced_truth():
    y_true = np.array([0, 1, 2, 3] * 10)
    y_pred = np.zeros(40, dtype=int)
    report = evaluate_predictions(y_true, y_pred, 4)
    assert report.ua == pytest.approx(0.25)


def test_absent_truth_class_excluded_with_warning(caplog):
    import logging

    cm = np.array([[3, 0, 0], [1, 2, 0], [0, 0, 0]])
    with caplog.at_level(logging.WARNING):
        report = metrics_from_confusion(cm)
    assert report.excluded_classes == [2]
    assert "excluded" in caplog.text
    assert report.ua == pytest.approx((1.0 + 2 / 3) / 2)


@pytest.mark.parametrize("seed", range(5))
def test_metrics_consistent_with_confusion_recomputation(seed):
    rng = np.random.default_rng(seed)
    k = 4
    y_true = rng.integers(0, k, size=200)
    y_pred = rng.integers(0, k, size=200)
    report = evaluate_predictions(y_true, y_pred, k)
    cm = report.confusion
    assert cm.sum() == 200
    np.testing.assert_array_equal(cm.sum(axis=1), np.bincount(y_true, minlength=k))

    # independent recomputation from the emitted confusion matrix
    support = cm.sum(axis=1)
    n = support.sum()
    precision = [cm[i, i] / cm[:, i].sum() if cm[:, i].sum() else 0.0 for i in range(k)]
    recall = [cm[i, i] / support[i] if support[i] else 0.0 for i in range(k)]
    f1 = [
        2 * p * r / (p + r) if (p + r) > 0 else 0.0
        for p, r in zip(precision, recall)
    ]
    wap = sum(support[i] / n * precision[i] for i in range(k))
    ua = np.mean([recall[i] for i in range(k) if support[i] > 0])
    wf1 = sum(support[i] / n * f1[i] for i in range(k))
    assert report.wap == pytest.approx(wap, abs=1e-12)
    assert report.ua == pytest.approx(ua, abs=1e-12)
    assert report.weighted_f1 == pytest.approx(wf1, abs=1e-12)


def test_length_mismatch_rejected():
    with pytest.raises(ValueError, match="mismatch"):
        confusion_matrix([0, 1], [0], 2)
