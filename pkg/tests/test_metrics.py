"""Evaluation measures against brute-force definitional oracles."""

import numpy as np
import pytest

from sagenet import metrics as M
from oracles import accuracy_oracle, ap_oracle, cs_oracle, f1_oracle, map_oracle


# ---------------------------------------------------------------------------
# accuracy


def test_accuracy_perfect_and_quarter():
    assert M.accuracy([1, 2, 3], [1, 2, 3]) == 100.0
    assert M.accuracy([1, 0, 0, 0], [1, 1, 1, 1]) == 25.0


def test_accuracy_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(1, 201))
        pred = rng.integers(0, 5, size=n)
        truth = rng.integers(0, 5, size=n)
        assert M.accuracy(pred, truth) == pytest.approx(accuracy_oracle(pred, truth))


# ---------------------------------------------------------------------------
# cumulative score


def test_cs_examples():
    errors = [1, 2, 30, 40, 50, 60, 70, 80, 90, 100]
    assert M.cumulative_score(errors, 5) == 20.0
    assert M.cumulative_score(errors, np.inf) == 100.0


def test_cs_strict_inequality():
    assert M.cumulative_score([5.0], 5.0) == 0.0
    assert M.cumulative_score([4.999], 5.0) == 100.0
    assert M.cumulative_score([5.0], 5.0, strict=False) == 100.0


def test_cs_curve_monotone_and_matches_oracle():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(1, 201))
        errors = rng.uniform(0, 60, size=n)
        thetas = np.arange(0, 70, 2.5)
        curve = M.cs_curve(errors, thetas)
        values = [c for _, c in curve]
        assert all(a <= b for a, b in zip(values, values[1:]))
        for theta, cs in curve:
            assert cs == pytest.approx(cs_oracle(errors, theta))
    # permutation invariance
    errors = rng.uniform(0, 60, size=50)
    shuffled = rng.permutation(errors)
    assert M.cumulative_score(errors, 10) == M.cumulative_score(shuffled, 10)


# ---------------------------------------------------------------------------
# multi-label F1


def test_f1_perfect():
    truth = np.array([[1, 0], [0, 1], [1, 1]])
    cf1, of1 = M.cf1_of1(truth.astype(float), truth)
    assert cf1 == 1.0 and of1 == 1.0


def test_f1_all_negative_predictions():
    truth = np.array([[1, 0], [1, 0]])
    scores = np.zeros((2, 2))
    cf1, of1 = M.cf1_of1(scores, truth)
    assert of1 == 0.0 and cf1 == 0.0


def test_f1_matches_oracle():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n, c = int(rng.integers(1, 21)), int(rng.integers(1, 9))
        scores = rng.uniform(size=(n, c))
        truth = rng.integers(0, 2, size=(n, c))
        cf1, of1 = M.cf1_of1(scores, truth)
        ocf1, oof1, of1s = f1_oracle(scores.tolist(), truth.tolist())
        assert cf1 == pytest.approx(ocf1)
        assert of1 == pytest.approx(oof1)
        np.testing.assert_allclose(M.per_class_f1(scores, truth), of1s)


def test_f1_threshold_fixing_transform_invariance():
    rng = np.random.default_rng(3)
    scores = rng.uniform(size=(40, 5))
    truth = rng.integers(0, 2, size=(40, 5))
    # strictly monotone transform that keeps the 0.5 decision point fixed
    transformed = 0.5 + 0.5 * np.tanh(3.0 * (scores - 0.5))
    assert M.cf1_of1(scores, truth) == M.cf1_of1(transformed, truth)


# ---------------------------------------------------------------------------
# mean average precision


def test_ap_positives_on_top():
    scores = np.array([[0.9], [0.8], [0.1]])
    truth = np.array([[1], [1], [0]])
    assert M.mean_average_precision(scores, truth) == 1.0


def test_ap_hand_computed():
    scores = np.array([[0.9], [0.8], [0.7]])
    truth = np.array([[0], [1], [1]])
    assert M.mean_average_precision(scores, truth) == pytest.approx((1 / 2 + 2 / 3) / 2)


def test_map_matches_oracle():
    rng = np.random.default_rng(4)
    for _ in range(100):
        n, c = int(rng.integers(1, 31)), int(rng.integers(1, 6))
        scores = np.round(rng.uniform(size=(n, c)), 2)  # rounded scores force ties
        truth = rng.integers(0, 2, size=(n, c))
        assert M.mean_average_precision(scores, truth) == pytest.approx(
            map_oracle(scores, truth)
        )


def test_map_monotone_transform_invariance():
    rng = np.random.default_rng(5)
    scores = rng.uniform(size=(30, 4))
    truth = rng.integers(0, 2, size=(30, 4))
    base = M.mean_average_precision(scores, truth)
    assert M.mean_average_precision(np.exp(scores), truth) == pytest.approx(base)
    assert M.mean_average_precision(3.0 * scores + 1.0, truth) == pytest.approx(base)


def test_map_skips_classes_without_positives():
    scores = np.array([[0.9, 0.4], [0.1, 0.6]])
    truth = np.array([[1, 0], [0, 0]])
    assert M.mean_average_precision(scores, truth) == 1.0  # only class 0 averaged


# ---------------------------------------------------------------------------
# CS curve CSV


def test_cs_curve_csv(tmp_path):
    curve = M.cs_curve([1.0, 6.0, 11.0], [0, 5, 10, 15])
    path = tmp_path / "cs.csv"
    M.save_cs_curve_csv(curve, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "theta,cs"
    assert len(lines) == 5
