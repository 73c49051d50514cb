"""Evaluation measures: accuracy, MAE, cumulative score, CF1/OF1, mAP.

All functions are pure.  Accuracy and cumulative score report percent
in [0, 100]; the F1 family and mAP report fractions in [0, 1].
"""

from __future__ import annotations

import csv

import numpy as np


def accuracy(pred, truth) -> float:
    """Percent of exact matches between predicted and true class ids."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("accuracy of an empty prediction set is undefined")
    return float((pred == truth).mean() * 100.0)


def mean_absolute_error(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.shape != truth.shape or pred.size == 0:
        raise ValueError("prediction and truth must be non-empty and the same length")
    return float(np.abs(pred - truth).mean())


def cumulative_score(abs_errors, theta: float, strict: bool = True) -> float:
    """Percent of absolute errors below `theta` (strictly by default)."""
    errors = np.abs(np.asarray(abs_errors, dtype=np.float64))
    if errors.size == 0:
        raise ValueError("cumulative score of an empty error set is undefined")
    hits = errors < theta if strict else errors <= theta
    return float(hits.mean() * 100.0)


def cs_curve(abs_errors, thetas, strict: bool = True) -> list:
    """(theta, CS(theta)) pairs over a theta grid; non-decreasing in theta."""
    return [(float(t), cumulative_score(abs_errors, float(t), strict)) for t in thetas]


def save_cs_curve_csv(curve, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theta", "cs"])
        for theta, cs in curve:
            writer.writerow([f"{theta:.17g}", f"{cs:.17g}"])


def _confusion_counts(pred, truth):
    tp = np.logical_and(pred == 1, truth == 1).sum(axis=0).astype(np.float64)
    fp = np.logical_and(pred == 1, truth == 0).sum(axis=0).astype(np.float64)
    fn = np.logical_and(pred == 0, truth == 1).sum(axis=0).astype(np.float64)
    return tp, fp, fn


def _f1(tp, fp, fn) -> float:
    denom = 2 * tp + fp + fn
    return float(2 * tp / denom) if denom > 0 else 0.0


def per_class_f1(scores, truth, threshold: float = 0.5):
    """Per-class F1 at a fixed decision threshold; 0 for degenerate classes."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    if scores.shape != truth.shape:
        raise ValueError(f"shape mismatch {scores.shape} vs {truth.shape}")
    pred = (scores >= threshold).astype(np.int64)
    tp, fp, fn = _confusion_counts(pred, truth)
    return np.array([_f1(tp[c], fp[c], fn[c]) for c in range(scores.shape[1])])


def cf1_of1(scores, truth, threshold: float = 0.5):
    """Macro (class-averaged) and micro (pooled) F1 for multi-label predictions.

    Classes with no positive ground truth are skipped in the macro
    average; pooling for the micro score runs over every class.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    f1s = per_class_f1(scores, truth, threshold)
    present = np.asarray(truth).sum(axis=0) > 0
    cf1 = float(f1s[present].mean()) if present.any() else 0.0
    pred = (scores >= threshold).astype(np.int64)
    tp, fp, fn = _confusion_counts(pred, truth)
    of1 = _f1(tp.sum(), fp.sum(), fn.sum())
    return cf1, of1


def average_precision(scores, truth) -> float:
    """Mean of precision@rank over each positive's rank in the score ordering.

    Descending scores, ties broken by original index order; 0.0 when the
    class has no positives.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    n_pos = int((truth == 1).sum())
    if n_pos == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    ranked = truth[order]
    hits = np.cumsum(ranked == 1)
    ranks = np.arange(1, len(ranked) + 1)
    prec_at_pos = (hits / ranks)[ranked == 1]
    return float(prec_at_pos.mean())


def mean_average_precision(scores, truth) -> float:
    """Mean per-class AP over classes with at least one positive."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    if scores.shape != truth.shape:
        raise ValueError(f"shape mismatch {scores.shape} vs {truth.shape}")
    aps = [
        average_precision(scores[:, c], truth[:, c])
        for c in range(scores.shape[1])
        if (truth[:, c] == 1).any()
    ]
    return float(np.mean(aps)) if aps else 0.0
