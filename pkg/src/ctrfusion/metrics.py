"""Ranking and calibration metrics: exact AUC and mean logloss.

AUC is the Mann-Whitney statistic — the fraction of (positive,
negative) pairs the scorer orders correctly, ties credited 0.5 —
computed in O(n log n) via rank sums with average ranks on ties.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .ops import SIGMOID_EPS


def _validate_pair(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValidationError("metrics: scores and labels must be equal-length vectors")
    if not np.isin(labels, (0, 1)).all():
        raise ValidationError("metrics: labels must be 0 or 1")
    return scores, labels.astype(np.int64)


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks of x, with tied values sharing their average rank."""
    uniq, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    starts = ends - counts
    avg = (starts + ends + 1) / 2.0  # mean of ranks start+1 .. end
    return avg[inverse]


def auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative (ties = 0.5)."""
    scores, labels = _validate_pair(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("auc: undefined without both label classes")
    ranks = average_ranks(scores)
    rank_sum = ranks[labels == 1].sum()
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def logloss(scores, labels) -> float:
    """Mean binary cross-entropy; probabilities clamped away from {0, 1}."""
    scores, labels = _validate_pair(scores, labels)
    p = np.clip(scores, SIGMOID_EPS, 1.0 - SIGMOID_EPS)
    return float(-np.mean(labels * np.log(p) + (1 - labels) * np.log(1.0 - p)))
