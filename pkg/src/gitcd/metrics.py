"""Partition-agreement metrics and an evaluation-mode silhouette score.

These are plain numpy and share no code with the training losses, so they
can double as an independent check on them.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment


def _contingency(pred, truth) -> np.ndarray:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"partitions differ in length: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("empty partitions")
    _, p = np.unique(pred, return_inverse=True)
    _, t = np.unique(truth, return_inverse=True)
    table = np.zeros((p.max() + 1, t.max() + 1), dtype=np.int64)
    np.add.at(table, (p, t), 1)
    return table


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(pred, truth) -> float:
    """Mutual information normalized by the arithmetic mean of the two entropies.

    Two single-cluster partitions score 1; if exactly one is single-cluster the
    score is 0.
    """
    table = _contingency(pred, truth)
    n = int(table.sum())
    h_pred = _entropy(table.sum(axis=1), n)
    h_true = _entropy(table.sum(axis=0), n)
    if h_pred == 0.0 and h_true == 0.0:
        return 1.0
    if h_pred == 0.0 or h_true == 0.0:
        return 0.0
    rows = table.sum(axis=1, keepdims=True)
    cols = table.sum(axis=0, keepdims=True)
    nz = table > 0
    mi = float((table[nz] / n * np.log(n * table[nz] / (rows @ cols)[nz])).sum())
    return float(np.clip(mi / (0.5 * (h_pred + h_true)), 0.0, 1.0))


def _pairs(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1.0) / 2.0


def ari(pred, truth) -> float:
    """Adjusted Rand index from the contingency table."""
    table = _contingency(pred, truth)
    n = int(table.sum())
    if n < 2:
        raise ValueError("ARI needs at least two items")
    index = _pairs(table).sum()
    a = _pairs(table.sum(axis=1)).sum()
    b = _pairs(table.sum(axis=0)).sum()
    expected = a * b / _pairs(n)
    maximum = 0.5 * (a + b)
    if maximum == expected:
        return 1.0
    return float((index - expected) / (maximum - expected))


def clustering_accuracy(pred, truth) -> float:
    """Fraction matched under the best one-to-one cluster-to-class mapping."""
    table = _contingency(pred, truth)
    rows, cols = linear_sum_assignment(table, maximize=True)
    return float(table[rows, cols].sum() / table.sum())


def classification_accuracy(pred, truth) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("length mismatch")
    return float(np.mean(pred == truth))


def silhouette_samples(x, labels) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    clusters = np.unique(labels)
    if clusters.size < 2:
        raise ValueError("silhouette needs at least two non-empty clusters")
    dist = np.sqrt(np.maximum(((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=-1), 0.0))
    s = np.zeros(x.shape[0])
    for i in range(x.shape[0]):
        same = labels == labels[i]
        n_same = same.sum()
        if n_same == 1:
            continue
        a = dist[i, same].sum() / (n_same - 1)
        b = min(dist[i, labels == c].mean() for c in clusters if c != labels[i])
        top = max(a, b)
        s[i] = 0.0 if top == 0 else (b - a) / top
    return s


def silhouette_score(x, labels) -> float:
    """Mean silhouette over all points (singleton clusters contribute 0)."""
    return float(silhouette_samples(x, labels).mean())
