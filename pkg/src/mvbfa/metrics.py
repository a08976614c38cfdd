"""Agreement metrics between partitions and parameter-recovery helpers."""

from __future__ import annotations

from math import comb

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InputError

__all__ = [
    "confusion",
    "ari",
    "mcr",
    "mat_one_norm",
    "match_components",
]


def _check_pair(truth, pred) -> tuple[np.ndarray, np.ndarray]:
    truth = np.asarray(truth).ravel()
    pred = np.asarray(pred).ravel()
    if truth.size != pred.size:
        raise InputError(f"label vectors differ in length: {truth.size} vs {pred.size}")
    if truth.size < 2:
        raise InputError("need at least two observations to compare partitions")
    return truth, pred


def confusion(truth, pred) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Contingency table of two labelings.

    Returns (table, truth_values, pred_values) with rows indexed by the sorted
    distinct truth labels and columns by the sorted distinct predicted labels.
    """
    truth, pred = _check_pair(truth, pred)
    t_vals, t_idx = np.unique(truth, return_inverse=True)
    p_vals, p_idx = np.unique(pred, return_inverse=True)
    table = np.zeros((t_vals.size, p_vals.size), dtype=np.int64)
    np.add.at(table, (t_idx, p_idx), 1)
    return table, t_vals, p_vals


def ari(truth, pred) -> float:
    """Adjusted Rand index, computed in exact integer arithmetic.

    1 for identical partitions (up to relabeling), 0 expected under chance;
    negative for agreement below chance.
    """
    table, _, _ = confusion(truth, pred)
    N = int(table.sum())
    pair_sum = sum(comb(int(v), 2) for v in table.ravel())
    row_sum = sum(comb(int(v), 2) for v in table.sum(axis=1))
    col_sum = sum(comb(int(v), 2) for v in table.sum(axis=0))
    total = comb(N, 2)
    # ARI = (pair - row*col/total) / ((row+col)/2 - row*col/total), cleared of
    # denominators so the arithmetic stays in integers until the final divide
    num = 2 * (total * pair_sum - row_sum * col_sum)
    den = total * (row_sum + col_sum) - 2 * row_sum * col_sum
    if den == 0:
        return 1.0 if num == 0 else 0.0
    return num / den


def mcr(truth, pred) -> float:
    """Misclassification rate under the best one-to-one matching of predicted
    labels to truth labels (optimal assignment on the contingency table)."""
    table, _, _ = confusion(truth, pred)
    rows, cols = linear_sum_assignment(table, maximize=True)
    matched = int(table[rows, cols].sum())
    return 1.0 - matched / table.sum()


def mat_one_norm(w) -> float:
    """Induced matrix 1-norm: the maximum absolute column sum."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise InputError(f"expected a matrix, got shape {w.shape}")
    if w.size == 0:
        return 0.0
    return float(np.abs(w).sum(axis=0).max())


def match_components(true_means, est_means) -> np.ndarray:
    """Permutation matching estimated components to true ones by location.

    Entry g of the result is the index of the estimated component assigned to
    true component g, minimizing total 1-norm distance between locations.
    """
    true_means = np.asarray(true_means, dtype=np.float64)
    est_means = np.asarray(est_means, dtype=np.float64)
    if true_means.shape != est_means.shape or true_means.ndim != 3:
        raise InputError("need matching (G, n, p) stacks of location matrices")
    G = true_means.shape[0]
    cost = np.empty((G, G))
    for i in range(G):
        for j in range(G):
            cost[i, j] = mat_one_norm(true_means[i] - est_means[j])
    rows, cols = linear_sum_assignment(cost)
    out = np.empty(G, dtype=np.int64)
    out[rows] = cols
    return out
