"""Evaluation metrics for factor, graph, detection and link recovery."""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata


def _normalize_columns(X):
    X = np.asarray(X, dtype=float)
    norms = np.linalg.norm(X, axis=0)
    zero = norms == 0
    safe = np.where(zero, 1.0, norms)
    return np.where(zero, 0.0, X / safe), np.flatnonzero(zero)


@dataclass
class PermMSE:
    value: float
    assignment: np.ndarray
    zero_columns_hat: np.ndarray
    zero_columns_true: np.ndarray


def perm_mse(U_hat, U_true, details=False):
    """Permutation-invariant MSE between column-normalized factor matrices.

    Computes ``min_pi (1/F) sum_f ||u_true[:, pi(f)] / ||.|| - u_hat[:, f] / ||.||||^2``.
    The objective is a sum over matched column pairs, so the minimizing
    permutation is the solution of a linear assignment problem.

    Parameters
    ----------
    U_hat, U_true : ndarray, shape (n, F)
    details : bool
        If True, return a :class:`PermMSE` with the matching and the indices
        of all-zero columns (which are compared as zero vectors).

    Returns
    -------
    float or PermMSE
    """
    U_hat = np.asarray(U_hat, dtype=float)
    U_true = np.asarray(U_true, dtype=float)
    if U_hat.shape != U_true.shape:
        raise ValueError(f"shape mismatch: {U_hat.shape} vs {U_true.shape}")
    A, zh = _normalize_columns(U_hat)
    B, zt = _normalize_columns(U_true)
    # cost[g, f] = ||b_g - a_f||^2
    cost = (B * B).sum(0)[:, None] + (A * A).sum(0)[None, :] - 2.0 * B.T @ A
    cost = np.maximum(cost, 0.0)
    rows, cols = linear_sum_assignment(cost)
    F = U_hat.shape[1]
    value = float(cost[rows, cols].sum() / F)
    if not details:
        return value
    assignment = np.empty(F, dtype=int)
    assignment[cols] = rows
    return PermMSE(value, assignment, zh, zt)


def alpha_mse(a_hat, a_true):
    """``(1/R) ||a_hat - a_true||^2``."""
    a_hat = np.ravel(np.asarray(a_hat, dtype=float))
    a_true = np.ravel(np.asarray(a_true, dtype=float))
    if a_hat.shape != a_true.shape:
        raise ValueError("coefficient vectors differ in length")
    return float(np.mean((a_hat - a_true) ** 2))


def graph_mse(G_hat, G_true):
    """Entrywise MSE after dividing each matrix by its Frobenius norm.

    A zero matrix is compared as zeros, with a warning.
    """
    G_hat = np.asarray(G_hat, dtype=float)
    G_true = np.asarray(G_true, dtype=float)
    if G_hat.shape != G_true.shape:
        raise ValueError(f"shape mismatch: {G_hat.shape} vs {G_true.shape}")
    out = []
    for G in (G_hat, G_true):
        n = np.linalg.norm(G)
        if n == 0:
            warnings.warn("zero graph matrix in graph_mse", RuntimeWarning, stacklevel=2)
            out.append(np.zeros_like(G))
        else:
            out.append(G / n)
    return float(np.mean((out[0] - out[1]) ** 2))


def graph_errors(U_hat, V_hat, U_true, V_true):
    """Normalized MSE of the similarity graphs UU^T, VV^T and the connectivity graph UV^T."""
    return {
        "UU": graph_mse(U_hat @ U_hat.T, U_true @ U_true.T),
        "VV": graph_mse(V_hat @ V_hat.T, V_true @ V_true.T),
        "UV": graph_mse(U_hat @ V_hat.T, U_true @ V_true.T),
    }


def rrmse(Y_hat, Y_obs, observed=None):
    """``||Y_hat - Y_obs||_F / ||Y_obs||_F`` over observed entries."""
    Y_hat = np.asarray(Y_hat, dtype=float)
    Y_obs = np.asarray(Y_obs, dtype=float)
    if Y_hat.shape != Y_obs.shape:
        raise ValueError(f"shape mismatch: {Y_hat.shape} vs {Y_obs.shape}")
    if observed is None:
        observed = np.ones(Y_obs.shape, dtype=bool)
    observed = np.asarray(observed, dtype=bool)
    denom = np.linalg.norm(Y_obs[observed])
    if denom == 0:
        raise ValueError("observed counts are all zero")
    return float(np.linalg.norm(Y_hat[observed] - Y_obs[observed]) / denom)


def _check_labels(labels, need_negative):
    labels = np.asarray(labels).astype(bool).ravel()
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("labels contain no positives")
    if need_negative and n_pos == labels.size:
        raise ValueError("labels contain no negatives")
    return labels, n_pos


def auroc(scores, labels):
    """Area under the ROC curve as the Mann-Whitney statistic with midranks."""
    scores = np.asarray(scores, dtype=float).ravel()
    labels, n_pos = _check_labels(labels, need_negative=True)
    n_neg = labels.size - n_pos
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(scores, labels):
    """Average precision: ``sum_k (R_k - R_{k-1}) P_k`` over distinct score thresholds."""
    scores = np.asarray(scores, dtype=float).ravel()
    labels, n_pos = _check_labels(labels, need_negative=False)
    order = np.argsort(-scores, kind="mergesort")
    s, lab = scores[order], labels[order]
    tp = np.cumsum(lab)
    # last position of every block of tied scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = tp[ends].astype(float)
    precision = tp / (ends + 1.0)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def link_labels(y_sum, observed=None):
    """Binary link labels ``y_sum > 0`` restricted to observed pairs, flattened."""
    y_sum = np.asarray(y_sum)
    if observed is None:
        observed = np.ones(y_sum.shape, dtype=bool)
    return (y_sum > 0)[observed]
