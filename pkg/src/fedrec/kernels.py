"""Hot numeric kernels: pairwise ranking loss/gradient and distance matrices.

Each kernel has a pure-numpy implementation (``*_np``) and, when numba is
available, an ``@njit`` twin.  The public names bind to whichever backend
was selected (see :mod:`fedrec.backend`).  Both paths implement the same
arithmetic; results agree to ~1e-12 relative (summation order differs).

Score model for one client: an item j's score is p[j] . z where z is the
normalized sum of the q-rows of the client's positives (self-excluded when
j is itself a positive, zero score on an empty history).  The loss sums
-log sigmoid(score(pos) - score(neg)) over each positive and its sampled
negatives.
"""
from __future__ import annotations

import math

import numpy as np

from .backend import NUMBA_AVAILABLE, USE_NUMBA


def _log_sigmoid_np(x: np.ndarray) -> np.ndarray:
    # log(sigmoid(x)) without overflow on either tail
    return np.where(x >= 0, -np.log1p(np.exp(-np.abs(x))), x - np.log1p(np.exp(x)))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _history_coeffs(n_pos: int, gamma: float) -> tuple[float, float]:
    """Normalizers |S+\\{j}|^-gamma for j positive (``c_pos``) and j not
    positive (``c_neg``).  Empty history contributes 0, never 0**-gamma."""
    c_neg = float(n_pos) ** (-gamma)
    c_pos = float(n_pos - 1) ** (-gamma) if n_pos >= 2 else 0.0
    return c_pos, c_neg


def pair_loss_np(p, q, positives, negatives, gamma):
    """Sum of -log sigmoid(y_pos - y_neg) over all (positive, negative) pairs.

    ``negatives`` is an int array (n_pos, n_neg_per_pos) aligned with
    ``positives``; may have zero columns (no pairs -> loss 0).
    """
    n_pos = positives.shape[0]
    if n_pos == 0 or negatives.size == 0:
        return 0.0
    c_pos, c_neg = _history_coeffs(n_pos, gamma)
    sum_q = q[positives].sum(axis=0)
    z_pos = c_pos * (sum_q - q[positives])          # (n_pos, d)
    z_all = c_neg * sum_q                           # (d,)
    y_pos = np.einsum("ad,ad->a", p[positives], z_pos)
    y_neg = p[negatives] @ z_all                    # (n_pos, n_neg)
    x = y_pos[:, None] - y_neg
    return float(-_log_sigmoid_np(x).sum())


def pair_loss_grad_np(p, q, positives, negatives, gamma, grad_p, grad_q):
    """Accumulate the pair-loss gradient into grad_p/grad_q; returns the loss."""
    n_pos = positives.shape[0]
    if n_pos == 0 or negatives.size == 0:
        return 0.0
    c_pos, c_neg = _history_coeffs(n_pos, gamma)
    sum_q = q[positives].sum(axis=0)
    z_pos = c_pos * (sum_q - q[positives])
    z_all = c_neg * sum_q
    y_pos = np.einsum("ad,ad->a", p[positives], z_pos)
    y_neg = p[negatives] @ z_all
    x = y_pos[:, None] - y_neg
    loss = float(-_log_sigmoid_np(x).sum())

    s = _sigmoid_np(-x)                             # 1 - sigmoid(x), (n_pos, n_neg)
    a = s.sum(axis=1)                               # per-positive coefficient sum

    # d/dp[j] = -a_j * z_j ; d/dp[k] = +s_jk * z_all
    np.add.at(grad_p, positives, -a[:, None] * z_pos)
    np.add.at(grad_p, negatives.ravel(), s.ravel()[:, None] * z_all[None, :])

    # q-rows: every positive m collects qc = sum over pairs of
    # (-s*c_pos*p[j] + s*c_neg*p[k]); row j gets back its own
    # +a_j*c_pos*p[j] because j is excluded from its own history.
    qc = -c_pos * (a[:, None] * p[positives]).sum(axis=0)
    qc += c_neg * (s.ravel()[:, None] * p[negatives.ravel()]).sum(axis=0)
    np.add.at(grad_q, positives, qc[None, :] + c_pos * a[:, None] * p[positives])
    return loss


def pairwise_sq_dists_np(vectors):
    """Matrix of squared Euclidean distances between rows of ``vectors``."""
    n = vectors.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        diff = vectors[i + 1 :] - vectors[i]
        d = np.einsum("nd,nd->n", diff, diff)
        out[i, i + 1 :] = d
        out[i + 1 :, i] = d
    return out


if NUMBA_AVAILABLE:
    from numba import njit

    @njit(cache=True)
    def _log_sigmoid(x):
        if x >= 0.0:
            return -math.log1p(math.exp(-x))
        return x - math.log1p(math.exp(x))

    @njit(cache=True)
    def _sigmoid(x):
        if x >= 0.0:
            return 1.0 / (1.0 + math.exp(-x))
        ex = math.exp(x)
        return ex / (1.0 + ex)

    @njit(cache=True)
    def pair_loss_nb(p, q, positives, negatives, gamma):
        n_pos = positives.shape[0]
        if n_pos == 0 or negatives.size == 0:
            return 0.0
        d = p.shape[1]
        c_neg = float(n_pos) ** (-gamma)
        c_pos = float(n_pos - 1) ** (-gamma) if n_pos >= 2 else 0.0
        sum_q = np.zeros(d)
        for a in range(n_pos):
            j = positives[a]
            for t in range(d):
                sum_q[t] += q[j, t]
        loss = 0.0
        n_neg = negatives.shape[1]
        for a in range(n_pos):
            j = positives[a]
            y_j = 0.0
            for t in range(d):
                y_j += p[j, t] * c_pos * (sum_q[t] - q[j, t])
            for b in range(n_neg):
                k = negatives[a, b]
                y_k = 0.0
                for t in range(d):
                    y_k += p[k, t] * c_neg * sum_q[t]
                loss += -_log_sigmoid(y_j - y_k)
        return loss

    @njit(cache=True)
    def pair_loss_grad_nb(p, q, positives, negatives, gamma, grad_p, grad_q):
        n_pos = positives.shape[0]
        if n_pos == 0 or negatives.size == 0:
            return 0.0
        d = p.shape[1]
        c_neg = float(n_pos) ** (-gamma)
        c_pos = float(n_pos - 1) ** (-gamma) if n_pos >= 2 else 0.0
        sum_q = np.zeros(d)
        for a in range(n_pos):
            j = positives[a]
            for t in range(d):
                sum_q[t] += q[j, t]
        loss = 0.0
        n_neg = negatives.shape[1]
        qc = np.zeros(d)
        a_coef = np.zeros(n_pos)
        for a in range(n_pos):
            j = positives[a]
            y_j = 0.0
            for t in range(d):
                y_j += p[j, t] * c_pos * (sum_q[t] - q[j, t])
            a_j = 0.0
            for b in range(n_neg):
                k = negatives[a, b]
                y_k = 0.0
                for t in range(d):
                    y_k += p[k, t] * c_neg * sum_q[t]
                x = y_j - y_k
                loss += -_log_sigmoid(x)
                s = _sigmoid(-x)
                a_j += s
                for t in range(d):
                    grad_p[k, t] += s * c_neg * sum_q[t]
                    qc[t] += s * c_neg * p[k, t]
            a_coef[a] = a_j
            for t in range(d):
                grad_p[j, t] += -a_j * c_pos * (sum_q[t] - q[j, t])
                qc[t] += -a_j * c_pos * p[j, t]
        for a in range(n_pos):
            j = positives[a]
            for t in range(d):
                grad_q[j, t] += qc[t] + a_coef[a] * c_pos * p[j, t]
        return loss

    @njit(cache=True)
    def pairwise_sq_dists_nb(vectors):
        n, d = vectors.shape
        out = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                acc = 0.0
                for t in range(d):
                    diff = vectors[i, t] - vectors[j, t]
                    acc += diff * diff
                out[i, j] = acc
                out[j, i] = acc
        return out


if USE_NUMBA:
    pair_loss = pair_loss_nb
    pair_loss_grad = pair_loss_grad_nb
    pairwise_sq_dists = pairwise_sq_dists_nb
else:
    pair_loss = pair_loss_np
    pair_loss_grad = pair_loss_grad_np
    pairwise_sq_dists = pairwise_sq_dists_np
