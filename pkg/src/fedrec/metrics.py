"""Top-K ranking metrics over the benign clients' held-out items."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fism import ClientDataset, LossConfig
from .params import ModelParams


@dataclass
class MetricReport:
    precision_at: dict[int, float]
    recall_at: dict[int, float]
    users_evaluated: int


def rank_items(params: ModelParams, data: ClientDataset,
               cfg: LossConfig) -> np.ndarray:
    """All items outside the train positives, best score first, ties by id."""
    positives = data.positives
    scores = score_candidates(params, positives, cfg.gamma)
    mask = np.ones(params.num_items, dtype=bool)
    mask[positives] = False
    candidates = np.nonzero(mask)[0]
    order = np.argsort(-scores[candidates], kind="stable")
    return candidates[order]


def score_candidates(params: ModelParams, positives: np.ndarray,
                     gamma: float) -> np.ndarray:
    """Scores of every item against the history built from ``positives``.

    Only valid for items outside ``positives`` (no self-exclusion applied).
    """
    if positives.size == 0:
        return np.zeros(params.num_items)
    z = params.q[positives].sum(axis=0) / float(positives.size) ** gamma
    return params.p @ z


def precision_recall(rankings: dict[int, np.ndarray],
                     test_sets: dict[int, np.ndarray],
                     k_max: int = 5) -> MetricReport:
    """Unweighted per-user mean of hits/K and hits/|test| for K = 1..k_max."""
    users = [u for u in sorted(rankings) if test_sets.get(u, np.zeros(0)).size > 0]
    if not users:
        raise ValueError("no users with non-empty test sets to evaluate")
    precision = {k: 0.0 for k in range(1, k_max + 1)}
    recall = {k: 0.0 for k in range(1, k_max + 1)}
    for u in users:
        test = set(test_sets[u].tolist())
        top = rankings[u][:k_max].tolist()
        hits = 0
        for k in range(1, k_max + 1):
            if k <= len(top) and top[k - 1] in test:
                hits += 1
            precision[k] += hits / k
            recall[k] += hits / len(test)
    n = len(users)
    return MetricReport(
        precision_at={k: precision[k] / n for k in precision},
        recall_at={k: recall[k] / n for k in recall},
        users_evaluated=n,
    )
