"""Factored item-similarity recommender: scores, pairwise ranking loss and
its analytic gradient for a single client's data.

A client is represented by the normalized sum of the history embeddings of
its positive items; an item's score is the inner product of that vector
with the item's prediction embedding.  Adding an interaction changes the
positive set only -- no retraining, scores are a pure function of
(params, positives, item).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .params import ModelParams, flatten

DEFAULT_NEGATIVES_PER_POSITIVE = 4


@dataclass
class LossConfig:
    """Pairwise ranking-loss hyperparameters."""

    gamma: float = 1.0       # history normalization exponent, in [0, 1]
    lam: float = 1e-4        # L2 coefficient on the unsquared parameter norm
    negatives_per_positive: int = DEFAULT_NEGATIVES_PER_POSITIVE

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.lam < 0.0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be >= 1")


@dataclass
class ClientDataset:
    """One client's positive items and the pool its negatives come from."""

    client_id: int
    positives: np.ndarray            # sorted item ids
    candidate_negatives: np.ndarray  # sorted item ids, disjoint from positives
    train_count: int = field(default=0)

    def __post_init__(self):
        self.positives = np.asarray(sorted(set(np.asarray(self.positives).tolist())),
                                    dtype=np.int64)
        self.candidate_negatives = np.asarray(
            sorted(set(np.asarray(self.candidate_negatives).tolist())), dtype=np.int64
        )
        if np.intersect1d(self.positives, self.candidate_negatives).size:
            raise ValueError("positives and candidate_negatives overlap")
        if (self.positives < 0).any() or (self.candidate_negatives < 0).any():
            raise ValueError("item ids must be non-negative")
        if self.train_count == 0:
            self.train_count = int(self.positives.size)


def from_universe(client_id: int, positives, num_items: int) -> ClientDataset:
    """Build a dataset whose negative pool is everything not positive."""
    positives = np.asarray(sorted(set(np.asarray(positives).tolist())), dtype=np.int64)
    mask = np.ones(num_items, dtype=bool)
    mask[positives] = False
    return ClientDataset(client_id, positives, np.nonzero(mask)[0].astype(np.int64))


def predict(params: ModelParams, data: ClientDataset, item: int,
            cfg: LossConfig) -> float:
    """Score of ``item`` for this client (0 on an empty history)."""
    if not 0 <= item < params.num_items:
        raise IndexError(f"item id {item} out of range [0, {params.num_items})")
    history = data.positives[data.positives != item]
    if history.size == 0:
        return 0.0
    z = params.q[history].sum(axis=0) / float(history.size) ** cfg.gamma
    return float(params.p[item] @ z)


def sample_negatives(data: ClientDataset, cfg: LossConfig,
                     rng: np.random.Generator) -> np.ndarray:
    """Fresh negatives for each positive: (n_pos, n_per_pos) item ids drawn
    uniformly without replacement from the candidate pool."""
    n_pos = data.positives.size
    pool = data.candidate_negatives
    n_per = min(cfg.negatives_per_positive, pool.size)
    if n_pos == 0 or n_per == 0:
        return np.zeros((n_pos, 0), dtype=np.int64)
    out = np.empty((n_pos, n_per), dtype=np.int64)
    for a in range(n_pos):
        out[a] = rng.choice(pool, size=n_per, replace=False)
    return out


def _check_trainable(data: ClientDataset, negatives: np.ndarray):
    if data.positives.size == 0:
        raise ValueError(f"client {data.client_id} has no positive items")
    if negatives.shape[0] != data.positives.size:
        raise ValueError("negative map must have one row per positive")


def client_loss(params: ModelParams, data: ClientDataset, negatives: np.ndarray,
                cfg: LossConfig) -> float:
    """This client's terms of the ranking loss plus lam * ||theta||."""
    _check_trainable(data, negatives)
    loss = kernels.pair_loss(params.p, params.q, data.positives,
                             np.ascontiguousarray(negatives), cfg.gamma)
    if cfg.lam > 0.0:
        loss += cfg.lam * float(np.linalg.norm(flatten(params)))
    return float(loss)


def client_gradient(params: ModelParams, data: ClientDataset,
                    negatives: np.ndarray, cfg: LossConfig) -> np.ndarray:
    """Exact gradient of :func:`client_loss` w.r.t. the flattened parameters."""
    _check_trainable(data, negatives)
    grad_p = np.zeros_like(params.p)
    grad_q = np.zeros_like(params.q)
    kernels.pair_loss_grad(params.p, params.q, data.positives,
                           np.ascontiguousarray(negatives), cfg.gamma,
                           grad_p, grad_q)
    grad = np.concatenate([grad_p.ravel(), grad_q.ravel()])
    if cfg.lam > 0.0:
        theta = flatten(params)
        norm = float(np.linalg.norm(theta))
        if norm > 0.0:
            grad += cfg.lam * theta / norm
        # subgradient 0 at the origin
    return grad


class FismModel:
    """Adapter exposing the gradient/ranking hooks the federation loop uses."""

    name = "fism"

    def __init__(self, num_items: int, dim: int,
                 datasets: dict[int, ClientDataset], loss_cfg: LossConfig):
        self.num_items = num_items
        self.dim = dim
        self.datasets = datasets
        self.loss_cfg = loss_cfg

    @property
    def size_flat(self) -> int:
        return 2 * self.num_items * self.dim

    def _params(self, theta_flat: np.ndarray) -> ModelParams:
        from .params import unflatten

        return unflatten(theta_flat, self.num_items, self.dim)

    def gradient(self, theta_flat: np.ndarray, client_id: int,
                 rng: np.random.Generator) -> np.ndarray:
        data = self.datasets[client_id]
        negatives = sample_negatives(data, self.loss_cfg, rng)
        return client_gradient(self._params(theta_flat), data, negatives,
                               self.loss_cfg)

    def rank(self, theta_flat: np.ndarray, client_id: int) -> np.ndarray:
        from .metrics import rank_items

        return rank_items(self._params(theta_flat), self.datasets[client_id],
                          self.loss_cfg)
