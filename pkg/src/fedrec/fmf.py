"""Matrix-factorization comparison model (optional model switch).

Scores are plain user-vector/item-vector inner products.  The global
parameter vector stacks the item table and then the user table row-major,
so each client's gradient touches its own user row plus the items in its
pairs; training runs through the same federation loop as the main model.
"""
from __future__ import annotations

import numpy as np

from .fism import ClientDataset, LossConfig, sample_negatives
from .kernels import _log_sigmoid_np, _sigmoid_np


class FmfModel:
    """Adapter exposing the gradient/ranking hooks the federation loop uses."""

    name = "fmf"

    def __init__(self, num_users: int, num_items: int, dim: int,
                 datasets: dict[int, ClientDataset], loss_cfg: LossConfig):
        self.num_users = num_users
        self.num_items = num_items
        self.dim = dim
        self.datasets = datasets
        self.loss_cfg = loss_cfg

    @property
    def size_flat(self) -> int:
        return (self.num_items + self.num_users) * self.dim

    def _views(self, theta_flat: np.ndarray):
        cut = self.num_items * self.dim
        items = theta_flat[:cut].reshape(self.num_items, self.dim)
        users = theta_flat[cut:].reshape(self.num_users, self.dim)
        return items, users

    def gradient(self, theta_flat: np.ndarray, client_id: int,
                 rng: np.random.Generator) -> np.ndarray:
        data = self.datasets[client_id]
        if data.positives.size == 0:
            raise ValueError(f"client {client_id} has no positive items")
        negatives = sample_negatives(data, self.loss_cfg, rng)
        items, users = self._views(theta_flat)
        g_items = np.zeros_like(items)
        g_user = np.zeros(self.dim)
        u_vec = users[client_id]
        if negatives.size:
            y_pos = items[data.positives] @ u_vec
            y_neg = items[negatives] @ u_vec
            x = y_pos[:, None] - y_neg
            s = _sigmoid_np(-x)
            a = s.sum(axis=1)
            np.add.at(g_items, data.positives, -a[:, None] * u_vec[None, :])
            np.add.at(g_items, negatives.ravel(), s.ravel()[:, None] * u_vec[None, :])
            g_user = (-a[:, None] * items[data.positives]).sum(axis=0)
            g_user += (s.ravel()[:, None] * items[negatives.ravel()]).sum(axis=0)
        grad = np.zeros(self.size_flat)
        cut = self.num_items * self.dim
        grad[:cut] = g_items.ravel()
        grad[cut + client_id * self.dim : cut + (client_id + 1) * self.dim] = g_user
        lam = self.loss_cfg.lam
        if lam > 0.0:
            norm = float(np.linalg.norm(theta_flat))
            if norm > 0.0:
                grad += lam * theta_flat / norm
        return grad

    def loss(self, theta_flat: np.ndarray, client_id: int,
             negatives: np.ndarray) -> float:
        data = self.datasets[client_id]
        items, users = self._views(theta_flat)
        u_vec = users[client_id]
        total = 0.0
        if negatives.size:
            y_pos = items[data.positives] @ u_vec
            y_neg = items[negatives] @ u_vec
            x = y_pos[:, None] - y_neg
            total = float(-_log_sigmoid_np(x).sum())
        lam = self.loss_cfg.lam
        if lam > 0.0:
            total += lam * float(np.linalg.norm(theta_flat))
        return total

    def rank(self, theta_flat: np.ndarray, client_id: int) -> np.ndarray:
        data = self.datasets[client_id]
        items, users = self._views(theta_flat)
        scores = items @ users[client_id]
        mask = np.ones(self.num_items, dtype=bool)
        mask[data.positives] = False
        candidates = np.nonzero(mask)[0]
        order = np.argsort(-scores[candidates], kind="stable")
        return candidates[order]
