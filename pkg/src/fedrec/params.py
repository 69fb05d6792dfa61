"""Parameter vector space: dual embedding tables and their flat-vector form.

Every item carries two embedding rows: a prediction row (``p``) and a
history row (``q``).  The full trainable state is the pair of tables; all
server-side machinery (distances, filtering, aggregation, CSV dumps) works
on the canonical flattening of that pair.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Canonical flat layout: all of p row-major, then all of q row-major.
# Fixed so distances, filter scores and CSV dumps are reproducible.


@dataclass
class ModelParams:
    """Dual embedding tables, ``p`` and ``q``, each num_items x dim."""

    num_items: int
    dim: int
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        if self.num_items <= 0 or self.dim <= 0:
            raise ValueError("num_items and dim must be positive")
        shape = (self.num_items, self.dim)
        if self.p.shape != shape or self.q.shape != shape:
            raise ValueError(
                f"embedding tables must both be {shape}, "
                f"got p={self.p.shape} q={self.q.shape}"
            )
        if not (np.isfinite(self.p).all() and np.isfinite(self.q).all()):
            raise ValueError("embedding tables contain non-finite entries")
        # Treated as immutable after construction; shared across clients.
        self.p.flags.writeable = False
        self.q.flags.writeable = False

    @property
    def size_flat(self) -> int:
        return 2 * self.num_items * self.dim


def zeros(num_items: int, dim: int) -> ModelParams:
    return ModelParams(
        num_items, dim, np.zeros((num_items, dim)), np.zeros((num_items, dim))
    )


def flatten(params: ModelParams) -> np.ndarray:
    """Flatten to the canonical layout (p rows, then q rows)."""
    return np.concatenate([np.asarray(params.p).ravel(), np.asarray(params.q).ravel()])


def unflatten(vec: np.ndarray, num_items: int, dim: int) -> ModelParams:
    """Inverse of :func:`flatten`.  Views into ``vec``, no copy."""
    vec = np.asarray(vec, dtype=np.float64)
    expected = 2 * num_items * dim
    if vec.ndim != 1 or vec.size != expected:
        raise ValueError(f"expected flat vector of length {expected}, got {vec.shape}")
    half = num_items * dim
    p = vec[:half].reshape(num_items, dim)
    q = vec[half:].reshape(num_items, dim)
    return ModelParams(num_items, dim, p, q)


def _check_same_length(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")


def euclidean_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_length(a, b)
    return float(np.linalg.norm(a - b))


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_length(a, b)
    return a * b


def to_csv_row(vec: np.ndarray) -> str:
    """One comma-separated row of decimal floats (full round-trip precision)."""
    return ",".join(repr(float(x)) for x in np.asarray(vec).ravel())
