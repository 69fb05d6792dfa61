"""Server-side filtering and aggregation rules.

The central asymmetry: the gradient-space filter scores clients on the
gradients the server recovers from their first moments, while every
baseline works on uploaded parameters.  Selection rules are deterministic;
ties break by ascending client id.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .optim import ClientPacket


class DefenseKind(enum.Enum):
    NO_DEFENSE = "none"
    GRADIENT_KRUM = "gradient_krum"
    PARAM_KRUM = "param_krum"
    RFA = "rfa"
    TRIMMED_NORM = "trimmed_norm"


@dataclass
class DefenseConfig:
    kind: DefenseKind = DefenseKind.NO_DEFENSE
    f: int | None = None          # assumed Byzantine count; None -> ceil(fraction * sampled)
    keep: int | None = None       # multi-selection size; None -> n' - f
    max_iters: int = 100          # Weiszfeld iterations
    smoothing: float = 1e-6       # Weiszfeld denominator floor
    beta: float = 0.1             # trim fraction per side
    coordinate_trim: bool = False  # coordinate-wise trimmed-mean variant

    def __post_init__(self):
        if self.f is not None and self.f < 0:
            raise ValueError("f must be >= 0")
        if not 0.0 <= self.beta < 0.5:
            raise ValueError("trim fraction must be in [0, 0.5)")
        if self.smoothing <= 0.0:
            raise ValueError("smoothing must be positive")


@dataclass
class FilterResult:
    selected: list[int]                      # ascending client ids
    scores: dict[int, float] = field(default_factory=dict)


def krum_select(vectors: dict[int, np.ndarray], f: int, keep: int) -> FilterResult:
    """Multi-selection Krum: score by the sum of the n'-f-2 smallest squared
    distances to the other vectors, keep the lowest-scoring clients."""
    ids = sorted(vectors)
    n = len(ids)
    n_closest = n - f - 2
    if n_closest < 1:
        raise ValueError(f"krum needs n - f - 2 >= 1, got n={n}, f={f}")
    if not 1 <= keep <= n - f:
        raise ValueError(f"keep must be in [1, n - f] = [1, {n - f}], got {keep}")
    stacked = np.ascontiguousarray(np.stack([vectors[i] for i in ids]))
    sq = kernels.pairwise_sq_dists(stacked)
    scores = {}
    for row, i in enumerate(ids):
        others = np.delete(sq[row], row)
        others.sort()
        scores[i] = float(others[:n_closest].sum())
    ranked = sorted(ids, key=lambda i: (scores[i], i))
    return FilterResult(selected=sorted(ranked[:keep]), scores=scores)


def geometric_median(vectors, weights, max_iters: int = 100,
                     smoothing: float = 1e-6, step_tol: float = 1e-10,
                     return_objectives: bool = False):
    """Smoothed Weiszfeld iteration, started from the weighted mean."""
    vectors = [np.asarray(x, dtype=np.float64) for x in vectors]
    if not vectors:
        raise ValueError("geometric median of an empty list")
    w = np.asarray(weights, dtype=np.float64)
    if w.size != len(vectors) or (w <= 0).any():
        raise ValueError("need one positive weight per vector")
    if len(vectors) == 1:
        return (vectors[0].copy(), [0.0]) if return_objectives else vectors[0].copy()
    stacked = np.stack(vectors)
    z = (w[:, None] * stacked).sum(axis=0) / w.sum()
    objectives = [_gm_objective(stacked, w, z)]
    for _ in range(max_iters):
        dist = np.maximum(np.linalg.norm(stacked - z, axis=1), smoothing)
        coef = w / dist
        z_next = (coef[:, None] * stacked).sum(axis=0) / coef.sum()
        step = float(np.linalg.norm(z_next - z))
        z = z_next
        objectives.append(_gm_objective(stacked, w, z))
        if step < step_tol:
            break
    if return_objectives:
        return z, objectives
    return z


def _gm_objective(stacked: np.ndarray, w: np.ndarray, z: np.ndarray) -> float:
    return float((w * np.linalg.norm(stacked - z, axis=1)).sum())


def trimmed_norm_filter(packets: list[ClientPacket], beta: float) -> FilterResult:
    """Drop the floor(beta*n) largest- and smallest-parameter-norm packets.

    Trimming is by strict norm cutoff, so boundary ties survive (all-equal
    norms keep everything) and the median-norm packet always remains.
    """
    if not packets:
        raise ValueError("no packets to filter")
    if not 0.0 <= beta < 0.5:
        raise ValueError("trim fraction must be in [0, 0.5)")
    norms = {p.client_id: float(np.linalg.norm(p.theta)) for p in packets}
    n = len(packets)
    n_drop = math.floor(beta * n)
    ordered = sorted(norms.values())
    low_cut = ordered[n_drop]
    high_cut = ordered[n - 1 - n_drop]
    selected = [cid for cid, nm in norms.items() if low_cut <= nm <= high_cut]
    if not selected:  # unreachable with beta < 0.5; defensive median fallback
        by_norm = sorted(norms, key=lambda cid: (norms[cid], cid))
        selected = [by_norm[n // 2]]
    return FilterResult(selected=sorted(selected), scores=norms)


def coordinate_trimmed_mean(vectors: np.ndarray, beta: float) -> np.ndarray:
    """Per-coordinate mean after removing the floor(beta*n) extremes each side
    (the variant described by the trimmed-mean literature)."""
    n = vectors.shape[0]
    n_drop = math.floor(beta * n)
    if n - 2 * n_drop < 1:
        raise ValueError("trimming would remove every value")
    ordered = np.sort(vectors, axis=0)
    kept = ordered[n_drop : n - n_drop]
    return kept.mean(axis=0)


def weighted_mean(vectors, weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if (w <= 0).any():
        raise ValueError("weights must be positive")
    if len(vectors) == 1:  # keep the single-client round bit-exact
        return np.array(vectors[0], dtype=np.float64)
    stacked = np.stack([np.asarray(v) for v in vectors])
    return (w[:, None] * stacked).sum(axis=0) / w.sum()


def aggregate(packets: list[ClientPacket], cfg: DefenseConfig):
    """Combine the selected packets into (m_bar, v_bar, theta_bar).

    Data-size-weighted mean for every rule except the geometric-median one,
    which replaces the mean componentwise fixpoint with the Weiszfeld point
    for each of the three vectors.
    """
    if not packets:
        raise ValueError("cannot aggregate an empty selection")
    weights = [p.train_count for p in packets]
    fields = ([p.m for p in packets], [p.v for p in packets],
              [p.theta for p in packets])
    if cfg.kind is DefenseKind.RFA:
        return tuple(
            geometric_median(vecs, weights, cfg.max_iters, cfg.smoothing)
            for vecs in fields
        )
    if cfg.kind is DefenseKind.TRIMMED_NORM and cfg.coordinate_trim:
        return tuple(
            coordinate_trimmed_mean(np.stack(vecs), cfg.beta) for vecs in fields
        )
    return tuple(weighted_mean(vecs, weights) for vecs in fields)
