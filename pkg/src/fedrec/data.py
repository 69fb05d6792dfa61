"""Interaction-log ingestion, implicit-feedback splits, synthetic fixtures.

Input files are UTF-8 tab-separated, one interaction per line: either
(user, item) or (user, item, rating, timestamp) with the last two columns
discarded -- every logged interaction counts as an implicit positive.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FORMAT_USER_ITEM = "tsv-user-item"
FORMAT_USER_ITEM_RATING_TIME = "tsv-user-item-rating-time"
_FORMATS = {FORMAT_USER_ITEM: 2, FORMAT_USER_ITEM_RATING_TIME: 4}


@dataclass
class InteractionLog:
    records: list[tuple[int, int]]   # (user, item), dense 0-based ids, sorted
    num_users: int
    num_items: int


@dataclass
class SplitDataset:
    train: dict[int, np.ndarray]   # user -> train positives
    test: dict[int, np.ndarray]    # user -> held-out positives (may be empty)
    num_users: int
    num_items: int

    def eval_users(self) -> list[int]:
        return [u for u in sorted(self.test) if self.test[u].size > 0]


def detect_format(path) -> str:
    """Sniff the column layout from the first non-empty line."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            n = len(line.rstrip("\n").split("\t"))
            for fmt, cols in _FORMATS.items():
                if cols == n:
                    return fmt
            raise ValueError(f"{path}: cannot infer format from {n} columns")
    raise ValueError(f"{path}: no interactions found")


def ingest(path, fmt: str = FORMAT_USER_ITEM) -> InteractionLog:
    """Parse an interaction file into a deduplicated, densely-remapped log."""
    if fmt not in _FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {sorted(_FORMATS)}")
    want_cols = _FORMATS[fmt]
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != want_cols:
                raise ValueError(
                    f"{path}:{lineno}: expected {want_cols} tab-separated "
                    f"columns, got {len(cols)}"
                )
            try:
                user, item = int(cols[0]), int(cols[1])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-integer id: {exc}") from None
            pairs.append((user, item))
    if not pairs:
        raise ValueError(f"{path}: no interactions found")
    pairs = sorted(set(pairs))
    users = {u: i for i, u in enumerate(sorted({u for u, _ in pairs}))}
    items = {j: i for i, j in enumerate(sorted({j for _, j in pairs}))}
    records = sorted((users[u], items[j]) for u, j in pairs)
    return InteractionLog(records, len(users), len(items))


def write_log(log: InteractionLog, path) -> None:
    """Two-column fixture form; ingest(write_log(x)) == x."""
    with open(path, "w", encoding="utf-8") as fh:
        for user, item in log.records:
            fh.write(f"{user}\t{item}\n")


def split(log: InteractionLog, ratio: float, seed: int) -> SplitDataset:
    """Per-user train/test partition: max(1, floor(ratio * count)) items go to
    train after a per-user seeded shuffle; single-item users keep everything
    in train and are excluded from evaluation."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be strictly inside (0, 1)")
    per_user: dict[int, list[int]] = {u: [] for u in range(log.num_users)}
    for user, item in log.records:
        per_user[user].append(item)
    train: dict[int, np.ndarray] = {}
    test: dict[int, np.ndarray] = {}
    for user in range(log.num_users):
        items = np.asarray(sorted(per_user[user]), dtype=np.int64)
        if items.size < 2:
            train[user] = items
            test[user] = np.zeros(0, dtype=np.int64)
            continue
        rng = np.random.default_rng(np.random.SeedSequence([seed, 7, user]))
        perm = rng.permutation(items.size)
        n_train = max(1, math.floor(ratio * items.size))
        train[user] = np.sort(items[perm[:n_train]])
        test[user] = np.sort(items[perm[n_train:]])
    return SplitDataset(train, test, log.num_users, log.num_items)


def synthesize(num_users: int, num_items: int, latent_dim: int, density: float,
               seed: int, popularity: float = 24.0) -> InteractionLog:
    """Planted low-rank preference log.

    Latent factors carry ``latent_dim`` personal axes plus one shared
    popularity axis scaled by ``popularity``; real interaction logs are
    heavily popularity-skewed and the skew is what makes clients' gradients
    correlate.  Interactions are the user-item pairs whose latent inner
    product clears the global quantile matching ``density``, so rankings
    are learnable well above chance.  Every user is topped up to two items
    (its best-scoring ones) so each client can train and be evaluated.
    """
    if not 0.0 < density < 1.0:
        raise ValueError("density must be strictly inside (0, 1)")
    if popularity < 0.0:
        raise ValueError("popularity must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    u_fac = np.hstack([rng.standard_normal((num_users, latent_dim)),
                       np.ones((num_users, 1))])
    v_fac = np.hstack([rng.standard_normal((num_items, latent_dim)),
                       popularity * rng.standard_normal((num_items, 1))])
    scores = u_fac @ v_fac.T
    threshold = np.quantile(scores, 1.0 - density)
    liked = scores > threshold
    for user in range(num_users):
        if liked[user].sum() < 2:
            liked[user, np.argsort(scores[user])[-2:]] = True
    records = sorted(
        (int(u), int(j)) for u, j in np.argwhere(liked)
    )
    return InteractionLog(records, num_users, num_items)
