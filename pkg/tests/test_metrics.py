import numpy as np
import pytest

from fedrec.fism import LossConfig, from_universe, predict
from fedrec.metrics import precision_recall, rank_items
from fedrec.params import ModelParams, zeros

from conftest import random_params


def test_rank_items_zero_params_is_id_order():
    mp = zeros(6, 3)
    ds = from_universe(0, [1, 4], 6)
    got = rank_items(mp, ds, LossConfig())
    assert got.tolist() == [0, 2, 3, 5]  # ties break by ascending id


def test_rank_items_dominant_pair_first():
    mp = zeros(5, 2)
    p = np.zeros((5, 2))
    q = np.zeros((5, 2))
    q[1] = [1.0, 0.0]      # history item
    p[3] = [5.0, 0.0]      # strongly matching candidate
    p[2] = [0.5, 0.0]
    mp = ModelParams(5, 2, p, q)
    ds = from_universe(0, [1], 5)
    assert rank_items(mp, ds, LossConfig())[0] == 3


def test_rank_items_matches_predict_sort_oracle():
    rng = np.random.default_rng(0)
    for seed in range(5):
        mp = random_params(np.random.default_rng(seed), 12, 4)
        ds = from_universe(0, rng.choice(12, 3, replace=False), 12)
        cfg = LossConfig(gamma=0.6)
        got = rank_items(mp, ds, cfg)
        candidates = [j for j in range(12) if j not in ds.positives.tolist()]
        want = sorted(candidates,
                      key=lambda j: (-predict(mp, ds, j, cfg), j))
        assert got.tolist() == want


def test_precision_recall_single_hit():
    rankings = {0: np.array([7, 3, 5, 1, 2])}
    tests = {0: np.array([7])}
    rep = precision_recall(rankings, tests, 3)
    assert rep.precision_at[1] == 1.0 and rep.recall_at[1] == 1.0
    assert rep.precision_at[3] == pytest.approx(1 / 3)
    assert rep.recall_at[3] == 1.0
    assert rep.users_evaluated == 1


def test_precision_recall_half_hit():
    rankings = {0: np.array([4, 9, 1])}
    tests = {0: np.array([4, 2])}
    rep = precision_recall(rankings, tests, 2)
    assert rep.precision_at[2] == pytest.approx(0.5)
    assert rep.recall_at[2] == pytest.approx(0.5)


def test_precision_recall_matches_set_oracle():
    rng = np.random.default_rng(1)
    rankings, tests = {}, {}
    for u in range(8):
        rankings[u] = rng.permutation(20)
        tests[u] = rng.choice(20, size=int(rng.integers(1, 5)), replace=False)
    rep = precision_recall(rankings, tests, 5)
    for k in range(1, 6):
        precisions, recalls = [], []
        for u in range(8):
            hits = len(set(rankings[u][:k].tolist()) & set(tests[u].tolist()))
            precisions.append(hits / k)
            recalls.append(hits / tests[u].size)
        assert rep.precision_at[k] == pytest.approx(np.mean(precisions))
        assert rep.recall_at[k] == pytest.approx(np.mean(recalls))


def test_recall_monotone_and_counts_integral():
    rng = np.random.default_rng(2)
    rankings = {u: rng.permutation(30) for u in range(6)}
    tests = {u: rng.choice(30, size=4, replace=False) for u in range(6)}
    rep = precision_recall(rankings, tests, 5)
    for k in range(2, 6):
        assert rep.recall_at[k] >= rep.recall_at[k - 1]
    for k in range(1, 6):
        hits = rep.precision_at[k] * k * rep.users_evaluated
        assert hits == pytest.approx(round(hits), abs=1e-9)


def test_precision_recall_excludes_empty_and_errors_when_none():
    rankings = {0: np.arange(5), 1: np.arange(5)}
    tests = {0: np.array([2]), 1: np.zeros(0, dtype=np.int64)}
    rep = precision_recall(rankings, tests, 2)
    assert rep.users_evaluated == 1
    with pytest.raises(ValueError):
        precision_recall({0: np.arange(5)}, {0: np.zeros(0, dtype=np.int64)}, 2)
