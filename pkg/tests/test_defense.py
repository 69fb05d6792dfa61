import numpy as np
import pytest

from fedrec.defense import (DefenseConfig, DefenseKind, aggregate,
                            coordinate_trimmed_mean, geometric_median,
                            krum_select, trimmed_norm_filter, weighted_mean)
from fedrec.optim import ClientPacket


def brute_force_krum(vectors, f, keep):
    """Independent exhaustive scoring with plain python loops."""
    ids = sorted(vectors)
    n = len(ids)
    scores = {}
    for i in ids:
        dists = sorted(
            float(((vectors[i] - vectors[j]) ** 2).sum())
            for j in ids if j != i
        )
        scores[i] = sum(dists[: n - f - 2])
    ranked = sorted(ids, key=lambda i: (scores[i], i))
    return sorted(ranked[:keep]), scores


def make_packet(cid, theta, n=1):
    theta = np.asarray(theta, dtype=np.float64)
    return ClientPacket(m=theta * 0.1, v=np.abs(theta), theta=theta,
                        train_count=n, client_id=cid)


def test_krum_all_identical_breaks_ties_by_id():
    vectors = {cid: np.ones(4) for cid in (5, 1, 9, 3, 7)}
    res = krum_select(vectors, f=1, keep=2)
    assert all(s == 0.0 for s in res.scores.values())
    assert res.selected == [1, 3]


def test_krum_excludes_far_outlier():
    rng = np.random.default_rng(0)
    vectors = {i: rng.normal(0, 0.1, 6) for i in range(4)}
    vectors[4] = rng.normal(100, 0.1, 6)
    res = krum_select(vectors, f=1, keep=3)
    assert 4 not in res.selected
    want, _ = brute_force_krum(vectors, 1, 3)
    assert res.selected == want


def test_krum_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(1)
    for _ in range(60):
        n = int(rng.integers(4, 9))
        f = int(rng.integers(0, n - 3))
        keep = int(rng.integers(1, n - f + 1))
        vectors = {int(i): rng.standard_normal(5) for i in
                   rng.choice(100, n, replace=False)}
        res = krum_select(vectors, f, keep)
        want_sel, want_scores = brute_force_krum(vectors, f, keep)
        assert res.selected == want_sel
        for i, s in want_scores.items():
            assert res.scores[i] == pytest.approx(s, rel=1e-9)


def test_krum_scale_invariance():
    rng = np.random.default_rng(2)
    vectors = {i: rng.standard_normal(8) for i in range(7)}
    res1 = krum_select(vectors, f=2, keep=3)
    scaled = {i: 3.0 * v for i, v in vectors.items()}
    res2 = krum_select(scaled, f=2, keep=3)
    assert res1.selected == res2.selected
    for i in vectors:
        assert res2.scores[i] == pytest.approx(9.0 * res1.scores[i], rel=1e-9)


def test_krum_preconditions():
    vectors = {i: np.zeros(2) for i in range(4)}
    with pytest.raises(ValueError):
        krum_select(vectors, f=2, keep=1)   # n - f - 2 < 1
    with pytest.raises(ValueError):
        krum_select(vectors, f=1, keep=4)   # keep > n - f


def test_geometric_median_single_and_symmetry():
    v = np.array([2.0, -1.0])
    assert np.allclose(geometric_median([v], [1.0]), v)
    # equilateral triangle: symmetry forces the center
    pts = [np.array([0.0, 0.0]), np.array([1.0, 0.0]),
           np.array([0.5, np.sqrt(3) / 2])]
    center = np.mean(pts, axis=0)
    got = geometric_median(pts, [1.0, 1.0, 1.0], max_iters=200)
    assert np.linalg.norm(got - center) <= 1e-6


def test_geometric_median_collinear_is_middle_point():
    pts = [np.array([0.0]), np.array([1.0]), np.array([2.0])]
    got = geometric_median(pts, [1.0, 1.0, 1.0], max_iters=300)
    assert abs(got[0] - 1.0) <= 1e-6
    # dense grid search of the weighted-distance objective agrees
    grid = np.linspace(-0.5, 2.5, 6001)
    obj = sum(np.abs(grid - p[0]) for p in pts)
    assert abs(grid[np.argmin(obj)] - 1.0) <= 1e-3


def test_geometric_median_objective_nonincreasing():
    rng = np.random.default_rng(3)
    pts = [rng.standard_normal(6) for _ in range(9)]
    w = np.abs(rng.standard_normal(9)) + 0.5
    _, objectives = geometric_median(pts, w, max_iters=60,
                                     return_objectives=True)
    for prev, cur in zip(objectives, objectives[1:]):
        assert cur <= prev + 1e-12


def test_geometric_median_validation():
    with pytest.raises(ValueError):
        geometric_median([], [])
    with pytest.raises(ValueError):
        geometric_median([np.zeros(2)], [0.0])


def test_trimmed_norm_beta_zero_keeps_all():
    packets = [make_packet(i, [float(i + 1), 0.0]) for i in range(5)]
    res = trimmed_norm_filter(packets, 0.0)
    assert res.selected == [0, 1, 2, 3, 4]


def test_trimmed_norm_drops_extremes():
    packets = [make_packet(i, [float(n), 0.0])
               for i, n in enumerate([1, 2, 3, 4, 5])]
    res = trimmed_norm_filter(packets, 0.2)
    assert res.selected == [1, 2, 3]


def test_trimmed_norm_all_equal_keeps_everything():
    packets = [make_packet(i, [2.0, 0.0]) for i in range(5)]
    assert trimmed_norm_filter(packets, 0.2).selected == [0, 1, 2, 3, 4]


def test_trimmed_norm_boundary_ties_survive():
    packets = [make_packet(i, [float(n), 0.0])
               for i, n in enumerate([1, 1, 2, 3])]
    # the low cutoff equals the duplicated norm, so both copies survive
    assert trimmed_norm_filter(packets, 0.25).selected == [0, 1, 2]


def test_coordinate_trimmed_mean():
    vecs = np.array([[0.0, 10.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0],
                     [100.0, 4.0]])
    got = coordinate_trimmed_mean(vecs, 0.2)
    assert np.allclose(got, [2.0, 3.0])
    assert np.allclose(coordinate_trimmed_mean(vecs, 0.0), vecs.mean(axis=0))


def test_aggregate_single_client_verbatim():
    pkt = make_packet(0, [1.0, -2.0, 3.0], n=7)
    m, v, theta = aggregate([pkt], DefenseConfig(DefenseKind.NO_DEFENSE))
    assert np.array_equal(m, pkt.m)
    assert np.array_equal(v, pkt.v)
    assert np.array_equal(theta, pkt.theta)


def test_aggregate_weighted_mean_example():
    a = make_packet(0, [0.0], n=1)
    b = make_packet(1, [4.0], n=3)
    _, _, theta = aggregate([a, b], DefenseConfig(DefenseKind.NO_DEFENSE))
    assert theta[0] == pytest.approx(3.0, rel=1e-15)


def test_aggregate_matches_summation_oracle():
    rng = np.random.default_rng(4)
    packets = [ClientPacket(m=rng.standard_normal(6),
                            v=np.abs(rng.standard_normal(6)),
                            theta=rng.standard_normal(6),
                            train_count=int(rng.integers(1, 9)), client_id=i)
               for i in range(7)]
    m, v, theta = aggregate(packets, DefenseConfig(DefenseKind.NO_DEFENSE))
    total = sum(p.train_count for p in packets)
    for field, got in (("m", m), ("v", v), ("theta", theta)):
        want = np.zeros(6)
        for p in packets:
            want += (p.train_count / total) * getattr(p, field)
        assert np.abs(got - want).max() <= 1e-12 * max(1.0, np.abs(want).max())
    # equal weights reduce to the arithmetic mean
    eq = [ClientPacket(p.m, p.v, p.theta, 1, p.client_id) for p in packets]
    m_eq, _, _ = aggregate(eq, DefenseConfig(DefenseKind.NO_DEFENSE))
    assert np.abs(m_eq - np.mean([p.m for p in packets], axis=0)).max() <= 1e-12


def test_aggregate_rfa_uses_geometric_median_per_field():
    rng = np.random.default_rng(5)
    packets = [ClientPacket(m=rng.standard_normal(4),
                            v=np.abs(rng.standard_normal(4)),
                            theta=rng.standard_normal(4),
                            train_count=int(rng.integers(1, 5)), client_id=i)
               for i in range(6)]
    cfg = DefenseConfig(DefenseKind.RFA, max_iters=80, smoothing=1e-6)
    m, v, theta = aggregate(packets, cfg)
    w = [p.train_count for p in packets]
    assert np.allclose(m, geometric_median([p.m for p in packets], w, 80, 1e-6))
    assert np.allclose(theta, geometric_median([p.theta for p in packets],
                                               w, 80, 1e-6))
    assert (v >= 0).all()  # median of nonnegative vectors stays nonnegative


def test_aggregate_keeps_accumulators_nonnegative():
    rng = np.random.default_rng(6)
    packets = [ClientPacket(m=rng.standard_normal(5),
                            v=np.abs(rng.standard_normal(5)),
                            theta=rng.standard_normal(5),
                            train_count=2, client_id=i) for i in range(5)]
    for kind in (DefenseKind.NO_DEFENSE, DefenseKind.RFA):
        _, v, _ = aggregate(packets, DefenseConfig(kind))
        assert (v >= 0).all()


def test_aggregate_empty_selection_rejected():
    with pytest.raises(ValueError):
        aggregate([], DefenseConfig(DefenseKind.NO_DEFENSE))


def test_weighted_mean_validates_weights():
    with pytest.raises(ValueError):
        weighted_mean([np.zeros(2)], [0.0])
