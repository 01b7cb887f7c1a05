import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import silhouette_score

from latentdag.bipartite import to_mask
from latentdag.datagen import GenConfig, gen_model, sample
from latentdag.mixoracle import (
    ClusterResult,
    EmpiricalOracle,
    ExactOracle,
    KEstimate,
    Subsample,
    build_component_map,
    cluster,
    estimate_k_single,
    estimate_k_triple,
    full_weights,
    means_aligned,
    pair_candidates,
    projected_count,
    realizable,
    vote_k,
)
from latentdag.model import exact_component_map, marginal_k

from conftest import TRIANGLE, TRIANGLE_L, make_model


def blobs(centers, per, scale, seed):
    rng = np.random.default_rng(seed)
    centers = np.asarray(centers, dtype=float)
    data = np.repeat(centers, per, axis=0) + scale * rng.standard_normal((len(centers) * per, centers.shape[1]))
    labels = np.repeat(np.arange(len(centers)), per)
    return data, labels


def same_partition(a, b):
    """Two labelings agree up to a bijection of label values."""
    pairs = set(zip(a.tolist(), b.tolist()))
    return len(pairs) == len(set(a.tolist())) == len(set(b.tolist()))


def test_cluster_two_points():
    pts = np.array([[0.0, 0.0], [1.0, 2.0]])
    res = cluster(pts, 2, seed=0)
    assert sorted(map(tuple, res.centroids.tolist())) == [(0.0, 0.0), (1.0, 2.0)]
    assert res.inertia == pytest.approx(0.0)


def test_cluster_single():
    data = np.random.default_rng(0).standard_normal((50, 3))
    res = cluster(data, 1, seed=0)
    np.testing.assert_allclose(res.centroids[0], data.mean(axis=0))


def test_cluster_separated_purity():
    data, truth = blobs([[0, 0], [3, 0], [0, 3]], 300, 0.1, 1)
    res = cluster(data, 3, seed=2)
    agree = sum(np.bincount(res.labels[truth == c]).max() for c in range(3))
    assert agree / len(data) >= 0.99


def test_cluster_deterministic_and_checks():
    data, _ = blobs([[0, 0], [2, 2]], 50, 0.3, 0)
    a, b = cluster(data, 4, seed=7), cluster(data, 4, seed=7)
    np.testing.assert_array_equal(a.labels, b.labels)
    with pytest.raises(ValueError):
        cluster(data[:3], 4)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), k=st.integers(2, 6))
def test_silhouette_matches_sklearn(seed, k):
    rng = np.random.default_rng(seed)
    data = rng.standard_normal((120, 3))
    labels = rng.integers(0, k, size=120)
    if len(set(labels.tolist())) < 2:
        return
    sub = Subsample(data, size=500, seed=0)
    assert sub.silhouette(labels, k) == pytest.approx(silhouette_score(data, labels), abs=1e-10)


def test_single_estimate_finds_four():
    data, _ = blobs([[0, 0], [2, 0], [0, 2], [2, 2]], 250, 0.1, 3)
    est = estimate_k_single(data, 12, seed=0)
    assert 4 in [k for k, _ in est.candidates]
    assert est.chosen_k == 4


def test_single_estimate_shrinks_k_max():
    data, _ = blobs([[0, 0], [2, 2]], 4, 0.1, 0)
    est = estimate_k_single(data, 20, seed=0)
    assert max(est.silhouettes) < len(data)


def test_pair_candidates():
    assert pair_candidates([2], [3], 50) == [6]
    assert pair_candidates([2], [2], 50) == [2, 4]
    assert max(pair_candidates([6], [6], 20)) <= 20


def est(subset, cands):
    cands = [(k, float(s)) for k, s in cands]
    return KEstimate(subset, cands, cands[0][0], silhouettes=dict(cands))


def test_vote_resolves_worked_pair():
    singles = {0: est((0,), [(k, 0.5) for k in (6, 7, 8)]),
               1: est((1,), [(k, 0.5) for k in (4, 5, 6)])}
    pairs = {(0, 1): est((0, 1), [(k, 0.5) for k in range(20, 27)])}
    table = vote_k(singles, pairs)
    assert table[to_mask([0, 1])] == 24
    assert table[to_mask([0, 1])] % table[1] == 0
    assert table[to_mask([0, 1])] % table[2] == 0


def test_vote_all_equal():
    singles = {0: est((0,), [(3, 0.4)]), 1: est((1,), [(3, 0.4)])}
    pairs = {(0, 1): est((0, 1), [(3, 0.4)])}
    assert vote_k(singles, pairs) == {1: 3, 2: 3, 3: 3}


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6), m=st.integers(1, 3), n=st.integers(4, 7))
def test_vote_exact_seeded(seed, m, n):
    model = gen_model(GenConfig(m=m, n=n, seed=seed))
    rng = np.random.default_rng(seed)
    singles, pairs = {}, {}
    for i in range(n):
        k = marginal_k(model, [i])
        decoys = [(k + int(d), 0.2) for d in rng.integers(1, 4, size=2)]
        singles[i] = est((i,), [(k, 1.0)] + decoys)
    for i in range(n):
        for j in range(i + 1, n):
            k = marginal_k(model, [i, j])
            pairs[(i, j)] = est((i, j), [(k, 1.0), (k + 1, 0.3)])
    table = vote_k(singles, pairs)
    for mask, k in table.items():
        assert k == marginal_k(model, [b for b in range(n) if mask >> b & 1])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_vote_output_divisible(seed):
    rng = np.random.default_rng(seed)
    n = 4
    singles = {i: est((i,), [(int(k), float(rng.uniform())) for k in rng.choice(np.arange(2, 9), 3, replace=False)])
               for i in range(n)}
    pairs = {(i, j): est((i, j), [(int(k), float(rng.uniform())) for k in rng.choice(np.arange(2, 40), 5, replace=False)])
             for i in range(n) for j in range(i + 1, n)}
    table = vote_k(singles, pairs)
    for (i, j), pe in pairs.items():
        k = table[(1 << i) | (1 << j)]
        assert k % table[1 << i] == 0 and k % table[1 << j] == 0
        assert pe.chosen_k == k


def test_means_aligned():
    sub = np.array([[0.0, 0.0], [1.0, 0.0]])
    sup = np.array([[0.0, 0.0, 5.0, 5.0], [1.0, 0.05, 6.0, 6.0], [0.02, 0.0, 7.0, 7.0]])
    assert means_aligned(sub, sup, slice(0, 2))
    assert not means_aligned(sub, sup, slice(2, 4))


def test_triple_estimate_triangle():
    model = make_model(TRIANGLE, (2, 2, 2), seed=4, cov_max_eig=1e-4)
    data = sample(model, 4000, 1).data
    d = model.obs_dim
    pair_results = {}
    for i, j in ((0, 1), (0, 2), (1, 2)):
        cols = np.r_[i * d:(i + 1) * d, j * d:(j + 1) * d]
        k = marginal_k(model, [i, j])
        pair_results[(i, j)] = (k, cluster(data[:, cols], k, seed=0, n_init=10).centroids)
    singles = {i: marginal_k(model, [i]) for i in range(3)}
    res = estimate_k_triple(data, pair_results, singles, (0, 1, 2), d, seed=0)
    assert res.chosen_k == 8
    # the triple's parents are those of each pair
    assert res.chosen_k == pair_results[(0, 1)][0]


def test_component_map_from_true_means():
    model = make_model(TRIANGLE, (2, 2, 2), seed=1, cov_max_eig=1e-4)
    means = model.component_means()
    rng = np.random.default_rng(0)
    data = np.repeat(means, 40, axis=0) + 1e-3 * rng.standard_normal((8 * 40, means.shape[1]))
    labels = np.repeat(np.arange(8), 40)
    full = ClusterResult(means, labels, 0.0)
    L = build_component_map(data, 8, (4, 4, 4), model.obs_dim, seed=0, full=full)
    exact = exact_component_map(model)
    for i in range(3):
        assert same_partition(L.rows[:, i], exact[:, i])


def test_component_map_worked_table():
    """Full centroids assembled from per-variable means along the worked table."""
    rng = np.random.default_rng(5)
    marg = [rng.standard_normal((4, 5)) for _ in range(3)]
    rows = np.asarray(TRIANGLE_L) - 1
    cents = np.array([np.concatenate([marg[i][r[i]] for i in range(3)]) for r in rows])
    data = np.repeat(cents, 30, axis=0) + 1e-3 * rng.standard_normal((240, 15))
    full = ClusterResult(cents, np.repeat(np.arange(8), 30), 0.0)
    L = build_component_map(data, 8, (4, 4, 4), 5, seed=0, full=full)
    for i in range(3):
        assert same_partition(L.rows[:, i], rows[:, i])


def test_component_map_permutation_covariant():
    model = make_model(TRIANGLE, (2, 2, 2), seed=1, cov_max_eig=1e-4)
    means = model.component_means()
    full = ClusterResult(means, np.arange(8), 0.0)
    a = build_component_map(means, 8, (4, 4, 4), 5, seed=0, full=full)
    b = build_component_map(means, 8, (4, 4, 4), 5, seed=9, full=full)
    for i in range(3):
        assert same_partition(a.rows[:, i], b.rows[:, i])


def test_component_map_single_component():
    data = np.random.default_rng(0).standard_normal((20, 10))
    L = build_component_map(data, 1, (1, 1), 5, seed=0)
    assert L.rows.tolist() == [[0, 0]]


def test_full_weights_balanced():
    data, _ = blobs([[0, 0], [4, 4]], 500, 0.2, 0)
    w = full_weights(data, 2, seed=0)
    assert np.abs(w - 0.5).max() <= 2 / np.sqrt(len(data))
    assert full_weights(data, 1).tolist() == [1.0]


def test_full_weights_uniform_triangle(triangle_model):
    data = sample(triangle_model, 10_000, 3).data
    w = full_weights(data, 8, seed=0)
    assert np.abs(w - 0.125).max() <= 0.02
    assert w.sum() == pytest.approx(1.0)


def test_projected_count_and_realizable(triangle_model):
    means = triangle_model.component_means()
    assert projected_count(means, [0], 5) == 4
    assert projected_count(means, [0, 1, 2], 5) == 8
    table = ExactOracle(triangle_model).counts(3)
    assert realizable(table, 3, K=8)
    bad = dict(table)
    bad[to_mask([0, 1])] = 6
    assert not realizable(bad, 3)


def test_exact_oracle_interface(triangle_model):
    o = ExactOracle(triangle_model)
    counts = o.counts(3)
    assert counts[to_mask([0])] == 4 and counts[to_mask([0, 1, 2])] == 8
    L = o.component_map(8, (4, 4, 4))
    np.testing.assert_array_equal(L.rows, exact_component_map(triangle_model))
    np.testing.assert_array_equal(o.full_weights(8), triangle_model.joint.flat())
    assert o.full_labels(8) is None


def test_kestimate_json_round_trip():
    e = KEstimate((0, 2), [(4, 0.7), (6, 0.5)], 4, votes={4: 1.2}, low_confidence=True,
                  silhouettes={4: 0.7, 6: 0.5}, centroids={4: np.zeros((4, 10))})
    back = KEstimate.from_dict(json.loads(json.dumps(e.to_dict())))
    assert back.subset == e.subset and back.candidates == e.candidates
    assert back.votes == e.votes and back.low_confidence
    np.testing.assert_array_equal(back.centroids[4], e.centroids[4])


@pytest.mark.parametrize("strategy", ["projection", "voting"])
def test_empirical_counts_single_hidden(strategy):
    model = gen_model(GenConfig(m=1, n=3, seed=2))
    S = sample(model, 5000, 0)
    table = EmpiricalOracle(S, seed=0, strategy=strategy).counts(3)
    for mask, k in table.items():
        assert k == marginal_k(model, [b for b in range(3) if mask >> b & 1])
