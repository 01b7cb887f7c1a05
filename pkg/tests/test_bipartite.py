import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latentdag.bipartite import (
    SymmetricTensor3,
    als_fallback,
    brute_force_recover,
    build_m3,
    comw,
    full_weight_table,
    jennrich,
    members,
    recover,
    to_mask,
    weights_from_counts,
)
from latentdag.errors import AssumptionViolation, IncompleteTableError, JennrichFailure, UnrecoverableTensor
from latentdag.model import check_independent_columns, check_no_twins

from conftest import TRIANGLE

LN2 = math.log(2)


def counts(A, dims, t):
    """Exact component counts for every subset of size at most ``t``."""
    A = np.asarray(A)
    n = A.shape[0]
    out = {}
    for size in range(1, min(t, n) + 1):
        for S in combinations(range(n), size):
            pa = np.flatnonzero(A[list(S)].any(axis=0))
            out[to_mask(S)] = math.prod(dims[j] for j in pa)
    return out


def direct_comw(A, dims, S):
    """Sum of log-dims over hidden variables adjacent to all of ``S``."""
    A = np.asarray(A)
    common = np.flatnonzero(A[list(S)].all(axis=0))
    return sum(math.log(dims[j]) for j in common)


def as_column_set(rb):
    return sorted(zip(map(tuple, rb.gamma.adjacency.T.tolist()), rb.dims.dims))


def truth_set(A, dims):
    return sorted(zip(map(tuple, np.asarray(A).T.tolist()), dims))


def random_graph(rng, n, m, independent=True):
    while True:
        A = (rng.random((n, m)) < 0.5).astype(int)
        if not A.any(axis=0).all() or not check_no_twins(A):
            continue
        if independent and not check_independent_columns(A):
            continue
        return A


def test_masks():
    assert to_mask([0, 2]) == 5
    assert members(5) == [0, 2]


def test_weights_from_counts():
    W = weights_from_counts({1: 1, 2: 4, 3: 8})
    assert W[1] == 0.0
    assert W[2] == pytest.approx(math.log(4))
    assert W[3] == pytest.approx(math.log(8))
    with pytest.raises(ValueError):
        weights_from_counts({1: 0})


def test_comw_triangle():
    W = weights_from_counts(counts(TRIANGLE, (2, 2, 2), 3), 3)
    assert comw(1, W) == pytest.approx(2 * LN2)
    assert comw(0b011, W) == pytest.approx(LN2, abs=1e-12)
    assert comw(0b111, W) == pytest.approx(0.0, abs=1e-12)


def test_comw_missing_entry():
    W = weights_from_counts({1: 2, 2: 2}, 2)
    with pytest.raises(IncompleteTableError):
        comw(3, W)


def test_m3_triangle_entries():
    W = weights_from_counts(counts(TRIANGLE, (2, 2, 2), 3), 3)
    T = build_m3(W).entries
    a = TRIANGLE.T.astype(float)
    expected = LN2 * sum(np.einsum("i,j,k->ijk", c, c, c) for c in a)
    np.testing.assert_allclose(T, expected, atol=1e-12)
    assert T[0, 1, 2] == pytest.approx(0.0, abs=1e-12)
    assert T[0, 0, 1] == pytest.approx(LN2)
    for i in range(3):
        assert T[i, i, i] == pytest.approx(W[1 << i])


def test_m3_all_ones_counts_is_zero():
    W = weights_from_counts(counts(np.zeros((4, 0), dtype=int), (), 3), 4)
    assert not build_m3(W).entries.any()


def test_m3_dump_round_trip(tmp_path):
    W = weights_from_counts(counts(TRIANGLE, (2, 2, 2), 3), 3)
    M3 = build_m3(W)
    M3.dump(tmp_path / "m3.bin")
    raw = (tmp_path / "m3.bin").read_bytes()
    assert len(raw) == 8 + 8 * 27
    back = SymmetricTensor3.load(tmp_path / "m3.bin")
    assert back.n == 3
    np.testing.assert_array_equal(back.entries, M3.entries)


def test_jennrich_rank_one():
    c = np.array([1.0, 1.0, 0.0])
    M3 = SymmetricTensor3(3, LN2 * np.einsum("i,j,k->ijk", c, c, c))
    rb = jennrich(M3, seed=0)
    assert rb.gamma.adjacency[:, 0].tolist() == [1, 1, 0]
    assert rb.dims.dims == (2,)


def test_jennrich_triangle():
    W = weights_from_counts(counts(TRIANGLE, (2, 2, 2), 3), 3)
    rb = jennrich(build_m3(W), seed=1)
    assert as_column_set(rb) == truth_set(TRIANGLE, (2, 2, 2))
    assert rb.method == "jennrich"
    assert np.abs(rb.raw_columns - rb.gamma.adjacency).max() <= 0.05


def test_jennrich_rejects_dependent_columns():
    # columns (1,1,0,0),(0,0,1,1),(1,1,1,1) are dependent
    A = np.array([[1, 0, 1], [1, 0, 1], [0, 1, 1], [0, 1, 1]])
    W = weights_from_counts(counts(A, (2, 3, 2), 3), 4)
    try:
        rb = jennrich(build_m3(W), seed=0)
    except JennrichFailure:
        return
    assert as_column_set(rb) != truth_set(A, (2, 3, 2))


def test_als_rank_one():
    c = np.array([1.0, 0.0, 1.0, 1.0])
    M3 = SymmetricTensor3(4, math.log(3) * np.einsum("i,j,k->ijk", c, c, c))
    rb = als_fallback(M3, [1, 2, 3], seed=0)
    assert rb.gamma.m == 1
    assert rb.dims.dims == (3,)
    assert rb.method == "als"


def test_als_triangle_matches_jennrich():
    W = weights_from_counts(counts(TRIANGLE, (2, 2, 2), 3), 3)
    M3 = build_m3(W)
    rb = als_fallback(M3, [2, 3, 4], seed=0)
    assert rb.gamma.m == 3
    assert as_column_set(rb) == as_column_set(jennrich(M3, seed=0))


def test_als_perturbed_counts_report():
    """Off-by-one pair count: ALS either fits some rank or raises, never hangs."""
    A = np.array([[1, 0], [1, 1], [0, 1], [1, 0]])
    table = counts(A, (2, 3), 3)
    table[to_mask([0, 1])] += 1
    M3 = build_m3(weights_from_counts(table, 4))
    try:
        rb = als_fallback(M3, [1, 2, 3], seed=0, eps_rel=0.15)
    except (AssumptionViolation, UnrecoverableTensor):
        return
    assert rb.residual >= 0


def test_brute_force_empty():
    W = full_weight_table({m: 1 for m in range(1, 8)}, 3)
    rb = brute_force_recover(W)
    assert rb.gamma.m == 0


def test_brute_force_triangle():
    W = full_weight_table(counts(TRIANGLE, (2, 2, 2), 3), 3)
    rb = brute_force_recover(W)
    assert as_column_set(rb) == truth_set(TRIANGLE, (2, 2, 2))
    assert all(w == pytest.approx(LN2) for w in rb.raw_weights)


def test_brute_force_nested_neighbourhoods():
    A = np.array([[1, 1], [0, 1]])
    W = full_weight_table(counts(A, (2, 3), 2), 2)
    rb = brute_force_recover(W)
    assert as_column_set(rb) == truth_set(A, (2, 3))
    # the larger neighbourhood is peeled first
    assert rb.gamma.adjacency[:, 0].tolist() == [1, 1]


def test_recover_uses_jennrich_on_exact_counts():
    W = weights_from_counts(counts(TRIANGLE, (2, 2, 2), 3), 3)
    assert recover(build_m3(W), 0).method == "jennrich"


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 10), m=st.integers(1, 5))
def test_comw_equals_direct_sum(seed, n, m):
    rng = np.random.default_rng(seed)
    A = (rng.random((n, m)) < 0.5).astype(int)
    dims = tuple(int(x) for x in rng.integers(2, 7, size=m))
    W = weights_from_counts(counts(A, dims, 3), n)
    for size in range(1, min(3, n) + 1):
        for S in combinations(range(n), size):
            assert abs(comw(to_mask(S), W) - direct_comw(A, dims, S)) <= 1e-10


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(3, 10), m=st.integers(1, 5))
def test_jennrich_identity_on_exact_counts(seed, n, m):
    rng = np.random.default_rng(seed)
    if m > n:
        m = n
    A = random_graph(rng, n, m)
    dims = tuple(int(x) for x in rng.integers(2, 7, size=m))
    rb = jennrich(build_m3(weights_from_counts(counts(A, dims, 3), n)), seed)
    assert as_column_set(rb) == truth_set(A, dims)
    assert np.abs(rb.raw_columns - rb.gamma.adjacency).max() <= 0.05


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(2, 7), m=st.integers(1, 4))
def test_brute_force_agrees_with_jennrich(seed, n, m):
    rng = np.random.default_rng(seed)
    m = min(m, n)
    A = random_graph(rng, n, m)
    dims = tuple(int(x) for x in rng.integers(2, 7, size=m))
    bf = brute_force_recover(full_weight_table(counts(A, dims, n), n))
    jr = jennrich(build_m3(weights_from_counts(counts(A, dims, 3), n)), seed)
    assert as_column_set(bf) == as_column_set(jr) == truth_set(A, dims)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(3, 8))
def test_m3_symmetric(seed, n):
    rng = np.random.default_rng(seed)
    A = random_graph(rng, n, 2, independent=False)
    T = build_m3(weights_from_counts(counts(A, (2, 3), 3), n)).entries
    for perm in ((0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)):
        np.testing.assert_array_equal(T, np.transpose(T, perm))
