"""Cache-compression policies: retention rules, k-center quality, queries.

Oracles: brute-force k-center over all center subsets (tiny n), hand-traced
eviction runs with dominance gaps so big that no floating-point detail can
flip the decision, and exact attention over hand-picked rows.
"""

from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from subgen import (
    ExactCache,
    PolicyConfig,
    RetainedCache,
    compress,
    exact_attention,
    greedy_k_center,
    query_compressed,
    spectral_error,
)


def _cache_from(keys) -> ExactCache:
    keys = np.asarray(keys, dtype=float)
    values = np.arange(keys.size, dtype=float).reshape(keys.shape) + 1.0
    return ExactCache.from_arrays(keys, values)


def _brute_force_radius(points: np.ndarray, k: int) -> float:
    best = np.inf
    n = len(points)
    dist = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(-1))
    for centers in itertools.combinations(range(n), k):
        best = min(best, dist[:, list(centers)].min(axis=1).max())
    return float(best)


def _covering_radius(points: np.ndarray, centers) -> float:
    dist = np.sqrt(((points[:, None, :] - points[None, centers, :]) ** 2).sum(-1))
    return float(dist.min(axis=1).max())


# ---------------------------------------------------------------------------
# greedy k-center


def test_greedy_all_points_when_k_equals_n():
    pts = np.array([[0.0], [4.0], [9.0]])
    assert sorted(greedy_k_center(pts, 3)) == [0, 1, 2]


def test_greedy_walks_to_the_farthest_point():
    pts = np.array([[0.0], [1.0], [10.0]])
    centers = greedy_k_center(pts, 2)
    assert centers == [0, 2]
    assert _covering_radius(pts, centers) == 1.0


def test_greedy_starts_at_index_zero():
    pts = np.array([[5.0], [0.0], [9.0]])
    assert greedy_k_center(pts, 1) == [0]


def test_greedy_handles_duplicates_with_distinct_indices():
    pts = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
    centers = greedy_k_center(pts, 3)
    assert sorted(centers) == [0, 1, 2]


def test_greedy_rejects_k_beyond_points():
    with pytest.raises(ValueError):
        greedy_k_center(np.zeros((2, 1)), 3)


@pytest.mark.parametrize("seed", range(20))
def test_greedy_within_twice_optimal(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 13))
    k = int(rng.integers(1, 4))
    pts = rng.normal(size=(n, 2))
    got = _covering_radius(pts, greedy_k_center(pts, k))
    assert got <= 2.0 * _brute_force_radius(pts, k) + 1e-12


# ---------------------------------------------------------------------------
# policy configs


def test_policy_config_validation():
    with pytest.raises(ValueError):
        PolicyConfig(kind="nope", budget=4)
    with pytest.raises(ValueError):
        PolicyConfig(kind="sink", budget=0)
    with pytest.raises(ValueError):
        PolicyConfig(kind="sink", budget=4, sink_prefix=3, recent_r=2)
    with pytest.raises(ValueError):
        PolicyConfig(kind="subgen_offline", budget=4, k_centers=3, recent_r=2)
    with pytest.raises(ValueError):
        PolicyConfig(kind="h2o_lite", budget=4, recent_r=5)
    with pytest.raises(ValueError):
        PolicyConfig(kind="sink", budget=4, recent_r=-1)


def test_retained_cache_validation():
    keys = np.zeros((2, 1))
    RetainedCache(np.array([1, 5]), keys, keys, budget=2)
    with pytest.raises(ValueError):
        RetainedCache(np.array([0, 5]), keys, keys, budget=2)  # position < 1
    with pytest.raises(ValueError):
        RetainedCache(np.array([5, 1]), keys, keys, budget=2)  # not increasing
    with pytest.raises(ValueError):
        RetainedCache(np.array([1, 5]), keys, keys, budget=1)  # over budget
    with pytest.raises(ValueError):
        RetainedCache(np.array([1, 5]), np.zeros((3, 1)), keys, budget=2)


# ---------------------------------------------------------------------------
# compress


def test_nothing_to_evict_keeps_everything():
    cache = _cache_from(np.arange(4.0).reshape(4, 1))
    for cfg in (
        PolicyConfig(kind="sink", budget=8, sink_prefix=2, recent_r=2),
        PolicyConfig(kind="subgen_offline", budget=8, k_centers=2, recent_r=2),
        PolicyConfig(kind="h2o_lite", budget=8, recent_r=2),
        PolicyConfig(kind="exact", budget=1),
    ):
        rc = compress(cache, cfg, queries=np.zeros((4, 1)))
        np.testing.assert_array_equal(rc.kept_indices, [1, 2, 3, 4])


def test_sink_keeps_first_and_last_tokens():
    cache = _cache_from(np.arange(10.0).reshape(10, 1))
    cfg = PolicyConfig(kind="sink", budget=4, sink_prefix=2, recent_r=2)
    rc = compress(cache, cfg)
    np.testing.assert_array_equal(rc.kept_indices, [1, 2, 9, 10])
    np.testing.assert_array_equal(rc.keys[:, 0], [0.0, 1.0, 8.0, 9.0])


def test_offline_cluster_policy_covers_all_blobs():
    # three blobs separated by ~100x their diameter; k=3 must pick one
    # representative in each
    rng = np.random.default_rng(0)
    blob_of = np.arange(30) % 3
    keys = rng.normal(size=(30, 2)) * 0.01 + np.array([[0, 0], [100, 0], [0, 100]])[blob_of]
    cache = ExactCache.from_arrays(keys, np.ones_like(keys))
    cfg = PolicyConfig(kind="subgen_offline", budget=7, k_centers=3, recent_r=4)
    rc = compress(cache, cfg)
    assert len(rc) == 7
    np.testing.assert_array_equal(rc.kept_indices[-4:], [27, 28, 29, 30])
    center_positions = rc.kept_indices[:3]
    covered = {int(blob_of[pos - 1]) for pos in center_positions}
    assert covered == {0, 1, 2}


def test_offline_cluster_policy_without_centers_is_a_sliding_window():
    cache = _cache_from(np.arange(10.0).reshape(10, 1))
    cfg = PolicyConfig(kind="subgen_offline", budget=3, k_centers=0, recent_r=3)
    rc = compress(cache, cfg)
    np.testing.assert_array_equal(rc.kept_indices, [8, 9, 10])


def test_score_eviction_drops_the_never_attended_token():
    # keys [0], [10], [0] with unit queries: token 2 soaks up nearly all
    # attention mass at every step, token 1 gets ~1 at step 1, token 3
    # arrives last with ~4.5e-5. With no protected window the minimum
    # cumulative score is token 3's.
    keys = np.array([[0.0], [10.0], [0.0]])
    queries = np.ones((3, 1))
    cache = ExactCache.from_arrays(keys, np.ones((3, 1)))
    cfg = PolicyConfig(kind="h2o_lite", budget=2, recent_r=0)
    rc = compress(cache, cfg, queries=queries)
    np.testing.assert_array_equal(rc.kept_indices, [1, 2])


def test_score_eviction_respects_the_recent_window():
    # same stream, but the newest token is protected: the loser is then
    # token 1 (score ~1.0001 vs token 2's ~2.0)
    keys = np.array([[0.0], [10.0], [0.0]])
    queries = np.ones((3, 1))
    cache = ExactCache.from_arrays(keys, np.ones((3, 1)))
    cfg = PolicyConfig(kind="h2o_lite", budget=2, recent_r=1)
    rc = compress(cache, cfg, queries=queries)
    np.testing.assert_array_equal(rc.kept_indices, [2, 3])


def test_score_eviction_with_full_budget_is_exact():
    rng = np.random.default_rng(3)
    keys = rng.normal(size=(32, 4))
    values = rng.normal(size=(32, 4))
    queries = rng.normal(size=(32, 4))
    cache = ExactCache.from_arrays(keys, values)
    cfg = PolicyConfig(kind="h2o_lite", budget=32, recent_r=4)
    rc = compress(cache, cfg, queries=queries)
    assert len(rc) == 32
    q = rng.normal(size=4)
    z = query_compressed(rc, q)
    assert spectral_error(z, cache, q) == 0.0


def test_h2o_requires_query_history():
    cache = _cache_from(np.arange(5.0).reshape(5, 1))
    cfg = PolicyConfig(kind="h2o_lite", budget=2, recent_r=0)
    with pytest.raises(ValueError):
        compress(cache, cfg)
    with pytest.raises(ValueError):
        compress(cache, cfg, queries=np.zeros((3, 1)))


def test_exact_policy_ignores_budget():
    cache = _cache_from(np.arange(6.0).reshape(6, 1))
    rc = compress(cache, PolicyConfig(kind="exact", budget=2))
    assert len(rc) == 6


# ---------------------------------------------------------------------------
# queries over retained rows


def test_full_cache_query_matches_exact_attention():
    rng = np.random.default_rng(1)
    keys, values = rng.normal(size=(2, 12, 3))
    cache = ExactCache.from_arrays(keys, values)
    rc = compress(cache, PolicyConfig(kind="exact", budget=12))
    q = rng.normal(size=3)
    np.testing.assert_array_equal(query_compressed(rc, q), exact_attention(cache, q))


def test_single_token_query_returns_its_value():
    rc = RetainedCache(
        np.array([4]), np.array([[1.0, 0.0]]), np.array([[7.0, -2.0]]), budget=1
    )
    np.testing.assert_array_equal(query_compressed(rc, np.array([3.0, 1.0])), [7.0, -2.0])


def test_empty_retained_cache_query_is_an_error():
    rc = RetainedCache(np.array([], dtype=np.int64), np.zeros((0, 2)), np.zeros((0, 2)), budget=1)
    with pytest.raises(ValueError):
        query_compressed(rc, np.zeros(2))


def test_sink_query_composes_with_the_exact_oracle():
    rng = np.random.default_rng(64)
    keys, values = rng.normal(size=(2, 64, 4))
    queries = rng.normal(size=(64, 4))
    cache = ExactCache.from_arrays(keys, values)
    cfg = PolicyConfig(kind="sink", budget=4, sink_prefix=2, recent_r=2)
    rc = compress(cache, cfg, queries=queries)
    picked = [0, 1, 62, 63]
    hand = ExactCache.from_arrays(keys[picked], values[picked])
    q = queries[-1]
    np.testing.assert_array_equal(query_compressed(rc, q), exact_attention(hand, q))


# ---------------------------------------------------------------------------
# properties


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(1, 40),
    seed=st.integers(0, 2**16),
    kind=st.sampled_from(["sink", "subgen_offline", "h2o_lite"]),
    budget=st.integers(1, 12),
    data=st.data(),
)
def test_budget_is_never_exceeded(n, seed, kind, budget, data):
    rng = np.random.default_rng(seed)
    keys = rng.normal(size=(n, 2))
    values = rng.normal(size=(n, 2))
    queries = rng.normal(size=(n, 2))
    if kind == "sink":
        prefix = data.draw(st.integers(0, budget))
        cfg = PolicyConfig(
            kind=kind, budget=budget, sink_prefix=prefix, recent_r=budget - prefix
        )
    elif kind == "subgen_offline":
        k = data.draw(st.integers(0, budget))
        cfg = PolicyConfig(kind=kind, budget=budget, k_centers=k, recent_r=budget - k)
    else:
        cfg = PolicyConfig(kind=kind, budget=budget, recent_r=data.draw(st.integers(0, budget)))
    rc = compress(ExactCache.from_arrays(keys, values), cfg, queries=queries)
    assert len(rc) <= max(budget, n) if kind == "exact" else len(rc) <= budget or n <= budget
    assert (np.diff(rc.kept_indices) > 0).all()
    assert rc.kept_indices[0] >= 1 and rc.kept_indices[-1] <= n
