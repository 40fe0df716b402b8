"""Exact attention, softmax, and the spectral error metric.

Reference values were computed with mpmath at 60 significant digits using a
direct transcription of softmax / attention (exp, sum, divide — no shift
trick), then frozen here. The operator norm is cross-checked against
numpy.linalg.svd, an independent dense implementation.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from subgen import (
    ExactCache,
    TokenTriplet,
    error_denominator,
    exact_attention,
    normalized_error,
    operator_norm,
    softmax_vector,
    spectral_error,
)

# mpmath (dps=60) oracle for K=[[1,0],[0,1],[1,1]], V=[[1,2],[3,4],[5,6]],
# q=[0.5,-0.25]
_Z_3TOK = np.array([2.8034804313214086686, 3.8034804313214086686])
_P_3TOK = np.array(
    [0.44421397916166541554, 0.20983182601596483459, 0.34595419482236974986]
)
_PNORM_3TOK = 0.60086584143802750994
_VOP_3TOK = 9.5255180915651082153

# mpmath oracle for softmax([0.1, 0.2, 0.3, 0.4])
_P_RAMP = np.array(
    [
        0.21383822036598442976,
        0.23632778232153766168,
        0.26118259215507558414,
        0.28865140515740232442,
    ]
)


def _cache(keys, values) -> ExactCache:
    cache = ExactCache(d=len(keys[0]))
    for k, v in zip(keys, values):
        cache.append(np.asarray(k, dtype=float), np.asarray(v, dtype=float))
    return cache


def test_softmax_matches_high_precision_reference():
    # one-dimensional keys make the logits exactly [0.1, 0.2, 0.3, 0.4]
    cache = _cache([[0.1], [0.2], [0.3], [0.4]], [[0.0]] * 4)
    got = softmax_vector(cache, np.array([1.0]))
    np.testing.assert_allclose(got, _P_RAMP, rtol=1e-15)


def test_softmax_extreme_logits_do_not_overflow():
    # exp(500) overflows float64; the shifted computation must not.
    cache = _cache([[500.0], [-500.0]], [[0.0]] * 2)
    got = softmax_vector(cache, np.array([1.0]))
    assert got[0] == pytest.approx(1.0, abs=1e-300)
    # mpmath: exp(-1000)/(1+exp(-1000)) ~ 5.0759588975494568e-435,
    # which underflows to zero in float64 — acceptable and finite.
    assert got[1] == 0.0
    assert np.isfinite(got).all()


def test_attention_matches_high_precision_reference():
    cache = _cache([[1, 0], [0, 1], [1, 1]], [[1, 2], [3, 4], [5, 6]])
    z = exact_attention(cache, np.array([0.5, -0.25]))
    np.testing.assert_allclose(z, _Z_3TOK, rtol=1e-14)


def test_single_token_attention_returns_the_value():
    cache = _cache([[2.0, 1.0]], [[-3.5, 0.25]])
    z = exact_attention(cache, np.array([10.0, -4.0]))
    np.testing.assert_array_equal(z, np.array([-3.5, 0.25]))


def test_attention_on_empty_cache_is_an_error():
    cache = ExactCache(d=3)
    with pytest.raises(ValueError):
        exact_attention(cache, np.zeros(3))


def test_operator_norm_hand_cases():
    # singular values known in closed form
    assert operator_norm(np.array([[1.0, -1.0]])) == pytest.approx(math.sqrt(2), rel=1e-9)
    assert operator_norm(np.array([[3.0, 0.0], [0.0, 4.0]])) == pytest.approx(4.0, rel=1e-9)
    # rank-one outer product: top singular value is ||u||*||w||
    assert operator_norm(np.array([[1.0, 2.0], [2.0, 4.0]])) == pytest.approx(5.0, rel=1e-9)
    assert operator_norm(np.zeros((4, 3))) == 0.0


@pytest.mark.parametrize("rows,cols,seed", [(3, 2, 0), (8, 5, 1), (1, 7, 2), (40, 6, 3)])
def test_operator_norm_matches_svd(rows, cols, seed):
    rng = np.random.default_rng(seed)
    mat = rng.normal(size=(rows, cols))
    want = float(np.linalg.svd(mat, compute_uv=False)[0])
    assert operator_norm(mat) == pytest.approx(want, rel=1e-7)


def test_spectral_error_denominator_reference_value():
    cache = _cache([[1, 0], [0, 1], [1, 1]], [[1, 2], [3, 4], [5, 6]])
    denom = error_denominator(cache, np.array([0.5, -0.25]))
    assert denom == pytest.approx(_PNORM_3TOK * _VOP_3TOK, rel=1e-12)


def test_spectral_error_zero_for_exact_answer():
    cache = _cache([[1, 0], [0, 1], [1, 1]], [[1, 2], [3, 4], [5, 6]])
    q = np.array([0.5, -0.25])
    z = exact_attention(cache, q)
    assert spectral_error(z, cache, q) == 0.0


def test_spectral_error_normalizes_by_reference_scales():
    cache = _cache([[1, 0], [0, 1], [1, 1]], [[1, 2], [3, 4], [5, 6]])
    q = np.array([0.5, -0.25])
    z = exact_attention(cache, q) + np.array([0.0, 0.1])
    want = 0.1 / (_PNORM_3TOK * _VOP_3TOK)
    assert spectral_error(z, cache, q) == pytest.approx(want, rel=1e-12)


def test_normalized_error_edge_cases():
    assert normalized_error(0.0, 0.0) == 0.0
    assert normalized_error(1.0, 0.0) == math.inf
    assert normalized_error(1.0, 4.0) == 0.25


def test_token_triplet_validates_shapes():
    ok = TokenTriplet(q=np.zeros(3), k=np.zeros(3), v=np.zeros(3))
    assert ok.d == 3
    with pytest.raises(ValueError):
        TokenTriplet(q=np.zeros(3), k=np.zeros(2), v=np.zeros(3))
    with pytest.raises(ValueError):
        TokenTriplet(q=np.zeros((3, 1)), k=np.zeros(3), v=np.zeros(3))
    with pytest.raises(ValueError):
        TokenTriplet(q=np.array([np.nan, 0.0]), k=np.zeros(2), v=np.zeros(2))


def test_cache_append_validates_dimensions():
    cache = ExactCache(d=2)
    with pytest.raises(ValueError):
        cache.append(np.zeros(3), np.zeros(2))
    with pytest.raises(ValueError):
        cache.append(np.zeros(2), np.zeros(3))


def test_cache_from_arrays_round_trip():
    keys = np.arange(6, dtype=float).reshape(3, 2)
    values = np.arange(6, 12, dtype=float).reshape(3, 2)
    cache = ExactCache.from_arrays(keys, values)
    ks, vs = cache.arrays()
    np.testing.assert_array_equal(ks, keys)
    np.testing.assert_array_equal(vs, values)
    assert len(cache) == 3


finite_vectors = st.integers(1, 6).flatmap(
    lambda d: st.lists(
        st.lists(
            st.floats(-5, 5, allow_nan=False, allow_infinity=False),
            min_size=d,
            max_size=d,
        ),
        min_size=1,
        max_size=8,
    )
)


@settings(max_examples=60, deadline=None)
@given(data=st.data())
def test_softmax_is_a_probability_vector(data):
    logits = np.asarray(
        data.draw(
            st.lists(
                st.floats(-700, 700, allow_nan=False, allow_infinity=False),
                min_size=1,
                max_size=12,
            )
        )
    )
    cache = _cache([[x] for x in logits], [[0.0]] * len(logits))
    p = softmax_vector(cache, np.array([1.0]))
    assert (p >= 0).all()
    assert p.sum() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(rows=finite_vectors, data=st.data())
def test_attention_output_lies_in_value_convex_hull(rows, data):
    keys = np.asarray(rows)
    n, d = keys.shape
    values = np.asarray(
        data.draw(
            st.lists(
                st.lists(
                    st.floats(-5, 5, allow_nan=False, allow_infinity=False),
                    min_size=d,
                    max_size=d,
                ),
                min_size=n,
                max_size=n,
            )
        )
    )
    q = np.asarray(
        data.draw(
            st.lists(
                st.floats(-3, 3, allow_nan=False, allow_infinity=False),
                min_size=d,
                max_size=d,
            )
        )
    )
    z = exact_attention(ExactCache.from_arrays(keys, values), q)
    # componentwise: a convex combination stays inside the coordinate range
    eps = 1e-9
    assert (z >= values.min(axis=0) - eps).all()
    assert (z <= values.max(axis=0) + eps).all()


@settings(max_examples=40, deadline=None)
@given(rows=finite_vectors, data=st.data())
def test_attention_invariant_to_key_translation_along_query(rows, data):
    # adding (c / ||q||^2) q to every key shifts all logits by the same
    # constant, which softmax cancels
    keys = np.asarray(rows)
    n, d = keys.shape
    rng = np.random.default_rng(0)
    values = rng.normal(size=(n, d))
    q = np.asarray(
        data.draw(
            st.lists(
                st.floats(-3, 3, allow_nan=False, allow_infinity=False),
                min_size=d,
                max_size=d,
            )
        )
    )
    if float(q @ q) < 1e-6:
        q = q + 1.0
    c = data.draw(st.floats(-10, 10, allow_nan=False, allow_infinity=False))
    shifted = keys + (c / float(q @ q)) * q
    z0 = exact_attention(ExactCache.from_arrays(keys, values), q)
    z1 = exact_attention(ExactCache.from_arrays(shifted, values), q)
    np.testing.assert_allclose(z1, z0, rtol=1e-9, atol=1e-9)
