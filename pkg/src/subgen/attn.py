"""Exact single-query attention and the error metric used by every benchmark.

This module is the ground truth the approximate paths are judged against:
a dense softmax-weighted value average over the full prefix, plus the
normalized error  ‖z − attn‖₂ / (‖softmax(Kq)‖₂ · ‖V‖_op).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Attention outputs are plain float64 vectors; the alias documents intent.
AttnVector = np.ndarray

_OP_NORM_TOL = 1e-8
_OP_NORM_MAX_ITERS = 10_000


def _as_vector(x, d: int | None = None) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError("expected a 1-d vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite entries")
    if d is not None and v.shape[0] != d:
        raise ValueError(f"dimension mismatch: expected {d}, got {v.shape[0]}")
    return v


@dataclass(frozen=True)
class TokenTriplet:
    """One decoding step's (query, key, value), all of one dimension d."""

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        q = _as_vector(self.q)
        k = _as_vector(self.k, q.shape[0])
        v = _as_vector(self.v, q.shape[0])
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "v", v)

    @property
    def d(self) -> int:
        return self.q.shape[0]


class ExactCache:
    """Uncompressed KV cache: all keys and values seen so far, in order."""

    def __init__(self, d: int):
        if d < 1:
            raise ValueError("d must be positive")
        self.d = d
        self._keys: list[np.ndarray] = []
        self._values: list[np.ndarray] = []
        self._stacked: tuple[np.ndarray, np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self._keys)

    def append(self, k, v) -> None:
        self._keys.append(_as_vector(k, self.d))
        self._values.append(_as_vector(v, self.d))
        self._stacked = None

    @classmethod
    def from_arrays(cls, keys: np.ndarray, values: np.ndarray) -> "ExactCache":
        keys = np.asarray(keys, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if keys.ndim != 2 or keys.shape != values.shape:
            raise ValueError("keys/values must be matching (n, d) arrays")
        cache = cls(keys.shape[1])
        cache._keys = [row for row in keys]
        cache._values = [row for row in values]
        return cache

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked (n, d) key and value matrices (cached between appends)."""
        if len(self._keys) == 0:
            raise ValueError("no tokens")
        if self._stacked is None:
            self._stacked = (np.vstack(self._keys), np.vstack(self._values))
        return self._stacked


def softmax_vector(cache: ExactCache, q) -> np.ndarray:
    """Softmax weights of q against every cached key (max-shifted, stable)."""
    keys, _ = cache.arrays()
    q = _as_vector(q, cache.d)
    logits = keys @ q
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


def exact_attention(cache: ExactCache, q) -> AttnVector:
    """Dense attention output: softmax(Kq)ᵀ V over the full cache."""
    _, values = cache.arrays()
    return softmax_vector(cache, q) @ values


def _power_iterate(gram: np.ndarray, x: np.ndarray, floor: float) -> float:
    """Rayleigh-quotient estimate of gram's top eigenvalue from start x."""
    lam_prev = -np.inf
    stable = 0
    for _ in range(_OP_NORM_MAX_ITERS):
        y = gram @ x
        norm_y = float(np.linalg.norm(y))
        if norm_y <= floor:
            return 0.0  # start vector is (numerically) in the null space
        x = y / norm_y
        lam = float(x @ (gram @ x))
        if lam_prev > 0 and abs(lam - lam_prev) <= _OP_NORM_TOL * lam:
            stable += 1
            if stable >= 3:
                return lam
        else:
            stable = 0
        lam_prev = lam
    return max(lam_prev, 0.0)


def operator_norm(values: np.ndarray) -> float:
    """Largest singular value of the value matrix.

    Power iteration on VᵀV from the normalized all-ones vector, relative
    tolerance 1e-8, capped at 10,000 iterations. The all-ones start can sit in
    a non-top eigenspace (e.g. V = [[1, -1]]), so the estimate is maximized
    over deterministic basis-vector restarts as well; the basis spans the
    space, so at least one start sees the top eigenvector.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("expected an (n, d) matrix")
    d = values.shape[1]
    gram = values.T @ values
    scale = float(np.abs(gram).max())
    if scale == 0.0:
        return 0.0
    floor = scale * 1e-300

    best = _power_iterate(gram, np.full(d, 1.0 / np.sqrt(d)), floor)
    for j in range(d):
        best = max(best, _power_iterate(gram, np.eye(d)[j], floor))
    return float(np.sqrt(best))


def error_denominator(cache: ExactCache, q) -> float:
    """The error metric's normalizer: ‖softmax(Kq)‖₂ · ‖V‖_op.

    Exposed separately so callers comparing several answers to one
    (cache, q) pair pay for the operator norm once.
    """
    _, values = cache.arrays()
    return float(np.linalg.norm(softmax_vector(cache, q))) * operator_norm(values)


def normalized_error(raw_error: float, denominator: float) -> float:
    """raw ‖z − attn‖₂ scaled by a precomputed denominator; 0/0 counts as 0."""
    if denominator == 0.0:
        return 0.0 if raw_error == 0.0 else float("inf")
    return raw_error / denominator


def spectral_error(z, cache: ExactCache, q) -> float:
    """Normalized error of z against exact attention for (cache, q).

    ‖z − attn‖₂ / (‖softmax(Kq)‖₂ · ‖V‖_op). A zero denominator (possible
    only when every cached value is the zero vector) returns 0.0 for an exact
    z and +inf otherwise.
    """
    z = _as_vector(z, cache.d)
    reference = exact_attention(cache, q)
    err = float(np.linalg.norm(z - reference))
    return normalized_error(err, error_denominator(cache, q))
