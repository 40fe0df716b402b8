"""Cache compression policies behind one interface.

Every policy picks a subset of token positions to retain and answers
queries with exact attention over that subset:

* subgen_offline — keep the most recent window plus greedy k-center
  representatives of everything older;
* sink — keep the first few and the most recent few positions;
* h2o_lite — sequentially accumulate each query's exact attention weights
  over the currently retained tokens and evict the lowest-scoring
  non-recent token whenever the budget is exceeded (scores of evicted
  tokens are dropped);
* exact — keep everything.

Indices are 0-based positions into the original stream throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .attn import AttnVector, ExactCache, exact_attention

POLICY_KINDS = ("subgen_offline", "sink", "h2o_lite", "exact")


@dataclass(frozen=True)
class PolicyConfig:
    """Which policy to run and how to split its retention budget.

    budget caps retained tokens (ignored by `exact`). recent_r is the
    sliding-window length, k_centers the k-center count (subgen_offline),
    sink_prefix the protected-prefix length (sink).
    """

    kind: str
    budget: int
    recent_r: int = 0
    k_centers: int = 0
    sink_prefix: int = 0

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"kind must be one of {POLICY_KINDS}")
        if self.budget < 1:
            raise ValueError("budget must be positive")
        for name in ("recent_r", "k_centers", "sink_prefix"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.kind == "subgen_offline" and self.recent_r + self.k_centers > self.budget:
            raise ValueError("recent_r + k_centers must not exceed budget")
        if self.kind == "sink" and self.sink_prefix + self.recent_r > self.budget:
            raise ValueError("sink_prefix + recent_r must not exceed budget")
        if self.kind == "h2o_lite" and self.recent_r > self.budget:
            raise ValueError("recent_r must not exceed budget")


@dataclass
class RetainedCache:
    """The surviving subset of a stream: token positions plus their vectors.

    Positions are 1-based (token 1 is the first of the stream), matching how
    steps are counted everywhere else; array indices stay 0-based.
    """

    kept_indices: np.ndarray  # sorted original 1-based positions, int64
    keys: np.ndarray
    values: np.ndarray
    budget: int
    _cache: Optional[ExactCache] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.kept_indices = np.asarray(self.kept_indices, dtype=np.int64)
        if self.kept_indices.ndim != 1:
            raise ValueError("kept_indices must be 1-d")
        if len(self.kept_indices) > self.budget:
            raise ValueError("more retained tokens than the budget allows")
        if len(self.kept_indices) > 0:
            if self.kept_indices[0] < 1 or np.any(np.diff(self.kept_indices) <= 0):
                raise ValueError("kept_indices must be strictly increasing positions >= 1")
        if self.keys.shape != self.values.shape or self.keys.shape[0] != len(self.kept_indices):
            raise ValueError("keys/values must have one row per kept index")

    def __len__(self) -> int:
        return len(self.kept_indices)

    def as_cache(self) -> ExactCache:
        if self._cache is None:
            self._cache = ExactCache.from_arrays(self.keys, self.values)
        return self._cache


def greedy_k_center(points, k: int) -> list[int]:
    """Indices of k centers by farthest-point traversal (2-approximation).

    The first center is index 0; each next center is the point farthest
    from its nearest chosen center, ties resolving to the lowest index.
    Always returns k distinct indices, duplicates in `points` included.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValueError("points must be a nonempty 2-d array-like")
    if not 1 <= k <= pts.shape[0]:
        raise ValueError("k must satisfy 1 <= k <= len(points)")
    chosen = [0]
    diffs = pts - pts[0]
    dist2 = np.einsum("nd,nd->n", diffs, diffs)
    dist2[0] = -1.0  # chosen points drop out of the argmax
    for _ in range(k - 1):
        i = int(np.argmax(dist2))
        chosen.append(i)
        diffs = pts - pts[i]
        dist2 = np.minimum(dist2, np.einsum("nd,nd->n", diffs, diffs))
        dist2[i] = -1.0
    return chosen


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


def _h2o_lite_indices(
    keys: np.ndarray, queries: np.ndarray, budget: int, recent_r: int
) -> np.ndarray:
    """Sequential heavy-hitter simulation; returns kept positions, sorted.

    Each step appends the new token, adds the step query's exact softmax
    weights (over retained tokens only) to the running scores, and — when
    over budget — evicts the minimum-score token outside the recent window,
    breaking ties toward the lowest position.
    """
    n = keys.shape[0]
    retained = np.empty(budget + 1, dtype=np.int64)
    scores = np.zeros(n)
    size = 0
    for i in range(n):
        retained[size] = i
        size += 1
        live = retained[:size]
        scores[live] += _softmax(keys[live] @ queries[i])
        if size > budget:
            candidates = np.nonzero(live <= i - recent_r)[0]
            victim = candidates[np.argmin(scores[live[candidates]])]
            retained[victim : size - 1] = retained[victim + 1 : size]
            size -= 1
    return retained[:size].copy()


def compress(
    cache: ExactCache, cfg: PolicyConfig, queries: Optional[np.ndarray] = None
) -> RetainedCache:
    """Apply one policy to a full cache; identity when nothing must go.

    h2o_lite needs the per-step queries (row i = the query issued at step
    i) because its scores are accumulated attention weights.
    """
    n = len(cache)
    if n == 0:
        raise ValueError("no tokens")
    keys, values = cache.arrays()
    if cfg.kind == "exact" or n <= cfg.budget:
        kept = np.arange(n, dtype=np.int64)
        budget = max(cfg.budget, n) if cfg.kind == "exact" else cfg.budget
        return RetainedCache(kept + 1, keys.copy(), values.copy(), budget)

    if cfg.kind == "sink":
        kept = np.concatenate(
            [np.arange(cfg.sink_prefix), np.arange(n - cfg.recent_r, n)]
        ).astype(np.int64)
    elif cfg.kind == "subgen_offline":
        old = n - cfg.recent_r
        picked = greedy_k_center(keys[:old], cfg.k_centers) if cfg.k_centers > 0 else []
        kept = np.sort(np.concatenate([np.asarray(picked, dtype=np.int64), np.arange(old, n)]))
    else:  # h2o_lite
        if queries is None:
            raise ValueError("h2o_lite needs the per-step query history")
        queries = np.asarray(queries, dtype=float)
        if queries.shape != keys.shape:
            raise ValueError("queries must be one row per token")
        kept = _h2o_lite_indices(keys, queries, cfg.budget, cfg.recent_r)
    return RetainedCache(kept + 1, keys[kept], values[kept], cfg.budget)


def query_compressed(rc: RetainedCache, q) -> AttnVector:
    """Exact attention over the retained subset."""
    return exact_attention(rc.as_cache(), q)
