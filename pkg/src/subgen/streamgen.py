"""Deterministic synthetic token streams with controllable key geometry.

Keys are planted around m well-separated cluster centers (round-robin
assignment, perturbation radius delta/2) so every generated stream is
clusterable by construction: each blob has pairwise diameter at most delta.
Queries are drawn uniformly in the ball of radius r. Value directions are
uniform on the sphere; value norms follow one of three profiles (uniform,
power-law over a hidden permutation, or spiky outliers). An adversarial
generator produces pairwise-far keys as a negative control.

Optional drift rotates all centers rigidly in a fixed random 2-plane by a
per-step angle chosen so no center moves farther than `drift` per step.
Rotation preserves all pairwise center distances, so the separation
guarantee survives drift untouched; the per-token labels then carry a
(blob, segment) pair where segments are time blocks short enough that each
labeled class still has diameter at most delta (perturbation radius shrinks
to delta/4 to leave room for the in-segment center travel of delta/2).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .attn import TokenTriplet
from .rng import DOMAIN_STREAM, stream

_STREAM_MAGIC = b"SBGS"
_STREAM_VERSION = 1

_PROFILES = ("uniform", "powerlaw", "spiky")

_MAX_REJECTION_ROUNDS = 10_000
_ROUNDS_PER_ESCALATION = 2_000


@dataclass(frozen=True)
class StreamSpec:
    """Parameters of one synthetic stream. Deterministic given `seed`.

    center_separation defaults to 4·delta (comfortably above the 2·delta
    threshold at which the online assignment recovers exactly m clusters);
    when delta == 0 it defaults to 1.0 so centers remain distinct.
    """

    n: int
    d: int
    m: int
    delta: float
    r: float
    seed: int
    value_norm_profile: str = "uniform"
    powerlaw_alpha: float = 1.5
    center_separation: Optional[float] = None
    drift: float = 0.0

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be positive")
        if not 1 <= self.m <= self.n:
            raise ValueError("m must satisfy 1 <= m <= n")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if self.r <= 0:
            raise ValueError("r must be positive")
        if self.drift < 0:
            raise ValueError("drift must be nonnegative")
        if self.drift > 0 and self.d < 2:
            raise ValueError("drift requires d >= 2 (rotation needs a plane)")
        if self.value_norm_profile not in _PROFILES:
            raise ValueError(f"value_norm_profile must be one of {_PROFILES}")
        if self.powerlaw_alpha <= 0:
            raise ValueError("powerlaw_alpha must be positive")
        if self.center_separation is None:
            default = 4.0 * self.delta if self.delta > 0 else 1.0
            object.__setattr__(self, "center_separation", default)
        if self.center_separation <= self.delta:
            raise ValueError("center_separation must exceed delta")


@dataclass
class TokenStream:
    """A fully materialized stream: row i of each array belongs to token i.

    labels[i] = (blob, segment): blob is the planted cluster index and
    segment the drift time-block (always 0 without drift); every (blob,
    segment) class has key diameter at most the requested delta.
    """

    queries: np.ndarray  # (n, d)
    keys: np.ndarray  # (n, d)
    values: np.ndarray  # (n, d)
    labels: np.ndarray  # (n, 2) int64
    centers: Optional[np.ndarray] = None  # (m, d) base centers, when known

    def __post_init__(self):
        if not (self.queries.shape == self.keys.shape == self.values.shape):
            raise ValueError("query/key/value arrays must share one shape")
        if self.labels.shape != (len(self.queries), 2):
            raise ValueError("labels must be (n, 2)")

    def __len__(self) -> int:
        return self.queries.shape[0]

    @property
    def d(self) -> int:
        return self.queries.shape[1]

    def triplet(self, i: int) -> TokenTriplet:
        return TokenTriplet(q=self.queries[i], k=self.keys[i], v=self.values[i])

    def __iter__(self) -> Iterator[TokenTriplet]:
        for i in range(len(self)):
            yield self.triplet(i)


def _unit_rows(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return rows / norms


def _ball_points(rng: np.random.Generator, count: int, d: int, radius: float) -> np.ndarray:
    """`count` points uniform in the d-ball of the given radius."""
    dirs = _unit_rows(rng.standard_normal((count, d)))
    radii = radius * rng.random(count) ** (1.0 / d)
    return dirs * radii[:, None]


def _draw_centers(rng: np.random.Generator, m: int, d: int, separation: float) -> tuple[np.ndarray, float]:
    """m points uniform on a sphere, pairwise at least `separation` apart.

    The sphere radius starts at the separation itself and grows 1.25x every
    2,000 failed rejection rounds; 10,000 total failures is an error.
    """
    radius = separation
    for round_idx in range(_MAX_REJECTION_ROUNDS):
        if round_idx > 0 and round_idx % _ROUNDS_PER_ESCALATION == 0:
            radius *= 1.25
        centers = radius * _unit_rows(rng.standard_normal((m, d)))
        if m == 1:
            return centers, radius
        diffs = centers[:, None, :] - centers[None, :, :]
        dist = np.sqrt(np.einsum("ijd,ijd->ij", diffs, diffs))
        if dist[np.triu_indices(m, k=1)].min() >= separation:
            return centers, radius
    raise ValueError(
        f"center separation {separation:g} infeasible for m={m}, d={d} "
        f"after {_MAX_REJECTION_ROUNDS} rejection rounds"
    )


def _rotation_plane(rng: np.random.Generator, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal pair spanning the drift-rotation plane."""
    u1 = rng.standard_normal(d)
    u1 /= np.linalg.norm(u1)
    u2 = rng.standard_normal(d)
    u2 -= (u2 @ u1) * u1
    norm = np.linalg.norm(u2)
    while norm < 1e-12:  # essentially colinear redraw; vanishing probability
        u2 = rng.standard_normal(d)
        u2 -= (u2 @ u1) * u1
        norm = np.linalg.norm(u2)
    return u1, u2 / norm


def _value_norms(rng: np.random.Generator, n: int, spec: StreamSpec) -> np.ndarray:
    if spec.value_norm_profile == "uniform":
        return np.ones(n)
    if spec.value_norm_profile == "powerlaw":
        ranks = np.empty(n)
        ranks[rng.permutation(n)] = np.arange(1, n + 1)
        return ranks ** (-spec.powerlaw_alpha)
    # spiky: a seeded 1% of tokens (at least one) carry norm 10.
    norms = np.ones(n)
    spikes = max(1, round(0.01 * n))
    norms[rng.choice(n, size=spikes, replace=False)] = 10.0
    return norms


def generate(spec: StreamSpec) -> TokenStream:
    """Materialize the stream described by `spec`. Identical per seed."""
    rng = stream(spec.seed, DOMAIN_STREAM, 0)
    n, d, m = spec.n, spec.d, spec.m

    centers, sphere_radius = _draw_centers(rng, m, d, spec.center_separation)
    blob = np.arange(n, dtype=np.int64) % m

    segment = np.zeros(n, dtype=np.int64)
    if spec.drift > 0:
        u1, u2 = _rotation_plane(rng, d)
        theta = spec.drift / sphere_radius  # arc per step <= drift
        angles = theta * np.arange(n)
        alpha = centers @ u1
        beta = centers @ u2
        cos_a = np.cos(angles)
        sin_a = np.sin(angles)
        coef1 = (cos_a - 1.0) * alpha[blob] - sin_a * beta[blob]
        coef2 = sin_a * alpha[blob] + (cos_a - 1.0) * beta[blob]
        token_centers = centers[blob] + coef1[:, None] * u1 + coef2[:, None] * u2
        # Segment length keeps in-segment center travel under delta/2, so a
        # delta/4 perturbation keeps each (blob, segment) diameter <= delta.
        steps = max(1, int(spec.delta / (2.0 * spec.drift))) if spec.delta > 0 else 1
        segment = np.arange(n, dtype=np.int64) // steps
        pert_radius = spec.delta / 4.0
    else:
        token_centers = centers[blob]
        pert_radius = spec.delta / 2.0

    keys = token_centers + _ball_points(rng, n, d, pert_radius)
    queries = _ball_points(rng, n, d, spec.r)
    values = _unit_rows(rng.standard_normal((n, d))) * _value_norms(rng, n, spec)[:, None]
    labels = np.stack([blob, segment], axis=1)
    return TokenStream(queries=queries, keys=keys, values=values, labels=labels, centers=centers)


def verify_clusterable(keys, m: int, delta: float) -> bool:
    """One-sided clusterability certificate via online threshold assignment.

    Runs the same greedy rule as the streaming normalizer (join the nearest
    existing center when within delta, else open a new one) and reports
    whether at most m centers were opened. True certifies the keys split
    into <= m classes of radius <= delta around actual keys (hence diameter
    <= 2·delta); False proves nothing, since the exact minimal-m decision
    amounts to NP-hard ball covering.
    """
    keys = np.asarray(keys, dtype=float)
    if keys.ndim != 2:
        raise ValueError("keys must be a 2-d array-like")
    if m < 1:
        return keys.shape[0] == 0
    centers = np.empty_like(keys[: min(m + 1, keys.shape[0])])
    opened = 0
    thresh2 = delta * delta
    for k in keys:
        if opened > 0:
            diffs = centers[:opened] - k
            if np.einsum("md,md->m", diffs, diffs).min() <= thresh2:
                continue
        if opened == m:
            return False
        centers[opened] = k
        opened += 1
    return True


def generate_adversarial(n: int, d: int, seed: int) -> TokenStream:
    """Pairwise-far keys: every key opens its own cluster (memory grows
    linearly) — the negative control for clusterability assumptions.

    Keys are scaled axis-aligned lattice points 10·(i+1)·e_{i mod d} with
    pairwise distances at least 10, far beyond any admission radius the
    accuracy regime allows. Queries are uniform in the unit ball and values
    uniform on the unit sphere.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    rng = stream(seed, DOMAIN_STREAM, 1)
    keys = np.zeros((n, d))
    idx = np.arange(n)
    keys[idx, idx % d] = 10.0 * (idx + 1)
    queries = _ball_points(rng, n, d, 1.0)
    values = _unit_rows(rng.standard_normal((n, d)))
    labels = np.stack([idx, np.zeros(n, dtype=np.int64)], axis=1)
    return TokenStream(queries=queries, keys=keys, values=values, labels=labels)


# -- stream serialization --------------------------------------------------
#
# Little-endian layout, version 1 (mirrors the snapshot conventions):
#   magic "SBGS" | u32 version | u64 n, d
#   queries n*d f64 | keys n*d f64 | values n*d f64 | labels n*2 i64


def write_stream(token_stream: TokenStream, path) -> None:
    n, d = len(token_stream), token_stream.d
    header = _STREAM_MAGIC + struct.pack("<I2Q", _STREAM_VERSION, n, d)
    with open(path, "wb") as fh:
        fh.write(header)
        for arr, dtype in (
            (token_stream.queries, "<f8"),
            (token_stream.keys, "<f8"),
            (token_stream.values, "<f8"),
            (token_stream.labels, "<i8"),
        ):
            fh.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def read_stream(path) -> TokenStream:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _STREAM_MAGIC:
        raise ValueError("bad stream magic")
    version, n, d = struct.unpack_from("<I2Q", blob, 4)
    if version != _STREAM_VERSION:
        raise ValueError(f"unsupported stream version {version}")
    offset = 4 + struct.calcsize("<I2Q")

    def take(shape, dtype):
        nonlocal offset
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
        offset += count * arr.itemsize
        return arr.reshape(shape).copy()

    return TokenStream(
        queries=take((n, d), "<f8"),
        keys=take((n, d), "<f8"),
        values=take((n, d), "<f8"),
        labels=take((n, 2), "<i8").astype(np.int64),
    )
