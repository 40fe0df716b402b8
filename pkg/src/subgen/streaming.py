"""Streaming attention with sublinear state.

Two independent randomized summaries are maintained per token:

* a cluster normalizer — keys are greedily assigned to the nearest existing
  cluster center within the admission radius delta (new clusters otherwise);
  each cluster keeps an exact member count and a fixed-size reservoir of
  uniform member samples, which together estimate the softmax partition
  function for any query;
* a norm-weighted value sampler — a fixed number of (key, value) slots where
  each incoming pair independently overwrites every slot with probability
  ‖v‖² / (mass so far + ‖v‖²), keeping slots i.i.d. with inclusion
  probability proportional to ‖v‖²; the slots estimate softmax-weighted
  value sums.

A query combines the two estimates: z from the sampler, the partition
estimate tau from the normalizer, output z / tau. Both estimates share one
max-logit shift so no exp overflows.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .attn import AttnVector, TokenTriplet
from .rng import DOMAIN_TOKEN, stream

_SNAPSHOT_MAGIC = b"SBGN"
_SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class AccuracyParams:
    """Target accuracy regime from which summary sizes are derived.

    epsilon: normalized error target in (0, 1).
    r: bound on query two-norms.
    delta: cluster admission radius.
    n_max: expected maximum stream length.
    c_t / c_s: leading constants for the reservoir / sampler size formulas
    (the theory gives only asymptotics; these are the tuning knobs).
    """

    epsilon: float
    r: float
    delta: float
    n_max: float
    c_t: float = 1.0
    c_s: float = 4.0

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must be in (0, 1]")
        for name in ("r", "delta", "c_t", "c_s"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.n_max < 1:
            raise ValueError("n_max must be at least 1")


def derive_sizes(params: AccuracyParams, d: int) -> tuple[int, int]:
    """Reservoir size t and sampler size s for the given accuracy regime.

    t = ceil(c_t · eps^-2 · e^(2·delta·r) · ln(max(n_max, 2)))
    s = ceil(c_s · eps^-2 · d)

    t is capped at ceil(n_max) and s at max(ceil(n_max), d) — no point
    sampling far beyond the stream, but the sampler never drops below the
    dimension it has to reconstruct.
    """
    if d < 1:
        raise ValueError("d must be positive")
    if params.delta * params.r > 300:
        raise ValueError(
            "clusterability regime violated: delta * r = "
            f"{params.delta * params.r:g} makes e^(2 delta r) overflow"
        )
    inv_eps2 = params.epsilon**-2
    t_raw = math.ceil(
        params.c_t * inv_eps2 * math.exp(2.0 * params.delta * params.r) * math.log(max(params.n_max, 2.0))
    )
    s_raw = math.ceil(params.c_s * inv_eps2 * d)
    cap = max(math.ceil(params.n_max), 1)
    return max(min(t_raw, cap), 1), max(min(s_raw, max(cap, d)), 1)


@dataclass(frozen=True)
class ClusterSummary:
    """Read-only view of one cluster: center, member count, member samples."""

    center: np.ndarray
    count: int
    reservoir: np.ndarray  # (t, d), i.i.d. uniform samples of the members


class NormalizerDS:
    """Online cluster summaries used to estimate softmax partition functions.

    Centers are frozen at admission: never merged, moved, or evicted.
    Assignment scans all centers (argmin distance, lowest index on ties) and
    admits when the distance is at most delta.
    """

    def __init__(self, d: int, t: int, delta: float):
        if d < 1 or t < 1:
            raise ValueError("d and t must be positive")
        if delta <= 0:
            raise ValueError("delta must be positive")
        self.d = d
        self.t = t
        self.delta = delta
        self.m = 0
        cap = 8
        self._centers = np.zeros((cap, d))
        self._counts = np.zeros(cap)
        self._reservoirs = np.zeros((cap, t, d))

    @property
    def centers(self) -> np.ndarray:
        return self._centers[: self.m]

    @property
    def counts(self) -> np.ndarray:
        return self._counts[: self.m]

    @property
    def reservoirs(self) -> np.ndarray:
        return self._reservoirs[: self.m]

    def cluster(self, i: int) -> ClusterSummary:
        if not 0 <= i < self.m:
            raise IndexError("no such cluster")
        return ClusterSummary(
            center=self._centers[i].copy(),
            count=int(self._counts[i]),
            reservoir=self._reservoirs[i].copy(),
        )

    def _grow(self) -> None:
        cap = self._centers.shape[0] * 2
        for name in ("_centers", "_counts", "_reservoirs"):
            old = getattr(self, name)
            new = np.zeros((cap,) + old.shape[1:])
            new[: old.shape[0]] = old
            setattr(self, name, new)

    def update(self, k: np.ndarray, rng: np.random.Generator) -> int:
        """Assign key k to a cluster (or admit a new one); returns its index."""
        if self.m > 0:
            diffs = self._centers[: self.m] - k
            dist2 = np.einsum("md,md->m", diffs, diffs)
            i = int(np.argmin(dist2))  # ties resolve to the lowest index
            if dist2[i] <= self.delta * self.delta:
                self._counts[i] += 1
                # Each reservoir slot is independently replaced with
                # probability 1 / (post-increment count).
                replace = rng.random(self.t) < 1.0 / self._counts[i]
                self._reservoirs[i, replace] = k
                return i
        if self.m == self._centers.shape[0]:
            self._grow()
        i = self.m
        self._centers[i] = k
        self._counts[i] = 1.0
        self._reservoirs[i, :] = k  # t copies: uniform samples of {k}
        self.m += 1
        return i


class ValueSampler:
    """Fixed-size i.i.d. sample of (key, value) pairs, norm-weighted.

    Slot j holds pair i with probability ‖v_i‖² / Σ_l ‖v_l‖², maintained by
    independently overwriting each slot with probability ‖v‖² / (mu + ‖v‖²)
    on arrival, where mu is the running mass Σ‖v‖² over tokens BEFORE this
    one — update() reads self.mu but leaves adding ‖v‖² to the caller.
    Zero-norm values never enter and draw no randomness (0/0 counts as
    probability 0). Slots are empty only while mu == 0.
    """

    def __init__(self, d: int, s: int):
        if d < 1 or s < 1:
            raise ValueError("d and s must be positive")
        self.d = d
        self.s = s
        self.mu = 0.0
        self.filled = False
        self.keys = np.zeros((s, d))
        self.values = np.zeros((s, d))
        self.vnorm2 = np.zeros(s)

    def update(self, k: np.ndarray, v: np.ndarray, rng: np.random.Generator) -> float:
        """Offer (k, v) to every slot; returns ‖v‖² for the caller's mu update."""
        nv2 = float(v @ v)
        if nv2 == 0.0:
            return 0.0
        replace = rng.random(self.s) < nv2 / (self.mu + nv2)
        self.keys[replace] = k
        self.values[replace] = v
        self.vnorm2[replace] = nv2
        self.filled = True  # mu == 0 forces p == 1, so all slots are filled
        return nv2


@dataclass(frozen=True)
class MemoryFootprint:
    vectors_stored: int
    scalars_stored: int
    bytes_estimate: int


class SubGenState:
    """Full streaming state: normalizer + sampler + token counter + seed.

    All randomness is derived from (seed, token index) through counter-based
    streams, so identical seeds replay bit-identically and a state restored
    from a snapshot resumes exactly where it left off. One writer may mutate
    via process_token; query() is read-only and safe to call concurrently
    with other queries.
    """

    def __init__(self, d: int, t: int, s: int, delta: float, seed: int):
        self.d = d
        self.t = t
        self.s = s
        self.delta = float(delta)
        self.seed = int(seed)
        self.n = 0
        self.normalizer = NormalizerDS(d, t, delta)
        self.sampler = ValueSampler(d, s)

    @property
    def mu(self) -> float:
        """Running Σ‖v‖² over all processed tokens (lives on the sampler)."""
        return self.sampler.mu

    @classmethod
    def from_params(cls, params: AccuracyParams, d: int, seed: int) -> "SubGenState":
        t, s = derive_sizes(params, d)
        return cls(d, t, s, params.delta, seed)

    @property
    def m_prime(self) -> int:
        """Number of clusters opened so far."""
        return self.normalizer.m

    def ingest(self, k: np.ndarray, v: np.ndarray) -> None:
        """Absorb one token without answering a query. Hot path: no validation.

        Update order per token: normalizer with k, sampler with (k, v)
        against the pre-token mu, then mu grows by ‖v‖².
        """
        rng = stream(self.seed, DOMAIN_TOKEN, 0, counter=self.n)
        self.normalizer.update(k, rng)
        self.sampler.mu += self.sampler.update(k, v, rng)
        self.n += 1

    def process(self, q: np.ndarray, k: np.ndarray, v: np.ndarray) -> AttnVector:
        """Ingest one token, then answer its query (covers all tokens so far)."""
        self.ingest(k, v)
        return self.query(q)

    def process_token(self, token: TokenTriplet) -> AttnVector:
        if token.d != self.d:
            raise ValueError(f"dimension mismatch: expected {self.d}, got {token.d}")
        return self.process(token.q, token.k, token.v)

    def query(self, q: np.ndarray, stabilize: bool = True) -> AttnVector:
        """Estimate attention over everything ingested so far for query q.

        z = Σ_slots mu/(s·‖v_slot‖²) · e^⟨q,k_slot⟩ · v_slot
        tau = Σ_clusters (count/t) · Σ_reservoir e^⟨q,k⟩
        output z / tau, every exponent shifted by the shared max logit c
        (a common shift cancels in the ratio). stabilize=False keeps raw
        exponents; it exists so tests can check the shift changes nothing.
        """
        nz = self.normalizer
        if nz.m == 0:
            raise ValueError("empty stream")
        res_logits = nz.reservoirs.reshape(nz.m * self.t, self.d) @ q
        sampler = self.sampler
        if sampler.filled:
            samp_logits = sampler.keys @ q
            c = max(float(res_logits.max()), float(samp_logits.max())) if stabilize else 0.0
            weights = (self.mu / (self.s * sampler.vnorm2)) * np.exp(samp_logits - c)
            z = weights @ sampler.values
        else:
            c = float(res_logits.max()) if stabilize else 0.0
            z = np.zeros(self.d)
        per_cluster = np.exp(res_logits - c).reshape(nz.m, self.t).sum(axis=1)
        # Dividing by t after the dot product keeps the n-identical-tokens
        # case exact: (n·t)/t == n in floating point, (n/t)·t need not be.
        tau = float(nz.counts @ per_cluster) / self.t
        if not math.isfinite(tau) or tau <= 0.0:
            raise FloatingPointError("partition estimate under/overflowed")
        return z / tau

    def memory_footprint(self) -> MemoryFootprint:
        """Vector/scalar/byte accounting for the retained state.

        vectors_stored = m'·(t+1) + 2s (centers, reservoirs, sampler pairs);
        scalars_stored = m' + 2 (cluster counts, mu, n);
        bytes_estimate  = vectors·d·8 + scalars·8.
        """
        m = self.normalizer.m
        vectors = m * (self.t + 1) + 2 * self.s
        scalars = m + 2
        return MemoryFootprint(
            vectors_stored=vectors,
            scalars_stored=scalars,
            bytes_estimate=vectors * self.d * 8 + scalars * 8,
        )

    # -- snapshot serialization ------------------------------------------------
    #
    # Little-endian layout, version 1:
    #   magic "SBGN" | u32 version | u64 d, t, s, m', n | f64 delta, mu
    #   centers   m'*d     f64
    #   counts    m'       f64
    #   reservoirs m'*t*d  f64
    #   sampler   s*2*d    f64   (per slot: key row then value row)
    #
    # The seed is not part of the format; resuming requires the caller to
    # supply the run seed (per-token randomness is reconstructed from it).

    def to_bytes(self) -> bytes:
        nz = self.normalizer
        header = _SNAPSHOT_MAGIC + struct.pack(
            "<I5Q2d", _SNAPSHOT_VERSION, self.d, self.t, self.s, nz.m, self.n, self.delta, self.mu
        )
        pairs = np.stack([self.sampler.keys, self.sampler.values], axis=1)
        body = b"".join(
            np.ascontiguousarray(a, dtype="<f8").tobytes()
            for a in (nz.centers, nz.counts, nz.reservoirs, pairs)
        )
        return header + body

    @classmethod
    def from_bytes(cls, blob: bytes, seed: int) -> "SubGenState":
        if blob[:4] != _SNAPSHOT_MAGIC:
            raise ValueError("bad snapshot magic")
        header = struct.calcsize("<I5Q2d")
        if len(blob) < 4 + header:
            raise ValueError("truncated snapshot header")
        version, d, t, s, m, n, delta, mu = struct.unpack_from("<I5Q2d", blob, 4)
        if version != _SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        offset = 4 + header
        body = m * d + m + m * t * d + 2 * s * d
        if len(blob) != offset + body * 8:
            raise ValueError("truncated snapshot body")

        def take(shape):
            nonlocal offset
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
            offset += count * 8
            return arr.reshape(shape).astype(np.float64)

        state = cls(d, t, s, delta, seed)
        state.n = n
        state.sampler.mu = mu
        nz = state.normalizer
        centers = take((m, d))
        counts = take((m,))
        reservoirs = take((m, t, d))
        pairs = take((s, 2, d))
        cap = max(8, 1 << max(m - 1, 0).bit_length())
        nz._centers = np.zeros((cap, d))
        nz._counts = np.zeros(cap)
        nz._reservoirs = np.zeros((cap, t, d))
        nz._centers[:m] = centers
        nz._counts[:m] = counts
        nz._reservoirs[:m] = reservoirs
        nz.m = m
        sampler = state.sampler
        sampler.keys = np.ascontiguousarray(pairs[:, 0, :])
        sampler.values = np.ascontiguousarray(pairs[:, 1, :])
        sampler.filled = mu > 0.0
        if sampler.filled:
            # Recompute per-slot ‖v‖² exactly as insertion did (row @ row) so
            # a resumed run reproduces query weights bit-for-bit.
            sampler.vnorm2 = np.array([float(row @ row) for row in sampler.values])
        return state

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path, seed: int) -> "SubGenState":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), seed)


# -- free-function views of the per-token operations -------------------------
#
# The methods above are the primary interface; these wrappers expose each
# update as a standalone operation for callers that compose the pieces
# themselves (and for tests that probe one stage in isolation).


def update_softmax_normalizer(ds: NormalizerDS, k: np.ndarray, rng: np.random.Generator) -> NormalizerDS:
    """Route one key into the cluster normalizer; returns the mutated ds."""
    ds.update(k, rng)
    return ds


def update_matrix_product(
    sampler: ValueSampler, k: np.ndarray, v: np.ndarray, rng: np.random.Generator
) -> ValueSampler:
    """Offer one (key, value) pair to the sampler against its current mu.

    The caller remains responsible for adding ‖v‖² to sampler.mu afterwards
    (process_token does this; the probability must use the pre-token mass).
    """
    sampler.update(k, v, rng)
    return sampler


def process_token(state: SubGenState, token: TokenTriplet) -> tuple[SubGenState, AttnVector]:
    z = state.process_token(token)
    return state, z


def query_stream_attn(state: SubGenState, q: np.ndarray, stabilize: bool = True) -> AttnVector:
    return state.query(q, stabilize=stabilize)


def memory_footprint(state: SubGenState) -> MemoryFootprint:
    return state.memory_footprint()
