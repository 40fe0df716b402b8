"""Deterministic randomness: every draw in the package flows from one 64-bit seed.

Streams are split with the counter-based Philox bit generator. A stream is
addressed by (seed, domain, index) and may additionally position the Philox
counter, so per-token streams can be reconstructed from scratch — this is what
makes snapshot/resume bit-exact without serializing generator state.
"""

from __future__ import annotations

import numpy as np

# Stream domains. Keep values stable: they are part of the reproducibility
# contract (changing one changes every seeded artifact downstream).
DOMAIN_STREAM = 1      # token stream generation
DOMAIN_TOKEN = 2       # per-token update coins inside the streaming state
DOMAIN_TRIAL = 3       # repeated-trial statistical tests
DOMAIN_POLICY = 4      # compression policies (none draw today; reserved)

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(x: int) -> int:
    """One round of splitmix64; the standard 64-bit avalanche mix."""
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(seed: int, *path: int) -> int:
    """Fold integers into a fresh 64-bit subseed (stable, order-sensitive)."""
    acc = seed & _MASK64
    for part in path:
        acc = _splitmix64(acc ^ (part & _MASK64))
    return acc


def stream(seed: int, domain: int, index: int = 0, counter: int = 0) -> np.random.Generator:
    """Return the Generator for stream (seed, domain, index) at the given counter.

    Identical arguments give bit-identical streams. Distinct (domain, index)
    pairs give statistically independent streams; `counter` jumps within one
    stream (used for per-token substreams addressed by token position).
    """
    if not 0 <= index < (1 << 48):
        raise ValueError("stream index out of range")
    key = np.array([seed & _MASK64, ((domain & 0xFFFF) << 48) | index], dtype=np.uint64)
    ctr = np.array([counter & _MASK64, (counter >> 64) & _MASK64, 0, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=ctr, key=key))
