"""Deterministic counter-based random streams.

Every piece of experiment randomness (chain noise, dataset generation,
training batches, mask degradation) flows through an `Rng` so a run can be
reproduced from the single seed recorded in its manifest. Streams are
derived, never shared: `child(label, index)` hashes the parent key together
with the label into a fresh key, so ensemble members and sweep points draw
independently and can execute concurrently without locking.

The generator is stateless per draw: output ``i`` of a stream is
``splitmix64(key + (i + 1) * GOLDEN)``, i.e. a pure function of (key,
counter). Normal variates use the Box-Muller transform on counter-indexed
uniforms instead of a platform generator; it consumes exactly two uniforms
per pair of normals, which keeps the counter advance deterministic.
Reproducibility is guaranteed within one build only; cross-implementation
bit compatibility is a non-goal.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_2 = np.uint64(0x94D049BB133111EB)
_U64_MASK = 0xFFFFFFFFFFFFFFFF


def _splitmix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer: bijective avalanche mix of uint64 words."""
    x = (x ^ (x >> np.uint64(30))) * _MIX_1
    x = (x ^ (x >> np.uint64(27))) * _MIX_2
    return x ^ (x >> np.uint64(31))


class Rng:
    """Seedable stream of uniforms / normals with derived child streams."""

    def __init__(self, seed: int):
        self._key = np.uint64(seed & _U64_MASK)
        self._counter = 0

    @property
    def key(self) -> int:
        return int(self._key)

    def child(self, label: str, index: int = 0) -> "Rng":
        """Derive an independent stream from (key, label, index).

        Uses a keyed blake2b digest, so distinct labels or indices give
        unrelated keys regardless of how much the parent has drawn.
        """
        h = hashlib.blake2b(digest_size=8)
        h.update(int(self._key).to_bytes(8, "little"))
        raw = label.encode("utf-8")
        h.update(len(raw).to_bytes(2, "little"))
        h.update(raw)
        h.update(int(index).to_bytes(8, "little", signed=True))
        return Rng(int.from_bytes(h.digest(), "little"))

    def _raw(self, n: int) -> np.ndarray:
        counters = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        return _splitmix64(counters * _GOLDEN + self._key)

    def uniform(self, shape=None) -> np.ndarray | float:
        """Uniforms in [0, 1) with 53-bit resolution."""
        n = 1 if shape is None else int(np.prod(shape))
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        if shape is None:
            return float(u[0])
        return u.reshape(shape)

    def integers(self, low: int, high: int, size: int | None = None):
        """Integers in [low, high) by 64-bit reduction.

        Modulo bias is below range/2^64, irrelevant for the small ranges
        used here (step indices, pixel choices).
        """
        if high <= low:
            raise ValueError(f"empty integer range [{low}, {high})")
        n = 1 if size is None else size
        vals = low + (self._raw(n) % np.uint64(high - low)).astype(np.int64)
        if size is None:
            return int(vals[0])
        return vals

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")

    def standard_normal(self, shape) -> np.ndarray:
        """I.i.d. standard normals via the Box-Muller transform."""
        n = int(np.prod(shape))
        pairs = (n + 1) // 2
        raw = self._raw(2 * pairs)
        # u1 in (0, 1] so the log is finite; u2 in [0, 1).
        u1 = ((raw[:pairs] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (raw[pairs:] >> np.uint64(11)).astype(np.float64) * 2.0**-53
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = (2.0 * math.pi) * u2
        z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])
        return z[:n].reshape(shape)

    def standard_normal_grid(self, height: int, width: int) -> np.ndarray:
        if height < 1 or width < 1:
            raise ValueError(f"invalid grid dimensions {height}x{width}")
        return self.standard_normal((height, width))
