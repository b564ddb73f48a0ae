"""Counter-based random streams (SplitMix64 + Box-Muller).

Draw ``i`` of a stream is a pure function of ``(seed, i)``, so results are
identical across platforms, processes and batch layouts.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def splitmix64(seed: int, counters) -> np.ndarray:
    """Raw 64-bit outputs for the given draw indices of stream ``seed``."""
    key = _mix(np.array([seed & _MASK64], dtype=np.uint64))[0]
    c = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix(key + (c + np.uint64(1)) * _GOLDEN)


class RngStream:
    """A seeded stream with an explicit draw counter."""

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & _MASK64
        self.counter = int(counter)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, counter={self.counter})"

    def raw(self, n: int) -> np.ndarray:
        out = splitmix64(self.seed, np.arange(self.counter, self.counter + n, dtype=np.uint64))
        self.counter += n
        return out

    def uniform(self, shape=()) -> np.ndarray:
        """Uniform draws on [0, 1) with 53-bit resolution."""
        n = int(np.prod(shape, dtype=int))
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return u.reshape(shape) if shape != () else u[0]

    def normal(self, shape=()) -> np.ndarray:
        """Standard normal draws; consumes two raw draws per pair."""
        n = int(np.prod(shape, dtype=int))
        pairs = (n + 1) // 2
        bits = self.raw(2 * pairs) >> np.uint64(11)
        u1 = (bits[0::2].astype(np.float64) + 1.0) * 2.0**-53  # (0, 1]
        u2 = bits[1::2].astype(np.float64) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        z = z[:n]
        return z.reshape(shape) if shape != () else z[0]

    def multivariate_normal(self, cov: np.ndarray, size: int) -> np.ndarray:
        """``size`` draws of N(0, cov) as rows, via a PSD square root."""
        from .matcore import sqrtm_psd

        root = sqrtm_psd(cov)
        g = self.normal((size, cov.shape[0]))
        return g @ root.T
