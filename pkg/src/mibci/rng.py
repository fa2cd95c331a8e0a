"""Portable pseudo-random numbers.

Every stochastic step in the package (weight init, dropout masks, split
shuffles, epoch shuffles) draws from :class:`Rng` so that a seed reproduces a
run bit-for-bit on any platform.

Algorithm
---------
The generator keeps ``LANES`` independent xorshift64* states (Vigna 2014,
shifts 12/25/27, multiplier ``0x2545F4914F6CDD1D``). Lane ``i`` is seeded with
the ``i``-th output of SplitMix64 started at ``seed``; a zero state is
replaced by ``0x9E3779B97F4A7C15``. A request for ``n`` 64-bit words steps all
lanes ``ceil(n / LANES)`` times and returns the words in step-major, lane-minor
order, truncated to ``n``. Unused words of the final step are discarded.

Derived draws:

* uniform in (0, 1]:   ``((w >> 11) + 1) * 2**-53``
* standard normal:     Box-Muller on consecutive uniform pairs ``(u1, u2)``,
                       ``sqrt(-2 ln u1) * cos(2 pi u2)`` then ``... sin(...)``
* permutation of n:    stable argsort of ``n`` fresh 64-bit words
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
LANES = 64
_MULT = np.uint64(0x2545F4914F6CDD1D)
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> tuple[int, int]:
    """One SplitMix64 step. Returns ``(new_state, output)``."""
    state = (state + _GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def derive_seed(*parts: int) -> int:
    """Mix integers into one 64-bit seed (order-sensitive)."""
    state = 0
    for p in parts:
        state, out = splitmix64((state ^ (int(p) & MASK64)) & MASK64)
        state = out
    return state


class Rng:
    def __init__(self, seed: int):
        state = int(seed) & MASK64
        lanes = []
        for _ in range(LANES):
            state, out = splitmix64(state)
            lanes.append(out or _GOLDEN)
        self._state = np.array(lanes, dtype=np.uint64)

    def next_u64(self, n: int) -> np.ndarray:
        n = int(n)
        steps = -(-n // LANES)
        out = np.empty((steps, LANES), dtype=np.uint64)
        x = self._state
        for i in range(steps):
            x ^= x >> np.uint64(12)
            x ^= x << np.uint64(25)
            x ^= x >> np.uint64(27)
            out[i] = x * _MULT
        return out.reshape(-1)[:n]

    def uniform(self, n: int) -> np.ndarray:
        w = self.next_u64(n)
        return ((w >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * 2.0**-53

    def standard_normal(self, n: int) -> np.ndarray:
        m = -(-n // 2)
        u = self.uniform(2 * m).reshape(m, 2)
        r = np.sqrt(-2.0 * np.log(u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.empty((m, 2))
        z[:, 0] = r * np.cos(theta)
        z[:, 1] = r * np.sin(theta)
        return z.reshape(-1)[:n]

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.next_u64(n), kind="stable")
