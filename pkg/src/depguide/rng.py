"""Seeded Gaussian noise with a fixed, documented transform.

Bits come from numpy's Philox-4x64 counter-based generator keyed by the
run seed (plus a stream id in the upper key word). Each pair of 64-bit
outputs (a, b) is mapped to uniforms u = ((a >> 11) + 0.5) / 2**53 and
v = (b >> 11) / 2**53, then to two normals by Box-Muller:

    r = sqrt(-2 log u);  z1 = r cos(2 pi v);  z2 = r sin(2 pi v)

numpy's own normal sampler is avoided because its algorithm is not part of
its compatibility guarantees.
"""
from __future__ import annotations

import numpy as np

_INV_2_53 = 1.0 / 9007199254740992.0
SEED_MAX = 2**64 - 1


class NoiseStream:
    def __init__(self, seed: int, stream: int = 0):
        seed = int(seed)
        if not 0 <= seed <= SEED_MAX:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self.stream = int(stream)
        self._bits = np.random.Philox(key=seed + (self.stream << 64))

    def uniform_pairs(self, n_pairs: int) -> tuple[np.ndarray, np.ndarray]:
        raw = self._bits.random_raw(2 * n_pairs).reshape(n_pairs, 2)
        u = ((raw[:, 0] >> np.uint64(11)).astype(float) + 0.5) * _INV_2_53
        v = (raw[:, 1] >> np.uint64(11)).astype(float) * _INV_2_53
        return u, v

    def normal(self, n: int) -> np.ndarray:
        """``n`` standard normals; an odd trailing draw is discarded."""
        pairs = (n + 1) // 2
        u, v = self.uniform_pairs(pairs)
        r = np.sqrt(-2.0 * np.log(u))
        angle = 2.0 * np.pi * v
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(angle)
        out[1::2] = r * np.sin(angle)
        return out[:n]
