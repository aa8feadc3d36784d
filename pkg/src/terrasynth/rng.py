"""Stateless counter-based random streams.

Every random number used while rendering is a pure function of
``(seed, x, y, index, dim)``.  Tiles and threads can therefore be scheduled
in any order without changing a single output bit.
"""

from __future__ import annotations

import hashlib

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True, nogil=True)
def splitmix64(x):
    z = np.uint64(x) + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def uniform(seed, x, y, index, dim):
    """Uniform float in [0, 1) keyed by (seed, pixel x, pixel y, sample index, dimension)."""
    k = splitmix64(np.uint64(seed))
    k = splitmix64(k ^ np.uint64(x))
    k = splitmix64(k ^ np.uint64(y))
    k = splitmix64(k ^ np.uint64(index))
    k = splitmix64(k ^ np.uint64(dim))
    return float(k >> _S11) * _INV53


def splitmix64_py(x: int) -> int:
    """Pure-Python twin of :func:`splitmix64` (used for seed derivation)."""
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix_seed(master_seed: int, label: str) -> int:
    """Derive an independent 64-bit seed for a named item from the master seed."""
    digest = int.from_bytes(hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest(), "little")
    return splitmix64_py((int(master_seed) & MASK64) ^ digest)
