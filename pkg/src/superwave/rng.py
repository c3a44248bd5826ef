"""Deterministic random-stream derivation.

Every stochastic routine in the package draws from a counter-based Philox
generator whose 128-bit key is derived from a master seed plus a scope path
(module name, check id, replicate index, ...).  Streams for distinct scopes
are independent by construction and reproducible across runs and platforms.
"""
from __future__ import annotations

import numpy as np

__all__ = ["derive_key", "stream", "replicate_seeds"]

_GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1


def _splitmix64(state: int) -> tuple[int, int]:
    # returns (new_state, output word)
    state = (state + _GOLDEN) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    z = z ^ (z >> 31)
    return state, z


def _fold(word: int, state: int) -> int:
    state ^= (word & _MASK)
    state, _ = _splitmix64(state)
    return state


def derive_key(master_seed: int, *scope) -> int:
    """Derive a 128-bit Philox key from a master seed and a scope path.

    Scope elements may be ints or strings; order matters.
    """
    state = _fold(int(master_seed), 0x5EED5EED5EED5EED)
    for item in scope:
        if isinstance(item, str):
            for byte in item.encode():
                state = _fold(byte, state)
            state = _fold(len(item) ^ 0xA5A5, state)
        else:
            state = _fold(int(item), state)
            state = _fold(0x1234ABCD, state)
    state, lo = _splitmix64(state)
    state, hi = _splitmix64(state)
    return (hi << 64) | lo


def stream(master_seed: int, *scope) -> np.random.Generator:
    """Independent Generator for the given scope, keyed off the master seed."""
    return np.random.Generator(np.random.Philox(key=derive_key(master_seed, *scope)))


def replicate_seeds(master_seed: int, n: int, *scope) -> np.ndarray:
    """n distinct 128-bit keys, one per replicate, as a (n,) object-free uint64 pair array.

    Returned as an (n, 2) uint64 array [(lo, hi)] suitable for reconstructing
    Philox keys inside worker loops.
    """
    out = np.empty((n, 2), dtype=np.uint64)
    for i in range(n):
        key = derive_key(master_seed, *scope, i)
        out[i, 0] = key & _MASK
        out[i, 1] = key >> 64
    return out


def generator_from_pair(lo: int, hi: int) -> np.random.Generator:
    """Rebuild the Generator for a (lo, hi) key pair from replicate_seeds."""
    return np.random.Generator(np.random.Philox(key=(int(hi) << 64) | int(lo)))
