"""Deterministic child-seed derivation (splitmix64)."""
import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x):
    """One splitmix64 output for the 64-bit state ``x``."""
    z = (int(x) + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def child_seed(master_seed, index):
    """Seed of task ``index`` under ``master_seed``.

    The master seed is mixed first so that nearby masters give unrelated
    streams, then the index is folded in.
    """
    return splitmix64(splitmix64(master_seed & _MASK) ^ (int(index) & _MASK))


def child_seeds(master_seed, n):
    return np.array([child_seed(master_seed, i) for i in range(n)], dtype=np.uint64)
