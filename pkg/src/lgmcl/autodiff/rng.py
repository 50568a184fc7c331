"""Seed derivation: one run seed fans out into named, independent streams."""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed: int) -> None:
        self.state = seed & _MASK

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)


def derive_seed(seed: int, *path: str | int) -> int:
    """Deterministic 64-bit child seed for a labelled sub-stream."""
    mixer = SplitMix64(seed)
    value = mixer.next()
    for part in path:
        for byte in str(part).encode("utf-8"):
            mixer.state ^= byte
            value = mixer.next()
        mixer.state ^= 0xFF
        value = mixer.next()
    return value


def make_rng(seed: int, *path: str | int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *path)))


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape: tuple[int, ...] | None = None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape if shape is not None else (fan_in, fan_out))
