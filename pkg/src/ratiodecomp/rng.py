"""Counter-based SplitMix64 streams, vectorized over numpy uint64 arrays.

Draw ``k`` of a stream with initial state ``s0`` is ``mix(s0 + (k + 1) * GAMMA)``,
so any draw can be computed directly without advancing a generator. This keeps
simulated output independent of iteration order and platform.
"""

from __future__ import annotations

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def mix64(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def stream_states(seed: int, keys: np.ndarray) -> np.ndarray:
    """Initial state of the stream owned by each integer ``key`` under ``seed``."""
    keys = np.asarray(keys, dtype=np.uint64)
    base = np.uint64(int(seed) & _MASK64)
    with np.errstate(over="ignore"):
        return mix64(base ^ mix64(keys * GAMMA + GAMMA))


def draw_u64(states: np.ndarray, k: np.ndarray | int) -> np.ndarray:
    states = np.asarray(states, dtype=np.uint64)
    k = np.asarray(k, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(states + (k + np.uint64(1)) * GAMMA)


def uniform(states: np.ndarray, k: np.ndarray | int) -> np.ndarray:
    """Uniform doubles in [0, 1) with 53 random bits."""
    return (draw_u64(states, k) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def standard_normal(states: np.ndarray, k: np.ndarray | int) -> np.ndarray:
    """Box-Muller normal from draws ``k`` and ``k + 1``."""
    k = np.asarray(k, dtype=np.uint64)
    u1 = 1.0 - uniform(states, k)  # (0, 1]
    u2 = uniform(states, k + np.uint64(1))
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def splitmix64_sequence(seed: int, n: int) -> list[int]:
    """Reference scalar SplitMix64 (Vigna) for cross-checking the vector code."""
    out = []
    x = int(seed) & _MASK64
    for _ in range(n):
        x = (x + 0x9E3779B97F4A7C15) & _MASK64
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        out.append(z ^ (z >> 31))
    return out
