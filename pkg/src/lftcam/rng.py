"""Counter-based SplitMix64 random streams.

Pose randomization and noise injection must reproduce bit-for-bit across
platforms and thread counts, so instead of a stateful generator we use the
SplitMix64 output function on an explicit counter: draw ``k`` of stream
``seed`` is ``mix64(seed + (k+1)*GOLDEN)``.  Any subsequence can be computed
independently, which keeps vectorized and chunked code identical.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64_MAX_PLUS_1 = float(2**64)


def _mix64(z: np.ndarray) -> np.ndarray:
    # Multiplication is meant to wrap modulo 2**64; silence the overflow
    # warning numpy raises for uint64 wraparound.
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def substream(seed: int, tag: int) -> int:
    """Derive an independent stream seed for a purpose tag."""
    with np.errstate(over="ignore"):
        z = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + np.uint64(tag) * _GOLDEN)
    return int(z)


def uniforms(seed: int, count: int, start: int = 0) -> np.ndarray:
    """``count`` doubles in [0, 1), draws ``start .. start+count-1`` of the stream."""
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        bits = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + idx * _GOLDEN)
    return bits.astype(np.float64) / _U64_MAX_PLUS_1


def normals(seed: int, count: int, start: int = 0) -> np.ndarray:
    """Standard normal draws via Box-Muller on consecutive uniform pairs.

    Draw ``k`` always consumes uniforms ``2k`` and ``2k+1``, so a slice of the
    stream does not depend on how the caller batches requests.
    """
    idx = np.arange(start, start + count, dtype=np.uint64)
    # Explicit pairing: uniform draws 2k and 2k+1 of the same stream.
    with np.errstate(over="ignore"):
        b1 = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + (np.uint64(2) * idx + np.uint64(1)) * _GOLDEN)
        b2 = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + (np.uint64(2) * idx + np.uint64(2)) * _GOLDEN)
    u1 = (b1.astype(np.float64) + 1.0) / (_U64_MAX_PLUS_1 + 1.0)  # (0, 1]
    u2 = b2.astype(np.float64) / _U64_MAX_PLUS_1
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
