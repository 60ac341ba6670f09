"""Counter-based random streams.

Every draw is a pure function of ``(seed, purpose, walker id, counter)``, built
from the SplitMix64 finalizer; normals come from the inverse normal CDF.
Walkers can therefore be processed in any chunking or order and still see
bit-identical numbers.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_M1 = _U64(0xBF58476D1CE4E5B9)
_M2 = _U64(0x94D049BB133111EB)

# purpose tags keep independent uses of one seed apart
POSITION = 1
MOMENTUM = 2
NOISE = 3
BATCH = 4


def _mix(x: np.ndarray) -> np.ndarray:
    x = x ^ (x >> _U64(30))
    x = x * _M1
    x = x ^ (x >> _U64(27))
    x = x * _M2
    return x ^ (x >> _U64(31))


def _u64(value) -> np.uint64:
    return _U64(int(value) & 0xFFFFFFFFFFFFFFFF)


def stream_keys(seed: int, purpose: int, walker_ids) -> np.ndarray:
    """Per-walker 64-bit stream keys."""
    ids = np.asarray(walker_ids, dtype=np.uint64)
    with np.errstate(over="ignore"):
        head = _mix(np.array([_u64(seed) ^ (_u64(purpose) * _GOLDEN)], dtype=np.uint64))[0]
        return _mix(ids * _GOLDEN + head)


def raw_bits(keys: np.ndarray, counter: int) -> np.ndarray:
    with np.errstate(over="ignore"):
        return _mix(keys + _u64(counter + 1) * _GOLDEN)


def uniforms(keys: np.ndarray, counter: int) -> np.ndarray:
    """One uniform in [0, 1) per key, 53-bit resolution."""
    return (raw_bits(keys, counter) >> _U64(11)).astype(np.float64) * 2.0**-53


def open_uniforms(keys: np.ndarray, counter: int) -> np.ndarray:
    """Uniforms strictly inside (0, 1)."""
    return ((raw_bits(keys, counter) >> _U64(11)).astype(np.float64) + 0.5) * 2.0**-53


def normals(keys: np.ndarray, counter: int, width: int) -> np.ndarray:
    """Standard normals of shape ``(len(keys), width)`` by inverse CDF.

    Column ``c`` uses counter ``counter + c``.
    """
    out = np.empty((keys.shape[0], width))
    for c in range(width):
        out[:, c] = ndtri(open_uniforms(keys, counter + c))
    return out


def derive_seed(seed: int, *labels: int) -> int:
    """Deterministic child seed, e.g. one per replicate or per set."""
    x = np.array([_u64(seed)], dtype=np.uint64)
    with np.errstate(over="ignore"):
        for lab in labels:
            x = _mix(x ^ (_u64(lab) * _GOLDEN + _U64(0x632BE59BD9B4E019)))
    return int(x[0])
