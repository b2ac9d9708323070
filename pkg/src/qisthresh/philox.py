"""Counter-based uniforms (Philox4x32-10), vectorized over numpy arrays.

Every random number in a simulation is a pure function of
``(seed, stream, index, frame)``, so any sub-cube of a bit cube can be
regenerated in isolation, in any order, or in parallel, and come out
bit-identical.
"""

from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)

# stream ids; keep distinct so unrelated draws never share counters
STREAM_BITS = 0
STREAM_MARKOV = 1
STREAM_CORPUS = 2


def philox4x32(c0, c1, c2, c3, k0: int, k1: int, rounds: int = 10):
    """Philox4x32 block function on uint32-valued arrays (held in uint64)."""
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK for c in (c0, c1, c2, c3))
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    k0 = np.uint64(k0 & 0xFFFFFFFF)
    k1 = np.uint64(k1 & 0xFFFFFFFF)
    for _ in range(rounds):
        p0 = c0 * _M0
        p1 = c2 * _M1
        c0, c1, c2, c3 = (
            ((p1 >> _SHIFT) ^ c1 ^ k0) & _MASK,
            p1 & _MASK,
            ((p0 >> _SHIFT) ^ c3 ^ k1) & _MASK,
            p0 & _MASK,
        )
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return c0, c1, c2, c3


def uniforms(seed: int, index, frame, stream: int = STREAM_BITS) -> np.ndarray:
    """53-bit uniforms in [0, 1) keyed by ``(seed, stream, index, frame)``.

    ``index`` and ``frame`` broadcast against each other; both must be
    nonnegative integers below 2**64 and 2**32 respectively.
    """
    index = np.asarray(index, dtype=np.uint64)
    frame = np.asarray(frame, dtype=np.uint64)
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    r0, r1, _, _ = philox4x32(
        index & _MASK, index >> _SHIFT, frame, np.uint64(stream), seed, seed >> 32
    )
    hi = (r0 >> np.uint64(5)).astype(np.float64)  # 27 bits
    lo = (r1 >> np.uint64(6)).astype(np.float64)  # 26 bits
    return (hi * 67108864.0 + lo) / 9007199254740992.0
