"""Counter-based Philox4x32-10 streams, vectorised over replicas.

Every random draw is a pure function of ``(seed, counter)``, so a replica's
stream never depends on how replicas are batched or distributed.
"""
from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)

# purpose tags placed in the last counter word
EVENT = 0
EVENT_AUX = 1
INIT = 2
HISTORY = 3


def philox4x32(counter, key, rounds: int = 10):
    """Philox4x32 bijection.

    ``counter`` is a sequence of four uint32-compatible arrays (broadcastable),
    ``key`` a pair of ints. Returns four uint32 arrays.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK32 for c in counter)
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    k0 = np.uint32(key[0] & 0xFFFFFFFF)
    k1 = np.uint32(key[1] & 0xFFFFFFFF)
    for r in range(rounds):
        if r:
            k0 = np.uint32((int(k0) + int(_W0)) & 0xFFFFFFFF)
            k1 = np.uint32((int(k1) + int(_W1)) & 0xFFFFFFFF)
        p0 = c0 * _M0
        p1 = c2 * _M1
        hi0, lo0 = p0 >> _SHIFT, p0 & _MASK32
        hi1, lo1 = p1 >> _SHIFT, p1 & _MASK32
        c0, c1, c2, c3 = (
            hi1 ^ c1 ^ np.uint64(k0),
            lo1,
            hi0 ^ c3 ^ np.uint64(k1),
            lo0,
        )
    return tuple(x.astype(np.uint32) for x in (c0, c1, c2, c3))


def _to_unit(hi, lo):
    # 53-bit uniform on [0, 1)
    bits = (hi.astype(np.uint64) << np.uint64(21)) ^ (lo.astype(np.uint64) >> np.uint64(11))
    return bits.astype(np.float64) * (1.0 / 9007199254740992.0)


def _split_seed(seed: int) -> tuple[int, int]:
    seed = int(seed)
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF


def uniforms(seed: int, stream, index, purpose: int) -> tuple[np.ndarray, np.ndarray]:
    """Two independent uniforms on [0, 1) for each (stream, index) pair.

    ``stream`` is typically a replica or history index and ``index`` an event
    counter. Both broadcast.
    """
    stream = np.asarray(stream, dtype=np.int64)
    index = np.asarray(index, dtype=np.int64)
    w = philox4x32(
        (index & 0xFFFFFFFF, stream & 0xFFFFFFFF, (stream >> 32) & 0xFFFFFFFF, purpose),
        _split_seed(seed),
    )
    return _to_unit(w[0], w[1]), _to_unit(w[2], w[3])


def open_uniforms(seed, stream, index, purpose):
    """As :func:`uniforms` but on (0, 1], safe for logarithms."""
    u1, u2 = uniforms(seed, stream, index, purpose)
    return 1.0 - u1, 1.0 - u2


def normals(seed: int, stream, index, purpose: int) -> tuple[np.ndarray, np.ndarray]:
    """Two standard normals per (stream, index) via Box-Muller."""
    u1, u2 = open_uniforms(seed, stream, index, purpose)
    r = np.sqrt(-2.0 * np.log(u1))
    return r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)
