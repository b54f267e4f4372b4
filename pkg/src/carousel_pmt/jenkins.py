"""Jenkins lookup3 hashing, scalar and vectorized.

The scalar functions follow the published lookup3 hashlittle()/hashlittle2()
structure (little-endian word reads, 0xdeadbeef initialisation, the 4/6/8/16/19/4
mix schedule and 14/11/25/16/4/14/24 final schedule). The vectorized variants
are numpy translations specialised to fixed 16-byte keys and must agree with
the scalar path bit for bit; tests enforce that.
"""

from __future__ import annotations

import numpy as np

_M32 = 0xFFFFFFFF


def _rot(x: int, k: int) -> int:
    return ((x << k) | (x >> (32 - k))) & _M32


def _mix(a: int, b: int, c: int) -> tuple[int, int, int]:
    a = (a - c) & _M32; a ^= _rot(c, 4);  c = (c + b) & _M32
    b = (b - a) & _M32; b ^= _rot(a, 6);  a = (a + c) & _M32
    c = (c - b) & _M32; c ^= _rot(b, 8);  b = (b + a) & _M32
    a = (a - c) & _M32; a ^= _rot(c, 16); c = (c + b) & _M32
    b = (b - a) & _M32; b ^= _rot(a, 19); a = (a + c) & _M32
    c = (c - b) & _M32; c ^= _rot(b, 4);  b = (b + a) & _M32
    return a, b, c


def _final(a: int, b: int, c: int) -> tuple[int, int, int]:
    c ^= b; c = (c - _rot(b, 14)) & _M32
    a ^= c; a = (a - _rot(c, 11)) & _M32
    b ^= a; b = (b - _rot(a, 25)) & _M32
    c ^= b; c = (c - _rot(b, 16)) & _M32
    a ^= c; a = (a - _rot(c, 4)) & _M32
    b ^= a; b = (b - _rot(a, 14)) & _M32
    c ^= b; c = (c - _rot(b, 24)) & _M32
    return a, b, c


def _tail_word(data: bytes, offset: int, remain: int) -> int:
    # Partial little-endian word, missing bytes read as zero.
    w = 0
    for i in range(min(remain, 4)):
        w |= data[offset + i] << (8 * i)
    return w


def hashlittle(data: bytes, initval: int = 0) -> int:
    """32-bit lookup3 hash of a byte string."""
    length = len(data)
    a = b = c = (0xDEADBEEF + length + initval) & _M32
    off = 0
    remain = length
    while remain > 12:
        a = (a + int.from_bytes(data[off:off + 4], "little")) & _M32
        b = (b + int.from_bytes(data[off + 4:off + 8], "little")) & _M32
        c = (c + int.from_bytes(data[off + 8:off + 12], "little")) & _M32
        a, b, c = _mix(a, b, c)
        off += 12
        remain -= 12
    if remain == 0:
        return c
    a = (a + _tail_word(data, off, remain)) & _M32
    if remain > 4:
        b = (b + _tail_word(data, off + 4, remain - 4)) & _M32
    if remain > 8:
        c = (c + _tail_word(data, off + 8, remain - 8)) & _M32
    a, b, c = _final(a, b, c)
    return c


def hashlittle2(data: bytes, initval: int = 0, initval2: int = 0) -> tuple[int, int]:
    """Pair of 32-bit lookup3 hashes (primary, secondary) of a byte string."""
    length = len(data)
    a = b = c = (0xDEADBEEF + length + initval) & _M32
    c = (c + initval2) & _M32
    off = 0
    remain = length
    while remain > 12:
        a = (a + int.from_bytes(data[off:off + 4], "little")) & _M32
        b = (b + int.from_bytes(data[off + 4:off + 8], "little")) & _M32
        c = (c + int.from_bytes(data[off + 8:off + 12], "little")) & _M32
        a, b, c = _mix(a, b, c)
        off += 12
        remain -= 12
    if remain == 0:
        return c, b
    a = (a + _tail_word(data, off, remain)) & _M32
    if remain > 4:
        b = (b + _tail_word(data, off + 4, remain - 4)) & _M32
    if remain > 8:
        c = (c + _tail_word(data, off + 8, remain - 8)) & _M32
    a, b, c = _final(a, b, c)
    return c, b


def hash64(data: bytes, initval: int = 0, initval2: int = 0) -> int:
    """64-bit hash assembled from the lookup3 pair: primary in the high word."""
    c, b = hashlittle2(data, initval, initval2)
    return (c << 32) | b


def _vrot(x: np.ndarray, k: int) -> np.ndarray:
    return (x << np.uint32(k)) | (x >> np.uint32(32 - k))


def _vmix(a, b, c):
    a = a - c; a ^= _vrot(c, 4);  c = c + b
    b = b - a; b ^= _vrot(a, 6);  a = a + c
    c = c - b; c ^= _vrot(b, 8);  b = b + a
    a = a - c; a ^= _vrot(c, 16); c = c + b
    b = b - a; b ^= _vrot(a, 19); a = a + c
    c = c - b; c ^= _vrot(b, 4);  b = b + a
    return a, b, c


def _vfinal(a, b, c):
    c ^= b; c = c - _vrot(b, 14)
    a ^= c; a = a - _vrot(c, 11)
    b ^= a; b = b - _vrot(a, 25)
    c ^= b; c = c - _vrot(b, 16)
    a ^= c; a = a - _vrot(c, 4)
    b ^= a; b = b - _vrot(a, 14)
    c ^= b; c = c - _vrot(b, 24)
    return a, b, c


def _as_words(keys: np.ndarray) -> np.ndarray:
    if keys.dtype != np.uint8 or keys.ndim != 2 or keys.shape[1] != 16:
        raise ValueError("expected an (N, 16) uint8 array of keys")
    return np.ascontiguousarray(keys).view("<u4")


def hash16_many(keys: np.ndarray, initval: int) -> np.ndarray:
    """Vectorized hashlittle over fixed 16-byte keys; returns uint32 array."""
    k = _as_words(keys)
    init = np.uint32((0xDEADBEEF + 16 + initval) & _M32)
    a = k[:, 0] + init
    b = k[:, 1] + init
    c = k[:, 2] + init
    a, b, c = _vmix(a, b, c)
    a = a + k[:, 3]
    a, b, c = _vfinal(a, b, c)
    return c


def hash16_many64(keys: np.ndarray, initval: int, initval2: int) -> np.ndarray:
    """Vectorized hashlittle2 over 16-byte keys packed into uint64 values."""
    k = _as_words(keys)
    init = np.uint32((0xDEADBEEF + 16 + initval) & _M32)
    a = k[:, 0] + init
    b = k[:, 1] + init
    c = k[:, 2] + init + np.uint32(initval2 & _M32)
    a, b, c = _vmix(a, b, c)
    a = a + k[:, 3]
    a, b, c = _vfinal(a, b, c)
    return (c.astype(np.uint64) << np.uint64(32)) | b.astype(np.uint64)


def map_range(h: np.ndarray | int, upper: int) -> np.ndarray | int:
    """Map 32-bit hash values onto [0, upper) by multiply-shift."""
    if upper <= 0 or upper > _M32 + 1:
        raise ValueError("upper must be in [1, 2**32]")
    if isinstance(h, np.ndarray):
        return ((h.astype(np.uint64) * np.uint64(upper)) >> np.uint64(32)).astype(np.uint64)
    return (int(h) * upper) >> 32


def map_range64(h: np.ndarray | int, upper: int, bits: int = 64) -> np.ndarray | int:
    """Map hash values of the given width onto [0, upper) by multiply-shift."""
    if isinstance(h, np.ndarray):
        # numpy has no 128-bit ints; go through Python objects only for the
        # rare scalar case and keep the vector case in uint64 by splitting.
        hi = (h >> np.uint64(32)).astype(np.uint64)
        lo = (h & np.uint64(0xFFFFFFFF)).astype(np.uint64)
        up = np.uint64(upper)
        top = hi * up
        carry = (lo * up) >> np.uint64(32)
        return ((top + carry) >> np.uint64(bits - 32)).astype(np.uint64)
    return (int(h) * upper) >> bits
