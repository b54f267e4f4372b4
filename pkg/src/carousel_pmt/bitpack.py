"""Bit-level packing for dictionary payloads.

Payloads are bitstreams filled LSB-first within each byte (stream bit k lives
in byte k//8 at bit position k%8). Fixed-width fields are laid down with the
field's most significant bit first in stream order. Single-bit arrays (Bloom)
follow the same LSB-first byte convention: bit index p is byte p//8, bit p%8.
"""

from __future__ import annotations

import numpy as np

# Fields processed per internal block; a multiple of 8 keeps every block's
# bit length byte aligned for any field width.
_BLOCK = 1 << 18


def fields_per_byte_align(width: int) -> int:
    """Smallest field count whose total bit length is byte aligned."""
    if not 1 <= width <= 64:
        raise ValueError("field width must be in [1, 64]")
    g = np.gcd(width, 8)
    return 8 // int(g)


def pack_fields(values: np.ndarray, width: int) -> bytes:
    """Pack unsigned integers into a width-bit field stream."""
    if not 1 <= width <= 64:
        raise ValueError("field width must be in [1, 64]")
    vals = np.asarray(values, dtype=np.uint64)
    if vals.ndim != 1:
        raise ValueError("expected a 1-d value array")
    if width < 64 and vals.size and int(vals.max()) >> width:
        raise ValueError("value does not fit the field width")
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint64)
    out = []
    for lo in range(0, vals.size, _BLOCK):
        blk = vals[lo:lo + _BLOCK]
        bits = ((blk[:, None] >> shifts[None, :]) & np.uint64(1)).astype(np.uint8)
        out.append(np.packbits(bits.reshape(-1), bitorder="little").tobytes())
    return b"".join(out)


def unpack_fields(buf: bytes | np.ndarray, count: int, width: int,
                  bit_offset: int = 0) -> np.ndarray:
    """Read `count` width-bit fields starting at a byte-aligned bit offset."""
    if not 1 <= width <= 64:
        raise ValueError("field width must be in [1, 64]")
    if bit_offset % 8:
        raise ValueError("bit offset must be byte aligned")
    raw = np.frombuffer(buf, dtype=np.uint8) if isinstance(buf, (bytes, bytearray, memoryview)) else buf
    start = bit_offset // 8
    need = (count * width + 7) // 8
    raw = raw[start:start + need]
    if raw.size < need:
        raise ValueError("buffer too short for requested fields")
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint64)
    out = np.empty(count, dtype=np.uint64)
    done = 0
    while done < count:
        take = min(_BLOCK, count - done)
        b_lo = done * width // 8
        b_hi = ((done + take) * width + 7) // 8
        bits = np.unpackbits(raw[b_lo:b_hi], bitorder="little")
        local_off = done * width - b_lo * 8
        bits = bits[local_off:local_off + take * width].reshape(take, width)
        out[done:done + take] = (bits.astype(np.uint64) << shifts[None, :]).sum(axis=1)
        done += take
    return out


def make_bit_array(nbits: int) -> np.ndarray:
    return np.zeros((nbits + 7) // 8, dtype=np.uint8)


def set_bits(arr: np.ndarray, positions: np.ndarray) -> None:
    """Set bits at the given positions, duplicates allowed."""
    pos = np.asarray(positions, dtype=np.uint64)
    np.bitwise_or.at(arr, (pos >> np.uint64(3)).astype(np.int64),
                     (np.uint8(1) << (pos & np.uint64(7)).astype(np.uint8)))


def get_bits(arr: np.ndarray, positions: np.ndarray) -> np.ndarray:
    pos = np.asarray(positions, dtype=np.uint64)
    byte = arr[(pos >> np.uint64(3)).astype(np.int64)]
    return (byte >> (pos & np.uint64(7)).astype(np.uint8)) & np.uint8(1)
