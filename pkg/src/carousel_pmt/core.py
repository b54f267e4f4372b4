"""Core model: items, parameters, hash family, dictionary generation.

Item ids are opaque 16-byte strings. The provider's dictionary is generated
from a documented deterministic pipeline so any independent implementation
can reproduce it: id_k = SHA-256(seed_le64 || counter_le64)[:16] with the
counter starting at 0 and incremented past collisions (which at 128 bits are
never expected in practice).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import jenkins

ITEM_BYTES = 16


@dataclass(frozen=True)
class PmtParams:
    """Workload-wide parameters shared by provider, service and TAs."""

    n: int
    epsilon: int = 10
    bloom_l: int = 10
    chunk_bytes: int = 1 << 20
    page_bytes: int = 4096

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.epsilon < 1:
            raise ValueError("epsilon must be at least 1")
        if self.bloom_l < 1:
            raise ValueError("bloom_l must be at least 1")
        if self.page_bytes < 64:
            raise ValueError("page_bytes must be at least 64")
        if self.chunk_bytes < self.page_bytes:
            raise ValueError("chunk_bytes must be at least page_bytes")

    @property
    def value_bits(self) -> int:
        """Width of truncated dictionary values: epsilon + ceil(log2 n)."""
        return self.epsilon + ceil_log2(self.n)


def ceil_log2(x: int) -> int:
    if x < 1:
        raise ValueError("ceil_log2 needs a positive integer")
    return (x - 1).bit_length()


def check_item(item: bytes) -> bytes:
    if not isinstance(item, (bytes, bytearray)) or len(item) != ITEM_BYTES:
        raise ValueError("items are exactly 16 bytes")
    return bytes(item)


@dataclass(frozen=True)
class HashFamily:
    """Ordered lookup3 instances, one 32-bit seed per member."""

    seeds: tuple[int, ...]

    def __post_init__(self):
        for s in self.seeds:
            if not 0 <= s < 1 << 32:
                raise ValueError("seeds are 32-bit unsigned values")

    def hash_one(self, item: bytes, i: int) -> int:
        return jenkins.hashlittle(check_item(item), self.seeds[i])

    def hash_many(self, items: np.ndarray, i: int) -> np.ndarray:
        return jenkins.hash16_many(items, self.seeds[i])

    @staticmethod
    def fresh(count: int, seed: int = 0) -> "HashFamily":
        # Stable seed schedule derived from a user seed.
        base = hashlib.sha256(b"pmt-hash-family" + seed.to_bytes(8, "little")).digest()
        seeds = tuple(int.from_bytes(base[4 * i:4 * i + 4], "little")
                      for i in range(count)) if count <= 8 else None
        if seeds is None:
            out = []
            ctr = 0
            while len(out) < count:
                blk = hashlib.sha256(b"pmt-hash-family" + seed.to_bytes(8, "little")
                                     + ctr.to_bytes(4, "little")).digest()
                out.extend(int.from_bytes(blk[4 * j:4 * j + 4], "little") for j in range(8))
                ctr += 1
            seeds = tuple(out[:count])
        return HashFamily(seeds)


@dataclass
class Dictionary:
    """Provider-side set of n unique 16-byte ids plus its generation seed."""

    items: np.ndarray  # (n, 16) uint8, insertion order
    seed: int
    _lookup: set = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.items.dtype != np.uint8 or self.items.ndim != 2 or self.items.shape[1] != ITEM_BYTES:
            raise ValueError("items must be an (n, 16) uint8 array")

    @property
    def n(self) -> int:
        return len(self.items)

    def member_set(self) -> set:
        if self._lookup is None:
            self._lookup = set(self.items.tobytes()[i * ITEM_BYTES:(i + 1) * ITEM_BYTES]
                               for i in range(self.n))
        return self._lookup

    def item(self, k: int) -> bytes:
        return self.items[k].tobytes()


def generate_dictionary(n: int, seed: int) -> Dictionary:
    """Deterministic dictionary of n unique ids from the SHA-256 counter pipeline."""
    if n < 1:
        raise ValueError("n must be at least 1")
    prefix = seed.to_bytes(8, "little")
    raw = bytearray()
    for ctr in range(n):
        raw += hashlib.sha256(prefix + ctr.to_bytes(8, "little")).digest()[:ITEM_BYTES]
    items = np.frombuffer(bytes(raw), dtype=np.uint8).reshape(n, ITEM_BYTES)
    if len(np.unique(items, axis=0)) == n:
        return Dictionary(items=items.copy(), seed=seed)
    # 128-bit collision: redraw duplicates by walking the counter past n.
    seen = set()
    out = []
    ctr = 0
    while len(out) < n:
        d = hashlib.sha256(prefix + ctr.to_bytes(8, "little")).digest()[:ITEM_BYTES]
        ctr += 1
        if d in seen:
            continue
        seen.add(d)
        out.append(d)
    items = np.frombuffer(b"".join(out), dtype=np.uint8).reshape(n, ITEM_BYTES).copy()
    return Dictionary(items=items, seed=seed)


def oracle_member(dictionary: Dictionary, item: bytes) -> bool:
    """Ground-truth membership check used to score scheme responses."""
    return check_item(item) in dictionary.member_set()


def truncate_hash(item: bytes, bits: int) -> int:
    """Low-order `bits` of the item read as a little-endian integer."""
    if not 1 <= bits <= 64:
        raise ValueError("bits must be in [1, 64]")
    return int.from_bytes(check_item(item)[:8], "little") & ((1 << bits) - 1)


def truncate_many(items: np.ndarray, bits: int) -> np.ndarray:
    """Vectorized truncate_hash over an (n, 16) uint8 item array."""
    if not 1 <= bits <= 64:
        raise ValueError("bits must be in [1, 64]")
    lo = np.ascontiguousarray(items).view("<u8")[:, 0]
    if bits == 64:
        return lo.copy()
    return lo & np.uint64((1 << bits) - 1)


def random_items(count: int, seed: int, exclude: Dictionary | None = None) -> np.ndarray:
    """Uniform random probe items, deterministic per seed, optionally non-member."""
    rng = np.random.Generator(np.random.PCG64(seed))
    out = rng.integers(0, 256, size=(count, ITEM_BYTES), dtype=np.uint8)
    if exclude is not None:
        members = exclude.member_set()
        buf = out.tobytes()
        for k in range(count):
            probe = buf[k * ITEM_BYTES:(k + 1) * ITEM_BYTES]
            while probe in members:
                probe = rng.integers(0, 256, size=ITEM_BYTES, dtype=np.uint8).tobytes()
                out[k] = np.frombuffer(probe, dtype=np.uint8)
    return out
