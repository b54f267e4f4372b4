"""Dictionary representations cycled through the carousel.

Three interchangeable forms of the provider dictionary:

* sequence of differences: entries truncated (or hashed) to epsilon+ceil(log2 n)
  bits, sorted, deduplicated, and difference-coded into (epsilon+2)-bit fields.
  A difference d is emitted as p zero fields followed by a remainder field
  b in [1, 2^(epsilon+2)-1] with d = p*(2^(epsilon+2)-1) + b; exact multiples
  emit one fewer zero and a full-value remainder. A first value of exactly 0
  is emitted as a literal zero field and flagged in the header so readers can
  tell it apart from a dummy.
* Bloom filter: round(1.44*epsilon*n) bits, bloom_l set positions per entry.
* 4-ary cuckoo hash: ceil(1.03*n) slots of (epsilon+2)-bit fingerprints
  (zero fingerprints remapped to 1; zero marks an empty slot), random-walk
  insertion bounded by max_kicks, small fixed-capacity stash.

Serialized form ("CPMT"): little-endian header, keyed 16-byte MAC over
header-without-MAC plus payload, then the payload (cuckoo appends a stash
trailer). Field streams follow the bitpack conventions.
"""

from __future__ import annotations

import hashlib
import hmac as hmac_mod
import math
import os
import random
import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from . import bitpack, jenkins
from .core import Dictionary, HashFamily, PmtParams, ceil_log2, check_item, truncate_hash, truncate_many

MAGIC = b"CPMT"
VERSION = 1
DEFAULT_MAC_KEY = hashlib.sha256(b"pmt-provider-mac-key-v1").digest()[:16]


def provider_mac_key() -> bytes:
    """Representation MAC key shared by provider and TA (fixed under PMT_TEST_KEYS)."""
    label = os.environ.get("PMT_TEST_KEYS")
    if label:
        return hashlib.sha256(b"pmt-test-mac" + label.encode()).digest()[:16]
    return DEFAULT_MAC_KEY

FLAG_PARTITIONED = 0x01
FLAG_LEADING_ZERO = 0x02
FLAG_HASHED_VALUES = 0x04

DEFAULT_STASH_CAPACITY = 16
DEFAULT_MAX_KICKS = 2000


class ReprKind(IntEnum):
    SEQDIFF = 1
    BLOOM = 2
    CUCKOO4 = 3


class ReprFormatError(Exception):
    pass


class BadMagic(ReprFormatError):
    pass


class BadVersion(ReprFormatError):
    pass


class MacMismatch(ReprFormatError):
    pass


class TruncatedPayload(ReprFormatError):
    pass


class StashOverflow(Exception):
    """Cuckoo build failed; retry with fresh seeds."""


@dataclass(frozen=True)
class CuckooStash:
    """Overflow entries that did not place within the relocation bound."""

    capacity: int = DEFAULT_STASH_CAPACITY
    entries: tuple = ()  # ((slot0..slot3 ascending), fingerprint) pairs

    def __post_init__(self):
        if len(self.entries) > self.capacity:
            raise StashOverflow(f"{len(self.entries)} entries exceed capacity {self.capacity}")


@dataclass(frozen=True)
class DictRepresentation:
    """One serializable dictionary representation plus its public metadata."""

    kind: ReprKind
    n: int                    # dictionary cardinality at build time
    n_prime: int              # emitted fields / filter bits / table slots
    epsilon: int
    item_bits: int            # payload field width (1 for the Bloom filter)
    seeds: tuple
    partitioned: bool
    hashed_values: bool
    leading_zero_value: bool
    payload: bytes
    stash: CuckooStash | None
    mac: bytes

    @property
    def value_bits(self) -> int:
        return self.epsilon + ceil_log2(self.n)

    @property
    def field_max(self) -> int:
        return (1 << self.item_bits) - 1

    @property
    def table_slots(self) -> int:
        if self.kind != ReprKind.CUCKOO4:
            raise ValueError("table_slots is a cuckoo property")
        return self.n_prime

    @property
    def load_factor(self) -> float:
        return self.n / self.table_slots

    @property
    def region_slots(self) -> int:
        if not self.partitioned:
            raise ValueError("region_slots applies to partitioned tables")
        return self.table_slots // 4

    def payload_bytes_expected(self) -> int:
        if self.kind == ReprKind.BLOOM:
            return (self.n_prime + 7) // 8
        return (self.n_prime * self.item_bits + 7) // 8


def _mac_bytes(key: bytes, data: bytes) -> bytes:
    return hmac_mod.new(key, data, hashlib.sha256).digest()[:16]


def _round_bloom_bits(epsilon: int, n: int) -> int:
    # 1.44 == 36/25 exactly; integer rounding avoids float wobble.
    q, r = divmod(36 * epsilon * n, 25)
    return q + (1 if 2 * r >= 25 else 0)


def cuckoo_slot_count(n: int, partitioned: bool = False) -> int:
    slots = (103 * n + 99) // 100
    if partitioned:
        slots = ((slots + 3) // 4) * 4
    return slots


def seqdiff_values(dictionary: Dictionary, params: PmtParams,
                   hashed: bool = False, seeds: tuple = ()) -> np.ndarray:
    """Sorted, deduplicated value set the difference coder runs over."""
    v = params.value_bits
    if not hashed:
        return np.unique(truncate_many(dictionary.items, v))
    h64 = jenkins.hash16_many64(dictionary.items, seeds[0], seeds[1])
    return np.unique(jenkins.map_range64(h64, 1 << v))


def encode_differences(values: np.ndarray, width: int) -> tuple[np.ndarray, bool]:
    """Difference-code a sorted unique value array into width-bit fields."""
    m = np.uint64((1 << width) - 1)
    d = np.empty(values.size, dtype=np.uint64)
    d[0] = values[0]
    d[1:] = np.diff(values)
    p = np.zeros(values.size, dtype=np.uint64)
    nz = d > 0
    p[nz] = (d[nz] - np.uint64(1)) // m
    b = d - p * m
    total = int(p.sum()) + values.size
    fields = np.zeros(total, dtype=np.uint64)
    fields[np.cumsum(p + np.uint64(1)) - 1] = b
    return fields, bool(values[0] == 0)


def decode_differences(fields: np.ndarray, width: int, leading_zero: bool) -> np.ndarray:
    """Recover the value set from a difference field stream."""
    m = np.uint64((1 << width) - 1)
    steps = np.where(fields == 0, m, fields)
    real = fields != 0
    if leading_zero and fields.size:
        steps = steps.copy()
        steps[0] = 0
        real = real.copy()
        real[0] = True
    running = np.cumsum(steps, dtype=np.uint64)
    return running[real]


def build_seqdiff(dictionary: Dictionary, params: PmtParams,
                  hashed: bool = False, seed: int = 0,
                  mac_key: bytes | None = None) -> DictRepresentation:
    """Difference-coded representation; truncation by default, hashing on request."""
    if params.n != dictionary.n:
        raise ValueError("params.n must match the dictionary")
    w = params.epsilon + 2
    seeds = tuple(HashFamily.fresh(2, seed).seeds) if hashed else ()
    values = seqdiff_values(dictionary, params, hashed, seeds)
    fields, leading_zero = encode_differences(values, w)
    payload = bitpack.pack_fields(fields, w)
    return _finish_repr(
        kind=ReprKind.SEQDIFF, n=dictionary.n, n_prime=fields.size,
        epsilon=params.epsilon, item_bits=w, seeds=seeds, partitioned=False,
        hashed_values=hashed, leading_zero_value=leading_zero,
        payload=payload, stash=None, mac_key=mac_key)


def build_bloom(dictionary: Dictionary, params: PmtParams, seed: int = 0,
                partitioned: bool = False,
                mac_key: bytes | None = None) -> DictRepresentation:
    """Bloom filter representation with bloom_l hash positions per entry."""
    if params.n != dictionary.n:
        raise ValueError("params.n must match the dictionary")
    nbits = _round_bloom_bits(params.epsilon, dictionary.n)
    fam = HashFamily.fresh(params.bloom_l, seed)
    arr = bitpack.make_bit_array(nbits)
    for i in range(params.bloom_l):
        h = fam.hash_many(dictionary.items, i)
        pos = _bloom_positions(h, nbits, params.bloom_l, i, partitioned)
        bitpack.set_bits(arr, pos)
    return _finish_repr(
        kind=ReprKind.BLOOM, n=dictionary.n, n_prime=nbits,
        epsilon=params.epsilon, item_bits=1, seeds=tuple(fam.seeds),
        partitioned=partitioned, hashed_values=True, leading_zero_value=False,
        payload=arr.tobytes(), stash=None, mac_key=mac_key)


def _bloom_positions(h: np.ndarray, nbits: int, l: int, i: int, partitioned: bool):
    if not partitioned:
        return jenkins.map_range(h, nbits)
    seg = nbits // l
    return np.uint64(i * seg) + jenkins.map_range(h, seg)


def cuckoo_candidates(items: np.ndarray, seeds: tuple, slots: int,
                      partitioned: bool) -> np.ndarray:
    """(n, 4) candidate slot indices for each item."""
    out = np.empty((len(items), 4), dtype=np.uint64)
    fam = HashFamily(seeds)
    if partitioned:
        rs = slots // 4
        for i in range(4):
            out[:, i] = np.uint64(i * rs) + jenkins.map_range(fam.hash_many(items, i), rs)
    else:
        for i in range(4):
            out[:, i] = jenkins.map_range(fam.hash_many(items, i), slots)
    return out


def cuckoo_fingerprints(items: np.ndarray, width: int) -> np.ndarray:
    fp = truncate_many(items, width)
    return np.where(fp == 0, np.uint64(1), fp)


def build_cuckoo4(dictionary: Dictionary, params: PmtParams, seed: int = 0,
                  partitioned: bool = False,
                  stash_capacity: int = DEFAULT_STASH_CAPACITY,
                  max_kicks: int = DEFAULT_MAX_KICKS,
                  mac_key: bytes | None = None) -> DictRepresentation:
    """4-ary cuckoo table at ~97% load with random-walk insertion."""
    if params.n != dictionary.n:
        raise ValueError("params.n must match the dictionary")
    w = params.epsilon + 2
    if w > 32:
        raise ValueError("fingerprints wider than 32 bits are not supported")
    n = dictionary.n
    slots = cuckoo_slot_count(n, partitioned)
    fam = HashFamily.fresh(4, seed)
    cand = cuckoo_candidates(dictionary.items, tuple(fam.seeds), slots, partitioned)
    fp = cuckoo_fingerprints(dictionary.items, w)

    cand_l = cand.astype(np.int64).tolist()
    fp_l = fp.astype(np.int64).tolist()
    table = [0] * slots
    owner = [-1] * slots
    walk = random.Random(seed ^ 0x5F3759DF)
    stash_items = []
    for start in range(n):
        cur = start
        kicks = 0
        came_from = -1
        while True:
            c = cand_l[cur]
            placed = False
            for s in c:
                if table[s] == 0:
                    table[s] = fp_l[cur]
                    owner[s] = cur
                    placed = True
                    break
            if placed:
                break
            if kicks >= max_kicks:
                stash_items.append(cur)
                break
            # Never kick straight back into the slot this item was just
            # evicted from; the walk otherwise wastes steps undoing itself.
            if came_from in c:
                choices = [s for s in c if s != came_from]
                s = choices[walk.randrange(len(choices))]
            else:
                s = c[walk.randrange(4)]
            evicted = owner[s]
            table[s] = fp_l[cur]
            owner[s] = cur
            came_from = s
            cur = evicted
            kicks += 1
    entries = tuple((tuple(sorted(cand_l[i])), fp_l[i]) for i in stash_items)
    if len(entries) > stash_capacity:
        raise StashOverflow(
            f"{len(entries)} unplaced entries exceed stash capacity {stash_capacity}")
    stash = CuckooStash(capacity=stash_capacity, entries=entries)
    payload = bitpack.pack_fields(np.asarray(table, dtype=np.uint64), w)
    return _finish_repr(
        kind=ReprKind.CUCKOO4, n=n, n_prime=slots, epsilon=params.epsilon,
        item_bits=w, seeds=tuple(fam.seeds), partitioned=partitioned,
        hashed_values=False, leading_zero_value=False,
        payload=payload, stash=stash, mac_key=mac_key)


def _header_bytes(kind, n, n_prime, epsilon, item_bits, seeds, flags) -> bytes:
    head = bytearray()
    head += MAGIC
    head += struct.pack("<HBQQHBB", VERSION, int(kind), n, n_prime, epsilon,
                        item_bits, len(seeds))
    for s in seeds:
        head += struct.pack("<I", s)
    head += struct.pack("<B", flags)
    return bytes(head)


def _repr_flags(partitioned, leading_zero, hashed) -> int:
    return ((FLAG_PARTITIONED if partitioned else 0)
            | (FLAG_LEADING_ZERO if leading_zero else 0)
            | (FLAG_HASHED_VALUES if hashed else 0))


def _stash_trailer(stash: CuckooStash) -> bytes:
    out = struct.pack("<BB", stash.capacity, len(stash.entries))
    for slots4, fp in stash.entries:
        out += struct.pack("<IIIII", *slots4, fp)
    return out


def _finish_repr(*, kind, n, n_prime, epsilon, item_bits, seeds, partitioned,
                 hashed_values, leading_zero_value, payload, stash, mac_key):
    mac_key = mac_key or provider_mac_key()
    flags = _repr_flags(partitioned, leading_zero_value, hashed_values)
    head = _header_bytes(kind, n, n_prime, epsilon, item_bits, seeds, flags)
    body = payload + (_stash_trailer(stash) if stash is not None else b"")
    mac = _mac_bytes(mac_key, head + body)
    return DictRepresentation(
        kind=kind, n=n, n_prime=n_prime, epsilon=epsilon, item_bits=item_bits,
        seeds=tuple(seeds), partitioned=partitioned, hashed_values=hashed_values,
        leading_zero_value=leading_zero_value, payload=payload, stash=stash, mac=mac)


def serialize(rep: DictRepresentation) -> bytes:
    """Full CPMT byte stream: header (with MAC) followed by the payload."""
    flags = _repr_flags(rep.partitioned, rep.leading_zero_value, rep.hashed_values)
    head = _header_bytes(rep.kind, rep.n, rep.n_prime, rep.epsilon,
                         rep.item_bits, rep.seeds, flags)
    body = rep.payload + (_stash_trailer(rep.stash) if rep.stash is not None else b"")
    return head + rep.mac + body


def serialized_payload_offset(rep: DictRepresentation) -> int:
    """Byte offset of the payload within serialize(rep)'s output."""
    return 4 + struct.calcsize("<HBQQHBB") + 4 * len(rep.seeds) + 1 + 16


def deserialize(buf: bytes, mac_key: bytes | None = None,
                verify: bool = True) -> DictRepresentation:
    """Parse a CPMT stream; verify=False skips the MAC (public-side parsing)."""
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagic("not a CPMT stream")
    fixed = struct.calcsize("<HBQQHBB")
    if len(buf) < 4 + fixed:
        raise TruncatedPayload("header cut short")
    version, kind_v, n, n_prime, epsilon, item_bits, seed_count = struct.unpack_from(
        "<HBQQHBB", buf, 4)
    if version != VERSION:
        raise BadVersion(f"unsupported version {version}")
    try:
        kind = ReprKind(kind_v)
    except ValueError as e:
        raise ReprFormatError(f"unknown representation kind {kind_v}") from e
    off = 4 + fixed
    if len(buf) < off + 4 * seed_count + 1 + 16:
        raise TruncatedPayload("header cut short")
    seeds = tuple(struct.unpack_from("<I", buf, off + 4 * i)[0] for i in range(seed_count))
    off += 4 * seed_count
    flags = buf[off]
    off += 1
    mac = buf[off:off + 16]
    off += 16

    partitioned = bool(flags & FLAG_PARTITIONED)
    leading_zero = bool(flags & FLAG_LEADING_ZERO)
    hashed = bool(flags & FLAG_HASHED_VALUES)

    if kind == ReprKind.BLOOM:
        payload_len = (n_prime + 7) // 8
    else:
        payload_len = (n_prime * item_bits + 7) // 8
    stash = None
    body_len = payload_len
    if kind == ReprKind.CUCKOO4:
        if len(buf) < off + payload_len + 2:
            raise TruncatedPayload("payload cut short")
        capacity, count = struct.unpack_from("<BB", buf, off + payload_len)
        body_len = payload_len + 2 + 20 * count
    if len(buf) != off + body_len:
        raise TruncatedPayload("payload length mismatch")

    head = buf[:off - 16]
    body = buf[off:]
    if verify and not hmac_mod.compare_digest(
            _mac_bytes(mac_key or provider_mac_key(), head + body), mac):
        raise MacMismatch("representation MAC check failed")

    payload = body[:payload_len]
    if kind == ReprKind.CUCKOO4:
        entries = []
        pos = payload_len + 2
        for _ in range(count):
            vals = struct.unpack_from("<IIIII", body, pos)
            entries.append((tuple(vals[:4]), vals[4]))
            pos += 20
        stash = CuckooStash(capacity=capacity, entries=tuple(entries))
    return DictRepresentation(
        kind=kind, n=n, n_prime=n_prime, epsilon=epsilon, item_bits=item_bits,
        seeds=seeds, partitioned=partitioned, hashed_values=hashed,
        leading_zero_value=leading_zero, payload=payload, stash=stash, mac=bytes(mac))


def fpr_naive(n: int, epsilon: int) -> float:
    """False-positive rate of storing raw epsilon+log2(n) bit truncations."""
    return 1.0 - (1.0 - 1.0 / (n * 2.0 ** epsilon)) ** n


def fpr_bloom(n: int, nbits: int, l: int) -> float:
    """Classic Bloom filter false-positive rate."""
    return (1.0 - (1.0 - 1.0 / nbits) ** (n * l)) ** l


def fpr_cuckoo4(epsilon: int) -> float:
    """Union bound over four (epsilon+2)-bit fingerprint comparisons."""
    return 4.0 * 2.0 ** -(epsilon + 2)


def nominal_payload_bits(kind: ReprKind, n: int, epsilon: int) -> float:
    """Headline payload sizing used for capacity planning and size checks."""
    if kind == ReprKind.SEQDIFF:
        return 1.02 * (epsilon + 2) * n
    if kind == ReprKind.BLOOM:
        return float(_round_bloom_bits(epsilon, n))
    if kind == ReprKind.CUCKOO4:
        return float(cuckoo_slot_count(n) * (epsilon + 2))
    raise ValueError(kind)


def probe_seqdiff(rep: DictRepresentation, items: np.ndarray) -> np.ndarray:
    """Direct reference probe against a difference-coded payload."""
    fields = bitpack.unpack_fields(rep.payload, rep.n_prime, rep.item_bits)
    values = decode_differences(fields, rep.item_bits, rep.leading_zero_value)
    if rep.hashed_values:
        h64 = jenkins.hash16_many64(items, rep.seeds[0], rep.seeds[1])
        q = jenkins.map_range64(h64, 1 << rep.value_bits)
    else:
        q = truncate_many(items, rep.value_bits)
    idx = np.searchsorted(values, q)
    idx_c = np.minimum(idx, values.size - 1)
    return ((idx < values.size) & (values[idx_c] == q)).astype(np.uint8)


def probe_bloom(rep: DictRepresentation, items: np.ndarray) -> np.ndarray:
    """Direct reference probe against a Bloom payload."""
    arr = np.frombuffer(rep.payload, dtype=np.uint8)
    l = len(rep.seeds)
    fam = HashFamily(rep.seeds)
    out = np.ones(len(items), dtype=np.uint8)
    for i in range(l):
        pos = _bloom_positions(fam.hash_many(items, i), rep.n_prime, l, i, rep.partitioned)
        out &= bitpack.get_bits(arr, pos)
    return out


def probe_cuckoo4(rep: DictRepresentation, items: np.ndarray) -> np.ndarray:
    """Direct reference probe against a cuckoo table payload plus stash."""
    table = bitpack.unpack_fields(rep.payload, rep.n_prime, rep.item_bits)
    cand = cuckoo_candidates(items, rep.seeds, rep.table_slots, rep.partitioned)
    fp = cuckoo_fingerprints(items, rep.item_bits)
    hit = np.zeros(len(items), dtype=np.uint8)
    for i in range(4):
        hit |= (table[cand[:, i]] == fp).astype(np.uint8)
    if rep.stash is not None and rep.stash.entries:
        cand_sorted = np.sort(cand, axis=1)
        for slots4, efp in rep.stash.entries:
            match = fp == np.uint64(efp)
            for i in range(4):
                match &= cand_sorted[:, i] == np.uint64(slots4[i])
            hit |= match.astype(np.uint8)
    return hit


def probe_any(rep: DictRepresentation, items: np.ndarray) -> np.ndarray:
    if rep.kind == ReprKind.SEQDIFF:
        return probe_seqdiff(rep, items)
    if rep.kind == ReprKind.BLOOM:
        return probe_bloom(rep, items)
    return probe_cuckoo4(rep, items)


def query_value(rep: DictRepresentation, item: bytes) -> int:
    """Scalar transform of one query item into the sequence-difference domain."""
    item = check_item(item)
    if rep.hashed_values:
        return jenkins.map_range64(jenkins.hash64(item, rep.seeds[0], rep.seeds[1]),
                                   1 << rep.value_bits)
    return truncate_hash(item, rep.value_bits)
