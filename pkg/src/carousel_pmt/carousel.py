"""Carousel trusted-application engine.

The dictionary payload is public and cycles through the TA in fixed chunks.
Queries are transformed into the representation's domain on admission, held
in a sorted, dummy-padded set on oblivious pages, matched while the payload
streams past, and answered after exactly one full cycle (num_chunks chunk
invocations counting the arrival chunk). All state mutations route through
the oblivious page primitives so operation counts depend only on arrival
times and occupancy, never on query values.
"""

from __future__ import annotations

import hashlib
import hmac as hmac_mod
from dataclasses import dataclass, replace

import numpy as np

from . import bitpack, jenkins
from .core import HashFamily, check_item, truncate_many
from .oblivious import (DUMMY_KEY, KIND_DUMMY, KIND_REAL, AccessCounter,
                        ObliviousPage, ct_select)
from .reprs import (DictRepresentation, MacMismatch, ReprKind,
                    _bloom_positions, _header_bytes, _repr_flags,
                    _stash_trailer, cuckoo_candidates, cuckoo_fingerprints,
                    deserialize, provider_mac_key)

SLOT_BITS = {ReprKind.SEQDIFF: 64, ReprKind.CUCKOO4: 48, ReprKind.BLOOM: 40}

# Deployments always stream every entry; the other patterns exist only for
# the access-pattern microbenchmark.
PRODUCTION_PATTERN = "full"


class CapacityExceeded(Exception):
    """Admission refused for part of a batch; retriable once occupancy drops.

    Carries the prefix that still fit (`admitted`, already merged into the
    query set) and the refused ids (`rejected`) so the host can answer them
    with a retriable status.
    """

    def __init__(self, admitted, rejected):
        super().__init__(f"{len(rejected)} queries over capacity")
        self.admitted = list(admitted)
        self.rejected = list(rejected)


def default_queries_per_page(kind: ReprKind, partitioned: bool = False,
                             page_bytes: int = 4096, bloom_l: int = 10) -> int:
    """Per-page query capacity under the enclave-page record sizing profile."""
    scale = page_bytes // 4096
    if scale < 1:
        raise ValueError("page_bytes below the 4 KB profile")
    if kind == ReprKind.SEQDIFF:
        return 500 * scale
    if kind == ReprKind.CUCKOO4:
        return (680 if partitioned else 170) * scale
    if kind == ReprKind.BLOOM:
        return page_bytes // (bloom_l * 5)
    raise ValueError(kind)


def default_capacity(kind: ReprKind) -> int:
    """Conservative private-memory capacity profile (max concurrent queries)."""
    return {ReprKind.SEQDIFF: 12800, ReprKind.CUCKOO4: 4500, ReprKind.BLOOM: 1750}[kind]


@dataclass(frozen=True)
class TaConfig:
    kind: ReprKind
    capacity: int
    queries_per_page: int
    chunk_bytes: int = 1 << 20
    page_bytes: int = 4096
    bloom_l: int = 10

    def __post_init__(self):
        if self.capacity < 1 or self.queries_per_page < 1:
            raise ValueError("capacity and queries_per_page must be positive")


def ta_config_for(rep: DictRepresentation, chunk_bytes: int = 1 << 20,
                  capacity: int | None = None, queries_per_page: int | None = None,
                  page_bytes: int = 4096) -> TaConfig:
    bloom_l = len(rep.seeds) if rep.kind == ReprKind.BLOOM else 10
    qpp = queries_per_page or default_queries_per_page(
        rep.kind, rep.partitioned, page_bytes, bloom_l)
    return TaConfig(kind=rep.kind, capacity=capacity or default_capacity(rep.kind),
                    queries_per_page=qpp, chunk_bytes=chunk_bytes,
                    page_bytes=page_bytes, bloom_l=bloom_l)


@dataclass(frozen=True)
class ChunkSpan:
    pos: int        # position within the cycle
    byte_lo: int
    byte_hi: int
    item_lo: int    # first field / byte / slot index covered
    item_count: int


@dataclass(frozen=True)
class ChunkPlan:
    spans: tuple

    @property
    def num_chunks(self) -> int:
        return len(self.spans)


def chunk_plan(rep: DictRepresentation, chunk_bytes: int) -> ChunkPlan:
    """Deterministic partition of the payload into byte-aligned chunks.

    Chunk boundaries land on whole fields and whole bytes so the service can
    slice the serialized payload directly.
    """
    payload_len = rep.payload_bytes_expected()
    spans = []
    if rep.kind == ReprKind.BLOOM:
        pos = 0
        for lo in range(0, payload_len, chunk_bytes):
            hi = min(lo + chunk_bytes, payload_len)
            spans.append(ChunkSpan(pos, lo, hi, lo, hi - lo))
            pos += 1
        return ChunkPlan(tuple(spans))
    w = rep.item_bits
    align = bitpack.fields_per_byte_align(w)
    per = (chunk_bytes * 8 // w) // align * align
    if per < 1:
        raise ValueError("chunk_bytes too small for one field")
    total = rep.n_prime
    pos = 0
    lo_item = 0
    while lo_item < total:
        count = min(per, total - lo_item)
        byte_lo = lo_item * w // 8
        byte_hi = min((lo_item + count) * w + 7, total * w + 7) // 8
        if lo_item + count == total:
            byte_hi = payload_len
        spans.append(ChunkSpan(pos, byte_lo, byte_hi, lo_item, count))
        pos += 1
        lo_item += count
    return ChunkPlan(tuple(spans))


@dataclass
class QueryRecord:
    query_id: int
    arrival_chunk: int
    keys: tuple          # per-region uint64 arrays of representation entries
    offsets: np.ndarray | None   # bloom: bit offset within the captured byte
    fingerprint: int     # cuckoo field value expected on a hit
    stash_hit: int       # cuckoo: 1 if the build-time stash already answers


@dataclass
class InvokeResult:
    chunk_index: int
    responses: list      # (query_id, bit) released this invocation
    rejected: list       # query_ids refused at admission
    item_count: int


class RepSet:
    """Sorted, dummy-padded query representation set spread over pages."""

    def __init__(self, regions: int, entries_per_page: int, slot_bits: int,
                 counter: AccessCounter, page_bytes: int):
        self.regions = regions
        self.epp = entries_per_page
        self.slot_bits = slot_bits
        self.page_bytes = page_bytes
        self.ctr = counter
        self.pages = [[] for _ in range(regions)]

    def all_pages(self):
        for group in self.pages:
            yield from group

    def page_count(self) -> int:
        return sum(len(g) for g in self.pages)

    def read_region(self, r: int):
        """Counted read of a region's real entries: (keys, aux), sorted."""
        keys, aux = [], []
        for page in self.pages[r]:
            k, kinds, a = page.read_all()
            real = kinds == KIND_REAL
            keys.append(k[real])
            aux.append(a[real])
        if not keys:
            return np.empty(0, np.uint64), np.empty(0, np.uint64)
        return np.concatenate(keys), np.concatenate(aux)

    def rebuild(self, links_per_region):
        """Re-lay every region from the active queries' link multisets.

        Entry count per region is exactly the summed link multiplicity, so the
        set size is a deterministic function of occupancy; dummies pad the
        difference after deduplication and sort to the tail.
        """
        for r in range(self.regions):
            links = links_per_region[r]
            total = int(len(links))
            old_keys, old_aux = self.read_region(r)
            uniq = np.unique(links) if total else np.empty(0, np.uint64)
            aux = np.zeros(len(uniq), dtype=np.uint64)
            if len(old_keys) and len(uniq):
                idx = np.searchsorted(uniq, old_keys)
                idx_c = np.minimum(idx, len(uniq) - 1)
                carried = uniq[idx_c] == old_keys
                aux[idx_c[carried]] = old_aux[carried]
            dummies = total - len(uniq)
            keys_full = np.concatenate([uniq, np.full(dummies, DUMMY_KEY, np.uint64)])
            kinds_full = np.concatenate([
                np.full(len(uniq), KIND_REAL, np.uint8),
                np.full(dummies, KIND_DUMMY, np.uint8)])
            aux_full = np.concatenate([aux, np.zeros(dummies, np.uint64)])
            npages = -(-total // self.epp) if total else 0
            group = self.pages[r]
            while len(group) < npages:
                group.append(ObliviousPage((r, len(group)), self.epp, self.slot_bits,
                                           self.ctr, self.page_bytes))
            del group[npages:]
            for i in range(npages):
                sl = slice(i * self.epp, min((i + 1) * self.epp, total))
                group[i].load(keys_full[sl], kinds_full[sl], aux_full[sl])

    def lookup_maps(self):
        """Counted read of all regions for finalization: per-region (keys, aux)."""
        return [self.read_region(r) for r in range(self.regions)]


class CarouselTa:
    """One trusted-application instance running the carousel protocol.

    Holds only private state (query records, the page set, channel material
    fed in by the host wrapper) plus the public representation header. The
    payload itself stays outside; each cycle's chunks are re-MACed as they
    stream through and verified against the registered MAC at every wrap.
    """

    def __init__(self, serialized_repr: bytes, config: TaConfig | None = None,
                 mac_key: bytes | None = None, chunk_bytes: int | None = None):
        mac_key = mac_key or provider_mac_key()
        rep = deserialize(serialized_repr, mac_key)  # MacMismatch aborts registration
        self.meta = replace(rep, payload=b"")
        self._payload_len = rep.payload_bytes_expected()
        self.config = config or ta_config_for(
            rep, chunk_bytes=chunk_bytes or (1 << 20))
        if self.config.kind != rep.kind:
            raise ValueError("config kind does not match the representation")
        self.mac_key = mac_key
        self.plan = chunk_plan(rep, self.config.chunk_bytes)
        self.counter = AccessCounter()
        self.regions = 4 if (rep.kind == ReprKind.CUCKOO4 and rep.partitioned) else 1
        epp = self.config.queries_per_page * self.entries_per_query // self.regions
        self.repset = RepSet(self.regions, epp, SLOT_BITS[rep.kind],
                             self.counter, self.config.page_bytes)
        self.queries = {}
        self.next_chunk = 0
        self._run_value = 0
        self._cycle_mac = None
        self._head = _header_bytes(
            rep.kind, rep.n, rep.n_prime, rep.epsilon, rep.item_bits, rep.seeds,
            _repr_flags(rep.partitioned, rep.leading_zero_value, rep.hashed_values))
        self._trailer = _stash_trailer(rep.stash) if rep.stash is not None else b""
        self._mac = rep.mac
        self._stash_table = self._stash_arrays(rep)

    @staticmethod
    def _stash_arrays(rep):
        if rep.kind != ReprKind.CUCKOO4 or rep.stash is None or not rep.stash.entries:
            return None
        slots = np.array([e[0] for e in rep.stash.entries], dtype=np.uint64)
        fps = np.array([e[1] for e in rep.stash.entries], dtype=np.uint64)
        return slots, fps

    @property
    def entries_per_query(self) -> int:
        if self.meta.kind == ReprKind.SEQDIFF:
            return 1
        if self.meta.kind == ReprKind.BLOOM:
            return len(self.meta.seeds)
        return 4

    @property
    def num_chunks(self) -> int:
        return self.plan.num_chunks

    def occupancy(self) -> int:
        return len(self.queries)

    # -- admission ---------------------------------------------------------

    def admit_queries(self, new_queries, chunk_index: int):
        """Admit the batch and return the admitted query ids.

        new_queries: iterable of (query_id, 16-byte item). Queries beyond the
        capacity headroom raise CapacityExceeded; the fitting prefix is still
        admitted and both id lists ride on the exception.
        """
        new_queries = list(new_queries)
        room = self.config.capacity - self.occupancy()
        admitted = new_queries[:max(room, 0)]
        rejected = [qid for qid, _ in new_queries[max(room, 0):]]
        if admitted:
            items = np.frombuffer(b"".join(check_item(it) for _, it in admitted),
                                  dtype=np.uint8).reshape(len(admitted), 16)
            records = self._transform(items, [qid for qid, _ in admitted], chunk_index)
            for rec in records:
                self.queries[rec.query_id] = rec
            self._rebuild()
        if rejected:
            raise CapacityExceeded([qid for qid, _ in admitted], rejected)
        return [qid for qid, _ in admitted]

    def _transform(self, items: np.ndarray, qids, chunk_index: int):
        meta = self.meta
        k = len(items)
        records = []
        if meta.kind == ReprKind.SEQDIFF:
            if meta.hashed_values:
                h64 = jenkins.hash16_many64(items, meta.seeds[0], meta.seeds[1])
                vals = jenkins.map_range64(h64, 1 << meta.value_bits)
            else:
                vals = truncate_many(items, meta.value_bits)
            for j in range(k):
                records.append(QueryRecord(qids[j], chunk_index,
                                           (vals[j:j + 1].copy(),), None, 0, 0))
        elif meta.kind == ReprKind.BLOOM:
            l = len(meta.seeds)
            fam = HashFamily(meta.seeds)
            pos = np.empty((k, l), dtype=np.uint64)
            for i in range(l):
                h = fam.hash_many(items, i)
                pos[:, i] = _bloom_positions(h, meta.n_prime, l, i, meta.partitioned)
            byte_keys = pos >> np.uint64(3)
            offsets = (pos & np.uint64(7)).astype(np.uint8)
            for j in range(k):
                records.append(QueryRecord(qids[j], chunk_index,
                                           (byte_keys[j].copy(),), offsets[j].copy(), 0, 0))
        else:
            cand = cuckoo_candidates(items, meta.seeds, meta.table_slots, meta.partitioned)
            fps = cuckoo_fingerprints(items, meta.item_bits)
            hits = self._stash_scan(cand, fps)
            for j in range(k):
                if self.regions == 4:
                    keys = tuple(cand[j, i:i + 1].copy() for i in range(4))
                else:
                    keys = (cand[j].copy(),)
                records.append(QueryRecord(qids[j], chunk_index, keys, None,
                                           int(fps[j]), int(hits[j])))
        return records

    def _stash_scan(self, cand: np.ndarray, fps: np.ndarray) -> np.ndarray:
        """Fixed-cost scan of the build-time stash for every admitted query."""
        hits = np.zeros(len(cand), dtype=np.uint64)
        stash_cap = self.meta.stash.capacity if self.meta.stash else 0
        if self._stash_table is not None:
            slots, efps = self._stash_table
            cs = np.sort(cand, axis=1)
            for e in range(len(efps)):
                match = fps == efps[e]
                for i in range(4):
                    match &= cs[:, i] == slots[e, i]
                hits = ct_select(match, np.uint64(1), hits)
        # Empty stash lines still cost a select each: scan length is the
        # fixed capacity, not the data-dependent entry count.
        self.counter.select_ops(stash_cap * len(cand))
        return hits

    def _active_links(self):
        links = [[] for _ in range(self.regions)]
        for rec in self.queries.values():
            for r in range(self.regions):
                links[r].append(rec.keys[r] if self.regions > 1 else rec.keys[0])
        return [np.concatenate(g) if g else np.empty(0, np.uint64) for g in links]

    def _rebuild(self):
        self.repset.rebuild(self._active_links())

    # -- chunk processing ----------------------------------------------------

    def invoke(self, chunk: bytes, new_queries=(), pattern: str = "full") -> InvokeResult:
        """One carousel step: admit, stream the chunk, release due queries.

        pattern selects bench-only access shapes: "invoke_only" returns after
        metadata handling, "one_per_page" touches a single byte per page of
        the chunk; both skip query work and exist for timing comparisons.
        """
        idx = self.next_chunk
        span = self.plan.spans[idx % self.num_chunks]
        if len(chunk) != span.byte_hi - span.byte_lo:
            raise ValueError("chunk length does not match the plan")
        self.next_chunk += 1
        if pattern == "invoke_only":
            return InvokeResult(idx, [], [], span.item_count)
        if pattern == "one_per_page":
            touched = np.frombuffer(chunk, dtype=np.uint8)[::self.config.page_bytes]
            int(touched.astype(np.uint64).sum())
            self.counter.entry(len(touched))
            return InvokeResult(idx, [], [], span.item_count)
        if pattern != PRODUCTION_PATTERN:
            raise ValueError(f"unknown access pattern {pattern!r}")

        self._mac_step(span, chunk)
        try:
            rejected = []
            self.admit_queries(new_queries, idx)
        except CapacityExceeded as refusal:
            rejected = refusal.rejected
        self._process(span, chunk)
        responses = self.finalize_due(idx)
        return InvokeResult(idx, responses, rejected, span.item_count)

    def _mac_step(self, span: ChunkSpan, chunk: bytes):
        if span.pos == 0:
            self._cycle_mac = hmac_mod.new(self.mac_key, self._head, hashlib.sha256)
        if self._cycle_mac is not None:
            self._cycle_mac.update(chunk)
            if span.pos == self.num_chunks - 1:
                self._cycle_mac.update(self._trailer)
                if not hmac_mod.compare_digest(self._cycle_mac.digest()[:16], self._mac):
                    raise MacMismatch("payload stream diverged from registered MAC")
                self._cycle_mac = None

    def _process(self, span: ChunkSpan, chunk: bytes):
        kind = self.meta.kind
        self.counter.entry(span.item_count)
        if kind == ReprKind.SEQDIFF:
            self._process_seqdiff(span, chunk)
        elif kind == ReprKind.BLOOM:
            vals = np.frombuffer(chunk, dtype=np.uint8).astype(np.uint64)
            for page in self.repset.pages[0]:
                page.batch_capture(span.item_lo, span.item_lo + span.item_count,
                                   vals, span.item_count)
        else:
            self._process_cuckoo(span, chunk)

    def _process_seqdiff(self, span: ChunkSpan, chunk: bytes):
        w = self.meta.item_bits
        m = np.uint64((1 << w) - 1)
        fields = bitpack.unpack_fields(chunk, span.item_count, w)
        if span.pos == 0:
            self._run_value = 0
        steps = np.where(fields == 0, m, fields)
        real = fields != 0
        if span.pos == 0 and self.meta.leading_zero_value and fields.size:
            steps = steps.copy()
            steps[0] = 0
            real = real.copy()
            real[0] = True
        running = np.uint64(self._run_value) + np.cumsum(steps, dtype=np.uint64)
        if fields.size:
            self._run_value = int(running[-1])
        probes = running[real]
        for page in self.repset.pages[0]:
            page.batch_search_mark(probes)

    def _process_cuckoo(self, span: ChunkSpan, chunk: bytes):
        w = self.meta.item_bits
        fields = bitpack.unpack_fields(chunk, span.item_count, w)
        lo = span.item_lo
        hi = span.item_lo + span.item_count
        if self.regions == 1:
            for page in self.repset.pages[0]:
                page.batch_capture(lo, hi, fields, span.item_count)
            return
        rs = self.meta.region_slots
        r0 = lo // rs
        r1 = (hi - 1) // rs
        for r in range(r0, min(r1, 3) + 1):
            seg_lo = max(lo, r * rs)
            seg_hi = min(hi, (r + 1) * rs)
            seg = fields[seg_lo - lo:seg_hi - lo]
            for page in self.repset.pages[r]:
                page.batch_capture(seg_lo, seg_hi, seg, seg_hi - seg_lo)

    # -- release -------------------------------------------------------------

    def finalize_due(self, chunk_index: int):
        """Answer and evict every query whose full cycle ends at this chunk."""
        due = [rec for rec in self.queries.values()
               if rec.arrival_chunk + self.num_chunks == chunk_index + 1]
        if not due:
            return []
        maps = self.repset.lookup_maps()
        responses = []
        for rec in due:
            responses.append((rec.query_id, self._answer(rec, maps)))
            del self.queries[rec.query_id]
        self._rebuild()
        return responses

    def _answer(self, rec: QueryRecord, maps) -> int:
        kind = self.meta.kind
        if kind == ReprKind.SEQDIFF:
            keys, aux = maps[0]
            pos = int(np.searchsorted(keys, rec.keys[0][0]))
            return int(aux[pos]) & 1 if pos < len(keys) and keys[pos] == rec.keys[0][0] else 0
        if kind == ReprKind.BLOOM:
            keys, aux = maps[0]
            idx = np.searchsorted(keys, rec.keys[0])
            captured = aux[np.minimum(idx, max(len(keys) - 1, 0))]
            bits = (captured >> rec.offsets.astype(np.uint64)) & np.uint64(1)
            return int(bits.all())
        hit = rec.stash_hit
        for r in range(self.regions):
            keys, aux = maps[r] if self.regions > 1 else maps[0]
            local = rec.keys[r] if self.regions > 1 else rec.keys[0]
            idx = np.searchsorted(keys, local)
            got = aux[np.minimum(idx, max(len(keys) - 1, 0))]
            hit |= int(((got == np.uint64(rec.fingerprint)) & (keys[np.minimum(idx, max(len(keys) - 1, 0))] == local)).any())
        return int(hit)
