"""Uniform-access page primitives and operation counters.

Enclave paging leaks at page granularity, so the engine keeps query state on
fixed-size pages and drives them with access patterns that depend only on
public quantities (occupancy, page count, chunk sizes, the public dictionary
payload). Data-independence is asserted over operation counts, not wall
clock: AccessCounter records per-page reads/writes, branch-free selects and
per-entry processing work, and tests require bit-identical counter snapshots
across runs that differ only in secret query values.

Accounting contract for the batch helpers (the per-item pointer-walk model of
the chunk algorithms):

* batch_search_mark: per probe, ceil(log2(page fill)) slot reads and selects
  plus exactly one slot write (matched slot or the reserved dummy slot).
* batch_capture: one slot read, one select and one slot write per chunk item.
* load / read_all / scan_update: every allocated slot touched exactly once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ceil_log2

DUMMY_KEY = (1 << 64) - 1
_M64 = (1 << 64) - 1

KIND_FREE = 0
KIND_REAL = 1
KIND_DUMMY = 2


class AccessCounter:
    """Counts secret-adjacent operations; snapshots must be run-invariant."""

    def __init__(self):
        self.pages = {}  # page id -> [reads, writes]
        self.selects = 0
        self.entry_ops = 0

    def page_io(self, page_id, reads=0, writes=0):
        slot = self.pages.setdefault(page_id, [0, 0])
        slot[0] += reads
        slot[1] += writes

    def select_ops(self, k):
        self.selects += int(k)

    def entry(self, k):
        self.entry_ops += int(k)

    def snapshot(self):
        per_page = tuple(sorted((pid, r, w) for pid, (r, w) in self.pages.items()))
        return (per_page, self.selects, self.entry_ops)

    def total_page_reads(self):
        return sum(r for r, _ in self.pages.values())

    def total_page_writes(self):
        return sum(w for _, w in self.pages.values())

    def total_page_ops(self):
        return self.total_page_reads() + self.total_page_writes()

    def totals(self) -> "CounterTotals":
        return CounterTotals(page_reads=self.total_page_reads(),
                             page_writes=self.total_page_writes(),
                             page_ops=self.total_page_ops(),
                             selects=self.selects, entry_ops=self.entry_ops)


@dataclass(frozen=True)
class CounterTotals:
    page_reads: int
    page_writes: int
    page_ops: int
    selects: int
    entry_ops: int


def ct_select(cond, a, b):
    """Branch-free select: cond picks a over b; both inputs are always read.

    Accepts ints (treated as 64-bit words with cond in {0,1}) or numpy arrays
    (cond boolean/0-1, elementwise).
    """
    if isinstance(cond, np.ndarray) or isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        c = np.asarray(cond).astype(np.uint64)
        mask = c * np.uint64(_M64)
        av = np.asarray(a, dtype=np.uint64)
        bv = np.asarray(b, dtype=np.uint64)
        return (av & mask) | (bv & ~mask)
    mask = (-(int(cond) & 1)) & _M64
    return ((int(a) & mask) | (int(b) & ~mask & _M64))


def ct_eq(a, b):
    """Branch-free equality for 64-bit words: returns 1 if equal else 0."""
    d = (int(a) ^ int(b)) & _M64
    # Fold the OR of all bits of d into bit 0.
    d |= d >> 32
    d |= d >> 16
    d |= d >> 8
    d |= d >> 4
    d |= d >> 2
    d |= d >> 1
    return (d & 1) ^ 1


@dataclass(frozen=True)
class ScanAction:
    """Update applied by page_scan_update where the probe matches."""

    op: str  # "or" | "set"
    value: int


class ObliviousPage:
    """Fixed-size page of sorted slots with one reserved dummy slot.

    `capacity` counts usable record slots; one extra slot is always allocated
    as the dummy that absorbs writes when nothing matches. The modeled packed
    record width `slot_bits` must satisfy (capacity+1)*slot_bits <= 8*page_bytes.
    """

    def __init__(self, page_id, capacity: int, slot_bits: int, counter: AccessCounter,
                 page_bytes: int = 4096):
        if capacity < 1:
            raise ValueError("page capacity must be positive")
        if (capacity + 1) * slot_bits > 8 * page_bytes:
            raise ValueError("slots do not fit the page")
        self.page_id = page_id
        self.capacity = capacity
        self.slot_bits = slot_bits
        self.page_bytes = page_bytes
        self.ctr = counter
        self.keys = np.full(capacity + 1, DUMMY_KEY, dtype=np.uint64)
        self.kinds = np.zeros(capacity + 1, dtype=np.uint8)
        self.aux = np.zeros(capacity + 1, dtype=np.uint64)
        self.fill = 0

    @property
    def dummy_slot(self) -> int:
        return self.capacity

    def load(self, keys: np.ndarray, kinds: np.ndarray, aux: np.ndarray):
        """Rewrite the whole page (every slot written once)."""
        f = len(keys)
        if f > self.capacity:
            raise ValueError("page overfull")
        self.keys[:] = DUMMY_KEY
        self.kinds[:] = KIND_FREE
        self.aux[:] = 0
        self.keys[:f] = keys
        self.kinds[:f] = kinds
        self.aux[:f] = aux
        self.fill = f
        self.ctr.page_io(self.page_id, writes=self.capacity + 1)

    def read_all(self):
        """Read the whole page (every slot read once)."""
        self.ctr.page_io(self.page_id, reads=self.capacity + 1)
        return (self.keys[:self.fill].copy(), self.kinds[:self.fill].copy(),
                self.aux[:self.fill].copy())

    def scan_update(self, probe: int, action: ScanAction) -> int:
        """Uniform full scan: every slot read and written once.

        The matched slot takes the real update, all others take a self-write,
        and the dummy slot absorbs the update when nothing matches. Counter
        deltas are a function of capacity alone.
        """
        eq = (self.kinds == KIND_REAL) & (self.keys == np.uint64(probe))
        val = np.uint64(action.value)
        if action.op == "or":
            updated = self.aux | val
        elif action.op == "set":
            updated = np.full_like(self.aux, val)
        else:
            raise ValueError(f"unknown scan op {action.op!r}")
        new_aux = ct_select(eq, updated, self.aux)
        matched = int(eq.any())
        # Dummy slot absorbs the write when no real slot matched.
        new_aux[self.dummy_slot] = ct_select(
            matched, int(new_aux[self.dummy_slot]),
            int(self.aux[self.dummy_slot] | val) if action.op == "or" else action.value)
        self.aux[:] = new_aux
        self.ctr.page_io(self.page_id, reads=self.capacity + 1, writes=self.capacity + 1)
        self.ctr.select_ops(self.capacity + 1)
        return matched

    def batch_search_mark(self, probes: np.ndarray):
        """Fixed-iteration binary search of each probe; mark matches.

        Iteration count depends only on the page fill (public), never on probe
        values: ceil(log2(fill)) rounds of the branch-free uniform search.
        """
        if self.fill == 0 or len(probes) == 0:
            return
        iters = max(1, ceil_log2(self.fill))
        size = 1 << iters
        padded = np.full(size, DUMMY_KEY, dtype=np.uint64)
        padded[:self.fill] = self.keys[:self.fill]
        base = np.zeros(len(probes), dtype=np.int64)
        length = size
        while length > 1:
            half = length >> 1
            cond = padded[base + (half - 1)] < probes
            base += cond * half
            length = half
        found = (padded[base] == probes) & (self.kinds[np.minimum(base, self.capacity)] == KIND_REAL)
        hit_idx = base[found]
        self.aux[hit_idx] |= np.uint64(1)
        self.ctr.page_io(self.page_id, reads=len(probes) * iters, writes=len(probes))
        self.ctr.select_ops(len(probes) * iters)

    def batch_capture(self, lo: int, hi: int, chunk_vals: np.ndarray, item_count: int):
        """Capture payload values for slots whose key lies in [lo, hi).

        Accounting follows the per-item pointer walk: one read, one select and
        one write (real or dummy) per chunk item.
        """
        i0 = int(np.searchsorted(self.keys[:self.fill], np.uint64(lo), side="left"))
        i1 = int(np.searchsorted(self.keys[:self.fill], np.uint64(hi), side="left"))
        if i1 > i0:
            sel = slice(i0, i1)
            real = self.kinds[sel] == KIND_REAL
            idx = (self.keys[sel] - np.uint64(lo)).astype(np.int64)
            vals = chunk_vals[np.minimum(idx, len(chunk_vals) - 1)]
            self.aux[sel] = ct_select(real, vals, self.aux[sel])
        self.ctr.page_io(self.page_id, reads=item_count, writes=item_count)
        self.ctr.select_ops(item_count)


def page_scan_update(page: ObliviousPage, probe: int, action: ScanAction) -> int:
    """Spec-level alias: uniform scan-and-update of one page."""
    return page.scan_update(probe, action)


def multi_page_uniform(pages, fn):
    """Apply fn to every page; assert identical per-page counter deltas."""
    pages = list(pages)
    if not pages:
        return []
    deltas = []
    results = []
    for p in pages:
        before = tuple(p.ctr.pages.get(p.page_id, [0, 0]))
        results.append(fn(p))
        after = tuple(p.ctr.pages.get(p.page_id, [0, 0]))
        deltas.append((after[0] - before[0], after[1] - before[1]))
    if len(set(deltas)) > 1:
        raise AssertionError(f"non-uniform page access: {deltas}")
    return results
