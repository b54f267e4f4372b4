"""Branch-free selects, uniform page access, and counter invariance."""

from __future__ import annotations

import numpy as np
import pytest

from carousel_pmt.oblivious import (DUMMY_KEY, KIND_FREE, KIND_REAL,
                                    AccessCounter, CounterTotals,
                                    ObliviousPage, ScanAction, ct_eq,
                                    ct_select, multi_page_uniform,
                                    page_scan_update)

import oracles

M64 = (1 << 64) - 1


# ---------------------------------------------------------------------------
# Branch-free primitives
# ---------------------------------------------------------------------------

def test_ct_select_scalar_edges():
    assert ct_select(1, 7, 9) == 7
    assert ct_select(0, 7, 9) == 9
    assert ct_select(1, M64, 0) == M64
    assert ct_select(0, M64, 0) == 0
    assert ct_select(1, 0, M64) == 0


def test_ct_select_matches_branch_oracle_bulk():
    rng = np.random.Generator(np.random.PCG64(42))
    n = 1_000_000
    cond = rng.integers(0, 2, size=n, dtype=np.uint64)
    a = rng.integers(0, 1 << 63, size=n, dtype=np.uint64)
    b = rng.integers(0, 1 << 63, size=n, dtype=np.uint64)
    got = ct_select(cond, a, b)
    want = np.where(cond.astype(bool), a, b)
    assert np.array_equal(got, want)
    for i in range(0, n, 100_000):
        assert int(got[i]) == oracles.branch_select(bool(cond[i]), int(a[i]), int(b[i]))


def test_ct_eq():
    assert ct_eq(0, 0) == 1
    assert ct_eq(M64, M64) == 1
    assert ct_eq(5, 6) == 0
    assert ct_eq(1 << 63, (1 << 63) - 1) == 0
    rng = np.random.Generator(np.random.PCG64(1))
    for _ in range(200):
        x = int(rng.integers(0, 1 << 63))
        y = int(rng.integers(0, 1 << 63))
        assert ct_eq(x, y) == (1 if x == y else 0)
        assert ct_eq(x, x) == 1


# ---------------------------------------------------------------------------
# Page construction and whole-page operations
# ---------------------------------------------------------------------------

def _page(capacity=8, slot_bits=64, counter=None, page_id="p0"):
    ctr = counter or AccessCounter()
    return ObliviousPage(page_id, capacity, slot_bits, ctr), ctr


def _load(page, keys, aux=None):
    keys = np.asarray(sorted(keys), dtype=np.uint64)
    kinds = np.full(len(keys), KIND_REAL, dtype=np.uint8)
    aux = np.zeros(len(keys), dtype=np.uint64) if aux is None else np.asarray(aux, dtype=np.uint64)
    page.load(keys, kinds, aux)


def test_page_validation():
    ctr = AccessCounter()
    with pytest.raises(ValueError):
        ObliviousPage("p", 0, 64, ctr)
    with pytest.raises(ValueError):
        ObliviousPage("p", 512, 64, ctr)  # (512+1)*64 > 8*4096
    ObliviousPage("p", 511, 64, ctr)  # exactly fits with the dummy slot


def test_load_and_read_all_touch_every_slot():
    page, ctr = _page(capacity=8)
    _load(page, [3, 1, 5])
    assert ctr.pages["p0"] == [0, 9]
    keys, kinds, aux = page.read_all()
    assert ctr.pages["p0"] == [9, 9]
    assert keys.tolist() == [1, 3, 5]
    assert kinds.tolist() == [KIND_REAL] * 3
    assert page.keys[page.dummy_slot] == DUMMY_KEY
    assert page.kinds[page.dummy_slot] == KIND_FREE


def test_page_overfull_rejected():
    page, _ = _page(capacity=2)
    with pytest.raises(ValueError):
        _load(page, [1, 2, 3])


# ---------------------------------------------------------------------------
# Uniform scan-and-update
# ---------------------------------------------------------------------------

def test_scan_update_counter_is_capacity_function():
    """Identical counter deltas whether the probe hits, misses, or is dummy."""
    snapshots = []
    for probe in (3, 4444, DUMMY_KEY - 1):
        page, ctr = _page(capacity=8)
        _load(page, [1, 3, 5])
        page.scan_update(probe, ScanAction("or", 2))
        snapshots.append(ctr.snapshot())
    assert snapshots[0] == snapshots[1] == snapshots[2]
    per_page, selects, entry_ops = snapshots[0]
    assert per_page == (("p0", 9, 9 + 9),)  # load writes + scan read/write
    assert selects == 9
    assert entry_ops == 0


def test_scan_update_semantics_or_and_set():
    page, _ = _page(capacity=4)
    _load(page, [10, 20, 30], aux=[1, 1, 1])
    assert page_scan_update(page, 20, ScanAction("or", 4)) == 1
    assert page.aux[:3].tolist() == [1, 5, 1]
    assert page.scan_update(30, ScanAction("set", 9)) == 1
    assert page.aux[:3].tolist() == [1, 5, 9]
    # A miss routes the write to the dummy slot, real slots are self-written.
    assert page.scan_update(99, ScanAction("or", 8)) == 0
    assert page.aux[:3].tolist() == [1, 5, 9]
    assert int(page.aux[page.dummy_slot]) & 8


def test_scan_update_rejects_unknown_op():
    page, _ = _page(capacity=2)
    _load(page, [1])
    with pytest.raises(ValueError):
        page.scan_update(1, ScanAction("xor", 1))


# ---------------------------------------------------------------------------
# Batch search / capture accounting
# ---------------------------------------------------------------------------

def test_batch_search_mark_hits_and_counts():
    page, ctr = _page(capacity=16)
    _load(page, [2, 4, 8, 16, 32, 64, 128])
    probes = np.array([4, 5, 128, 2, 1000], dtype=np.uint64)
    page.batch_search_mark(probes)
    marked = {int(k) for k, a in zip(page.keys[:page.fill], page.aux[:page.fill]) if a & 1}
    assert marked == {4, 128, 2}
    iters = max(1, (page.fill - 1).bit_length())  # ceil(log2(7)) == 3
    assert iters == 3
    assert ctr.pages["p0"] == [len(probes) * iters, 17 + len(probes)]
    assert ctr.selects == len(probes) * iters


def test_batch_search_iterations_follow_fill_not_values():
    for fill, iters in ((1, 1), (2, 1), (3, 2), (8, 3), (9, 4)):
        page, ctr = _page(capacity=16)
        _load(page, list(range(10, 10 + 2 * fill, 2)))
        page.batch_search_mark(np.array([11], dtype=np.uint64))
        assert ctr.pages["p0"][0] == iters, f"fill={fill}"


def test_batch_search_empty_cases():
    page, ctr = _page(capacity=4)
    page.batch_search_mark(np.array([1], dtype=np.uint64))  # fill == 0
    _load(page, [5])
    page.batch_search_mark(np.array([], dtype=np.uint64))  # no probes
    assert ctr.pages["p0"] == [0, 5]  # only the load


def test_batch_capture_values_and_counts():
    page, ctr = _page(capacity=8)
    _load(page, [100, 102, 107])
    chunk = np.arange(1000, 1010, dtype=np.uint64)  # values for keys 100..109
    page.batch_capture(100, 110, chunk, item_count=10)
    assert page.aux[:3].tolist() == [1000, 1002, 1007]
    assert ctr.pages["p0"] == [10, 9 + 10]
    assert ctr.selects == 10


def test_batch_capture_out_of_range_untouched():
    page, ctr = _page(capacity=8)
    _load(page, [5, 500], aux=[7, 7])
    page.batch_capture(100, 110, np.zeros(10, dtype=np.uint64), item_count=10)
    assert page.aux[:2].tolist() == [7, 7]
    assert ctr.pages["p0"] == [10, 9 + 10]


# ---------------------------------------------------------------------------
# Counter invariance and totals
# ---------------------------------------------------------------------------

def test_counter_snapshot_invariant_under_secret_values():
    """Same workload shape, different secret probe values: identical counters."""
    def run(probe_vals, key_base):
        ctr = AccessCounter()
        pages = [ObliviousPage(i, 8, 64, ctr) for i in range(4)]
        for i, p in enumerate(pages):
            _load(p, [key_base + i * 10 + j for j in range(5)])
        for p in pages:
            p.batch_search_mark(np.asarray(probe_vals, dtype=np.uint64))
            p.scan_update(int(probe_vals[0]), ScanAction("or", 2))
            p.batch_capture(0, 8, np.arange(8, dtype=np.uint64), 8)
        ctr.entry(3)
        return ctr.snapshot()

    a = run([11, 12, 13], key_base=10)
    b = run([900, 17, 4], key_base=30)
    assert a == b


def test_totals_arithmetic():
    ctr = AccessCounter()
    ctr.page_io("a", reads=3, writes=1)
    ctr.page_io("b", reads=2)
    ctr.select_ops(5)
    ctr.entry(7)
    assert ctr.totals() == CounterTotals(page_reads=5, page_writes=1,
                                         page_ops=6, selects=5, entry_ops=7)


# ---------------------------------------------------------------------------
# Multi-page uniformity guard
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("k", range(1, 9))
def test_multi_page_uniform_accepts_uniform_work(k):
    ctr = AccessCounter()
    pages = [ObliviousPage(i, 4, 64, ctr) for i in range(k)]
    for p in pages:
        _load(p, [1, 2])
    results = multi_page_uniform(
        pages, lambda p: p.scan_update(1, ScanAction("or", 1)))
    assert len(results) == k


def test_multi_page_uniform_rejects_skewed_work():
    ctr = AccessCounter()
    pages = [ObliviousPage(i, 4, 64, ctr) for i in range(2)]
    for p in pages:
        _load(p, [1])

    def skewed(p):
        if p.page_id == 1:
            p.read_all()
        return p.scan_update(1, ScanAction("or", 1))

    with pytest.raises(AssertionError):
        multi_page_uniform(pages, skewed)


def test_multi_page_uniform_empty():
    assert multi_page_uniform([], lambda p: p) == []
