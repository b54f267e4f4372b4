#!/usr/bin/env python3
"""Carousel vs cuckoo-on-ORAM crossover scan.

Builds a 4-ary cuckoo table, serves it two ways — streamed through the
carousel (whole-table cost per batch cycle, independent of the batch
size m) and stored on a Path ORAM (cost linear in m at 4*levels*Z block
touches per query) — and reports the batch size m* where the carousel
becomes cheaper. Costs are counted entry units, so the scan is exact and
seed-stable. The default reproduces the n=2^20 operating point
(12-bit fingerprints, 3072-byte blocks -> 2048 slots/block, a complete
255-node tree, 128 block touches per query, m* = 5).

Example:
    python scripts/crossover_scan.py --n $((1<<20)) --block-bytes 3072
"""

from __future__ import annotations

import argparse
import time

from carousel_pmt.core import PmtParams, generate_dictionary
from carousel_pmt.bench import crossover_analysis
from carousel_pmt.oram import oram_init
from carousel_pmt.reprs import build_cuckoo4, serialize

DEFAULT_M = (1, 2, 3, 4, 5, 6, 8, 12, 16)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1 << 20, help="dictionary size")
    ap.add_argument("--epsilon", type=int, default=10)
    ap.add_argument("--seed", type=int, default=5)
    ap.add_argument("--block-bytes", type=int, default=3072,
                    help="ORAM block size; block bits must be a multiple of "
                         "the fingerprint width")
    ap.add_argument("--m-values", nargs="+", type=int, default=list(DEFAULT_M))
    args = ap.parse_args()

    t0 = time.perf_counter()
    dictionary = generate_dictionary(args.n, seed=13)
    params = PmtParams(n=args.n, epsilon=args.epsilon)
    rep = build_cuckoo4(dictionary, params, seed=args.seed)
    blob = serialize(rep)
    print(f"built cuckoo table: {rep.n_prime} slots, "
          f"{len(rep.payload)} payload bytes "
          f"({time.perf_counter() - t0:.1f}s)")

    # A complete tree gives every query the same path length, which the
    # linear extension in the analysis relies on.
    state = oram_init(rep, block_bytes=args.block_bytes, complete=True,
                      node_slack=1.0, seed=9)
    p = state.params
    print(f"oram: {p.node_count} nodes, {p.tree_levels} levels, "
          f"{state.trees[0].block_count} blocks of {p.block_bytes} bytes")

    rpt = crossover_analysis(blob, state, m_values=args.m_values, seed=4)
    print(f"\n{'m':>4}{'carousel_entry_ops':>20}{'oram_entry_units':>18}"
          f"{'measured':>10}{'cheaper':>10}")
    for row in rpt.rows:
        print(f"{row.m:>4}{row.carousel_entry_ops:>20}"
              f"{row.oram_entry_units:>18}{str(row.measured):>10}"
              f"{row.cheaper:>10}")
    print(f"\nblocks/query = {rpt.oram_blocks_per_query} "
          f"(4 * {p.tree_levels} levels * {p.blocks_per_node} blocks/node), "
          f"slots/block = {rpt.slots_per_block}")
    print(f"carousel cycle cost = {rpt.carousel_cycle_entry_ops} entry units")
    print(f"m* = {rpt.m_star}: ORAM cheaper below, carousel cheaper at or above")


if __name__ == "__main__":
    main()
