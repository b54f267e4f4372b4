#!/usr/bin/env python3
"""Counted cost vs batch size for the carousel schemes.

Builds one dictionary, serializes each requested representation, and
records deterministic operation counts while sweeping the number of
queries admitted at the start of a cycle. Entry ops (representation
entries touched per full cycle) are independent of the batch size; page
ops grow by exactly one page quantum at every multiple of the scheme's
queries-per-page capacity. The capture schemes (bloom, cuckoo) are flat
between boundaries; the difference-sequence scheme adds a fill-dependent
search term, so only its boundary jumps are exact multiples. The sweep
points straddle the first three boundaries.

Example:
    python scripts/batch_cost_curves.py --n 4096 --epsilon 14 --csv steps.csv
"""

from __future__ import annotations

import argparse

from carousel_pmt.bench import bench_batch, build_scheme, write_csv
from carousel_pmt.carousel import ta_config_for
from carousel_pmt.core import PmtParams, generate_dictionary
from carousel_pmt.reprs import serialize

DEFAULT_SCHEMES = ("seqdiff", "bloom", "cuckoo", "cuckoo-part")


def sweep_points(qpp: int, capacity: int) -> list[int]:
    """Batch sizes straddling the first three query-page boundaries."""
    pts = [1, qpp // 2, qpp, qpp + 1, 2 * qpp, 2 * qpp + 1, 3 * qpp, 3 * qpp + 1]
    return sorted({m for m in pts if 1 <= m <= capacity})


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=4096, help="dictionary size")
    ap.add_argument("--epsilon", type=int, default=14)
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--chunk-bytes", type=int, default=4096)
    ap.add_argument("--schemes", nargs="+", default=list(DEFAULT_SCHEMES))
    ap.add_argument("--csv", help="also write the raw records here")
    args = ap.parse_args()

    dictionary = generate_dictionary(args.n, seed=args.seed)
    params = PmtParams(n=args.n, epsilon=args.epsilon)
    records = []
    print(f"{'scheme':<14}{'m':>6}{'entry_ops':>12}{'page_ops':>10}{'wall_us':>10}")
    for scheme in args.schemes:
        rep = build_scheme(scheme, dictionary, params, seed=args.seed)
        blob = serialize(rep)
        cfg = ta_config_for(rep, chunk_bytes=args.chunk_bytes)
        for m in sweep_points(cfg.queries_per_page, cfg.capacity):
            rec = bench_batch(scheme, blob, m, seed=args.seed,
                              chunk_bytes=args.chunk_bytes)[0]
            records.append(rec)
            print(f"{scheme:<14}{m:>6}{rec.entry_ops:>12}{rec.page_ops:>10}"
                  f"{rec.wall_us:>10}")
        print(f"{'':<14}{'(queries/page: ' + str(cfg.queries_per_page) + ')'}")
    if args.csv:
        write_csv(records, args.csv)
        print(f"wrote {len(records)} records to {args.csv}")


if __name__ == "__main__":
    main()
