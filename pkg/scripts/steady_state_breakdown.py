#!/usr/bin/env python3
"""Steady-state arrival sweep around the measured service capacity.

Measures the largest batch the trusted application releases in one cycle
(the per-cycle service capacity C), then runs sustained arrivals at a
range of rates around C and reports whether the breakdown detector
fires. Below C the occupancy stays bounded; above C it grows without
limit and the run is flagged, either by the occupancy-trend regression
or by admission hitting capacity.

Example:
    python scripts/steady_state_breakdown.py --capacity 400 --cycles 500
"""

from __future__ import annotations

import argparse

from carousel_pmt.bench import bench_steady, service_capacity_per_cycle
from carousel_pmt.carousel import ta_config_for
from carousel_pmt.core import PmtParams, generate_dictionary
from carousel_pmt.reprs import build_seqdiff, serialize

DEFAULT_FRACTIONS = (0.5, 0.8, 0.9, 1.0, 1.05, 1.1, 1.2)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=4096, help="dictionary size")
    ap.add_argument("--epsilon", type=int, default=10)
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--chunk-bytes", type=int, default=1024)
    ap.add_argument("--capacity", type=int, default=400,
                    help="query slots configured in the TA")
    ap.add_argument("--cycles", type=int, default=500)
    ap.add_argument("--arrivals", choices=("uniform", "poisson"),
                    default="uniform")
    ap.add_argument("--fractions", nargs="+", type=float,
                    default=list(DEFAULT_FRACTIONS),
                    help="arrival rates as fractions of measured capacity")
    args = ap.parse_args()

    dictionary = generate_dictionary(args.n, seed=args.seed)
    params = PmtParams(n=args.n, epsilon=args.epsilon)
    rep = build_seqdiff(dictionary, params, seed=args.seed)
    blob = serialize(rep)
    cfg = ta_config_for(rep, chunk_bytes=args.chunk_bytes,
                        capacity=args.capacity)
    cap = service_capacity_per_cycle(blob, config=cfg,
                                     chunk_bytes=args.chunk_bytes)
    print(f"measured service capacity: {cap} queries/cycle "
          f"({cfg.capacity} slots, {args.arrivals} arrivals)\n")

    print(f"{'rate':>8}{'rate/C':>8}{'flagged':>9}{'mode':>12}"
          f"{'flag_cycle':>12}{'final_occ':>11}{'hit_frac':>10}")
    for frac in args.fractions:
        rate = frac * cap
        records, report = bench_steady(
            "seqdiff", blob, rate=rate, cycles=args.cycles, seed=args.seed,
            config=cfg, chunk_bytes=args.chunk_bytes,
            arrival_process=args.arrivals)
        final_occ = records[-1].occupancy if records else 0
        print(f"{rate:>8.1f}{frac:>8.2f}{str(report.flagged):>9}"
              f"{report.mode or '-':>12}"
              f"{report.first_flag_cycle if report.first_flag_cycle is not None else '-':>12}"
              f"{final_occ:>11}{report.capacity_hit_fraction:>10.2f}")


if __name__ == "__main__":
    main()
