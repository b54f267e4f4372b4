"""pmtc: build dictionary representations, serve lookups, run benchmarks."""

from __future__ import annotations

import argparse
import sys
import time

from . import bench as bench_mod
from .carousel import TaConfig, ta_config_for
from .core import PmtParams, generate_dictionary
from .oram import oram_init
from .reprs import ReprKind, deserialize, serialize
from .service import LookupService, SocketServer


def _add_common(p):
    p.add_argument("--n", type=int, default=1 << 16, help="dictionary size")
    p.add_argument("--epsilon", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scheme", default="seqdiff", choices=bench_mod.ALL_SCHEMES)
    p.add_argument("--chunk-bytes", type=int, default=1 << 20)
    p.add_argument("--csv", default=None, help="write ExperimentRecords here")


def _build_rep(args):
    params = PmtParams(n=args.n, epsilon=args.epsilon)
    dictionary = generate_dictionary(args.n, args.seed)
    rep = bench_mod.build_scheme(args.scheme, dictionary, params, seed=args.seed)
    return dictionary, rep


def _config(args, rep) -> TaConfig | None:
    if getattr(args, "capacity", None) is None:
        return None
    return ta_config_for(rep, chunk_bytes=args.chunk_bytes,
                         capacity=args.capacity)


def _emit(records, args):
    if args.csv:
        bench_mod.write_csv(records, args.csv)
        print(f"wrote {len(records)} records to {args.csv}")
    else:
        print(",".join(bench_mod.CSV_COLUMNS))
        for r in records[:50]:
            print(",".join(str(getattr(r, c)) for c in bench_mod.CSV_COLUMNS))
        if len(records) > 50:
            print(f"... {len(records) - 50} more records (use --csv)")


def cmd_build(args):
    _, rep = _build_rep(args)
    blob = serialize(rep)
    with open(args.out, "wb") as fh:
        fh.write(blob)
    print(f"{args.scheme}: n={rep.n} n'={rep.n_prime} {len(blob)} bytes "
          f"-> {args.out}")
    return 0


def cmd_serve(args):
    with open(args.repr, "rb") as fh:
        blob = fh.read()
    rep = deserialize(blob, verify=False)
    print(f"serving {rep.kind.name.lower()} n={rep.n} with {args.tas} TA(s)",
          flush=True)
    service = LookupService(blob, num_tas=args.tas, chunk_bytes=args.chunk_bytes)
    host, _, port = args.listen.rpartition(":")
    server = SocketServer(service, host or "127.0.0.1", int(port))
    server.start()
    print(f"listening on {server.addr[0]}:{server.addr[1]}", flush=True)
    try:
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        server.stop()
    return 0


def cmd_bench(args):
    dictionary, rep = _build_rep(args)
    blob = serialize(rep)
    config = _config(args, rep)
    if args.mode == "batch":
        if args.scheme.startswith("coo"):
            state = oram_init(rep, block_bytes=args.block_bytes,
                              tree_count=4 if args.scheme == "coo-part" else 1,
                              complete=True, node_slack=args.node_slack,
                              seed=args.seed)
            records = bench_mod.bench_batch(args.scheme, blob, args.m,
                                            repeats=args.repeats,
                                            seed=args.seed, oram_state=state)
        else:
            records = bench_mod.bench_batch(
                args.scheme, blob, args.m, repeats=args.repeats,
                seed=args.seed, config=config, chunk_bytes=args.chunk_bytes)
        _emit(records, args)
    elif args.mode == "steady":
        records, report = bench_mod.bench_steady(
            args.scheme, blob, rate=args.rate, cycles=args.cycles,
            seed=args.seed, config=config, chunk_bytes=args.chunk_bytes)
        _emit(records, args)
        print(f"breakdown={report.flagged} mode={report.mode} "
              f"slope={report.slope:.4f} first_cycle={report.first_flag_cycle}")
    elif args.mode == "crossover":
        if rep.kind != ReprKind.CUCKOO4:
            print("crossover compares the cuckoo carousel against its ORAM "
                  "counterpart; use --scheme cuckoo", file=sys.stderr)
            return 2
        state = oram_init(rep, block_bytes=args.block_bytes, complete=True,
                          node_slack=args.node_slack, seed=args.seed)
        m_values = sorted({1, 2, 4, 8, 16, args.m} | {args.m})
        report = bench_mod.crossover_analysis(
            blob, state, m_values, seed=args.seed, config=config,
            chunk_bytes=args.chunk_bytes)
        print(f"m*={report.m_star} blocks/query={report.oram_blocks_per_query} "
              f"slots/block={report.slots_per_block} "
              f"carousel cycle cost={report.carousel_cycle_entry_ops}")
        for row in report.rows:
            print(f"  m={row.m:6d} carousel={row.carousel_entry_ops:10d} "
                  f"oram_units={row.oram_entry_units:12d} -> {row.cheaper}"
                  f"{'' if row.measured else ' (extended)'}")
    elif args.mode == "fpr":
        report = bench_mod.measure_fpr(args.scheme, rep, dictionary,
                                       probes=args.m, seed=args.seed)
        print(f"{report.scheme}: fpr={report.rate:.3e} "
              f"({report.positives}/{report.probes}), "
              f"false_negatives={report.false_negatives}/{report.member_probes}")
    elif args.mode == "microbench":
        records = bench_mod.access_pattern_microbench(
            blob, cycles=args.cycles, config=config,
            chunk_bytes=args.chunk_bytes)
        _emit(records, args)
        for pat in bench_mod.PATTERNS:
            print(f"median {pat}: {bench_mod.median_cycle_us(records, pat):.1f} us")
    return 0


def main(argv=None) -> int:
    top = argparse.ArgumentParser(prog="pmtc")
    sub = top.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="build and serialize a representation")
    _add_common(b)
    b.add_argument("--out", required=True)

    s = sub.add_parser("serve", help="host a representation over sockets")
    s.add_argument("--repr", required=True)
    s.add_argument("--tas", type=int, default=1)
    s.add_argument("--listen", default="127.0.0.1:0")
    s.add_argument("--chunk-bytes", type=int, default=1 << 20)

    be = sub.add_parser("bench", help="run an experiment")
    be.add_argument("mode", choices=["batch", "steady", "crossover", "fpr",
                                     "microbench"])
    _add_common(be)
    be.add_argument("--m", type=int, default=100,
                    help="batch size / probe count / max crossover m")
    be.add_argument("--rate", type=float, default=10.0, help="queries per cycle")
    be.add_argument("--cycles", type=int, default=100)
    be.add_argument("--repeats", type=int, default=1)
    be.add_argument("--capacity", type=int, default=None)
    be.add_argument("--block-bytes", type=int, default=4096)
    be.add_argument("--node-slack", type=float, default=4.0)

    args = top.parse_args(argv)
    if args.command == "build":
        return cmd_build(args)
    if args.command == "serve":
        return cmd_serve(args)
    return cmd_bench(args)


if __name__ == "__main__":
    sys.exit(main())
