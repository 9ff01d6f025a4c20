#!/usr/bin/env python3
"""Sweep producer/consumer pairs and message sizes against the broker or the store."""
import argparse
import sys
from pathlib import Path

from fedmon.workload.report import write_report
from fedmon.workload.throughput import run_throughput


def ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--pairs", type=ints, default=[1, 2, 4, 8, 16])
    ap.add_argument("--size", type=ints, default=[256, 2048, 16384])
    ap.add_argument("--duration", type=float, default=10.0)
    ap.add_argument("--repeats", type=int, default=1)
    ap.add_argument("--backend", default="broker", choices=("broker", "store"))
    ap.add_argument("--out", type=Path, default=Path("results/throughput"))
    args = ap.parse_args(argv)

    rows = []
    for size in args.size:
        for pairs in args.pairs:
            for rep in range(args.repeats):
                r = run_throughput(pairs, size, args.duration, args.backend)
                rows.append({"repeat": rep, **r.row()})
                print(f"{size} B x {pairs}: {r.msgs_per_sec:.0f} msg/s "
                      f"{r.mb_per_sec:.1f} MB/s conserved={r.conserved}", file=sys.stderr)
    write_report({"results": rows}, rows, args.out)
    return 0 if all(r["conserved"] for r in rows) else 2


if __name__ == "__main__":
    sys.exit(main())
