#!/usr/bin/env python3
"""Sustained mixed upsert/append ingest against the document store."""
import argparse
import json
import sys

from fedmon.workload.throughput import run_store_ingest


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--writers", type=int, default=16)
    ap.add_argument("--duration", type=float, default=60.0)
    ap.add_argument("--rate", type=float, default=400.0, help="offered operations per second")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    r = run_store_ingest(args.writers, args.duration, args.rate, args.seed)
    print(json.dumps(r.to_dict(), indent=2))
    return 0 if r.clean else 2


if __name__ == "__main__":
    sys.exit(main())
