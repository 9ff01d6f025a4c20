"""``fedmon`` command line: broker service, emulation, benchmarks, store queries, conversion.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
from pathlib import Path

from .broker import BrokerClient, BrokerServer
from .broker.client import parse_endpoint
from .broker.server import DEFAULT_PORT
from .broker.wire import MAX_FRAME_SIZE
from .core import canonical_json, parse_document
from .store import HybridStore, QueryFilter, StoreError
from .workload import load_profile, run_emulation
from .workload.profiles import ProfileError
from .workload.rates import expected_publish_rate, payload_plan, stream_rates
from .workload.report import FORMATS, emulation_rows, render, write_report
from .workload.throughput import run_throughput
from .xform import XmlError, netlogger_to_json, xml_to_json
from .xform.netlogger import NetLoggerError

log = logging.getLogger("fedmon")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals or any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError(f"expected non-negative integers, got {text!r}")
    return vals


def _positive(kind):
    def conv(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}")
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
        return v
    return conv


def _non_negative(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def _emit(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


# -- subcommands


def cmd_broker(args) -> int:
    host, port = parse_endpoint(args.listen) if args.listen else ("127.0.0.1", DEFAULT_PORT)
    server = BrokerServer(host=host, port=port, max_frame=args.max_frame,
                         queue_capacity=args.queue_capacity)
    try:
        host, port = server.start()
    except OSError as exc:
        raise RuntimeError(f"cannot listen on {host}:{port}: {exc.strerror or exc}") from None
    print(f"listening {host}:{port}", file=sys.stderr, flush=True)
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    while not stop.wait(0.5):
        pass
    server.stop()
    return EXIT_OK


def cmd_emulate(args) -> int:
    profile = load_profile(args.profile)
    report = run_emulation(profile, args.duration, args.backend, seed=args.seed,
                           clock=args.clock, speed=args.speed, connect=args.connect)
    doc = report.to_dict()
    rows = emulation_rows(report)
    if args.report:
        for p in write_report(doc, rows, args.report):
            log.info("wrote %s", p)
    else:
        _emit(render(doc, rows, args.format), None)
    if args.store_out and report.store_handle is not None:
        report.store_handle.save(args.store_out)
    log.info("%s: published %.2f msg/s, mean %.0f B, fan-out %.3f (oracle %.3f), drops %d",
             profile.name, report.published_rate, report.mean_message_bytes,
             report.fanout_measured, report.fanout_oracle, report.drop_count)
    return EXIT_OK


def cmd_bench(args) -> int:
    rows, docs = [], []
    for size in args.size:
        for n in args.pairs:
            if n < 1:
                raise UsageError("--pairs values must be >= 1")
            r = run_throughput(n, size, args.duration, args.backend, connect=args.connect)
            log.info("%s N=%d %dB: %.0f msg/s, %.2f MB/s, conserved=%s", args.backend, n, size,
                     r.msgs_per_sec, r.mb_per_sec, r.conserved)
            rows.append(r.row())
            docs.append(r.to_dict())
    doc = {"backend": args.backend, "duration": args.duration, "results": docs}
    if args.report:
        write_report(doc, rows, args.report)
    else:
        _emit(render(doc, rows, args.format), None)
    return EXIT_OK if all(d["conserved"] for d in docs) else EXIT_RUNTIME


def cmd_rates(args) -> int:
    profile = load_profile(args.profile)
    doc = {"profile": profile.name, "expected_rate": expected_publish_rate(profile),
           "streams": stream_rates(profile), "payload_plan": payload_plan(profile)}
    rows = [{"stream": s, "rate": r} for s, r in doc["streams"].items()]
    rows.append({"stream": "total", "rate": doc["expected_rate"]})
    _emit(render(doc, rows, args.format), args.report)
    return EXIT_OK


def _read_lines(path: str | None):
    if path in (None, "-"):
        return sys.stdin.read()
    return Path(path).read_text(encoding="utf-8")


def cmd_ingest(args) -> int:
    store = HybridStore.load(args.store) if Path(args.store).exists() else HybridStore()
    n = 0
    for lineno, line in enumerate(_read_lines(args.input).splitlines(), 1):
        if not line.strip():
            continue
        try:
            store.ingest(parse_document(line), args.source)
        except ValueError as exc:
            raise RuntimeError(f"line {lineno}: {exc}") from None
        n += 1
    store.save(args.store)
    log.info("ingested %d documents into %s", n, args.store)
    return EXIT_OK


def cmd_query(args) -> int:
    if not Path(args.store).exists():
        raise RuntimeError(f"store file {args.store} does not exist")
    try:
        flt = QueryFilter(source=args.source, site=args.site, resource=args.resource,
                          service=args.service, kind=args.kind, since=args.since,
                          until=args.until, paths=list(args.json_path or []),
                          latest_only=args.latest, limit=args.limit)
    except StoreError as exc:
        raise UsageError(str(exc)) from None
    store = HybridStore.load(args.store)
    out = sys.stdout
    for rec in store.query(flt):
        out.write(canonical_json(rec.to_dict()).decode("utf-8") + "\n")
    out.flush()
    return EXIT_OK


def _sniff(text: str) -> str:
    return "xml" if text.lstrip().startswith("<") else "netlogger"


def cmd_convert(args) -> int:
    text = _read_lines(args.input)
    kind = args.input_format if args.input_format != "auto" else _sniff(text)
    lines = []
    if kind == "xml":
        lines.append(canonical_json(xml_to_json(text)).decode("utf-8"))
    else:
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                lines.append(canonical_json(netlogger_to_json(line)).decode("utf-8"))
            except NetLoggerError as exc:
                raise RuntimeError(f"line {lineno}: {exc}") from None
    _emit("".join(line + "\n" for line in lines), args.output)
    return EXIT_OK


def cmd_stats(args) -> int:
    with BrokerClient.connect(args.connect) as client:
        doc = client.stats().to_dict()
    _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", args.report)
    return EXIT_OK


# -- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fedmon", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("broker", parents=[common], help="run the message broker until interrupted")
    b.add_argument("--listen", metavar="HOST:PORT",
                   help=f"listen address (default 127.0.0.1:{DEFAULT_PORT}; port 0 picks one)")
    b.add_argument("--queue-capacity", type=_positive(int), default=None,
                   help="per-queue message limit; publishes beyond it are dropped")
    b.add_argument("--max-frame", type=_positive(int), default=MAX_FRAME_SIZE)
    b.set_defaults(func=cmd_broker)

    e = sub.add_parser("emulate", parents=[common], help="emulate an infrastructure profile")
    e.add_argument("--profile", required=True, help="bundled name or JSON file")
    e.add_argument("--duration", type=_non_negative, default=600.0, help="seconds (default 600)")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--backend", choices=("broker", "store", "both"), default="broker")
    e.add_argument("--connect", metavar="HOST:PORT", help="use a running broker")
    e.add_argument("--clock", choices=("wall", "virtual"), default="wall",
                   help="wall follows real time; virtual runs as fast as possible")
    e.add_argument("--speed", type=_positive(float), default=1.0,
                   help="emulated seconds per wall second (wall clock only)")
    e.add_argument("--report", metavar="PATH", help="write PATH.json and PATH.csv")
    e.add_argument("--format", choices=FORMATS, default="json",
                   help="stdout format when --report is not given")
    e.add_argument("--store-out", metavar="FILE", help="save the store (store/both backends)")
    e.set_defaults(func=cmd_emulate)

    t = sub.add_parser("bench", parents=[common], help="N producers to N consumers throughput sweep")
    t.add_argument("--pairs", type=_int_list, default=[1, 4, 16], help="e.g. 1,4,16")
    t.add_argument("--size", type=_int_list, default=[256, 2048, 16384], help="message bytes")
    t.add_argument("--duration", type=_positive(float), default=5.0, help="seconds per cell")
    t.add_argument("--backend", choices=("broker", "store"), default="broker")
    t.add_argument("--connect", metavar="HOST:PORT", help="use a running broker")
    t.add_argument("--report", metavar="PATH", help="write PATH.json and PATH.csv")
    t.add_argument("--format", choices=FORMATS, default="csv")
    t.set_defaults(func=cmd_bench)

    r = sub.add_parser("rates", parents=[common], help="closed-form publish rates and payload plan of a profile")
    r.add_argument("--profile", required=True)
    r.add_argument("--format", choices=FORMATS, default="json")
    r.add_argument("--report", metavar="PATH")
    r.set_defaults(func=cmd_rates)

    i = sub.add_parser("ingest", parents=[common], help="add JSON-lines documents to a store file")
    i.add_argument("--store", required=True, metavar="FILE")
    i.add_argument("--source", required=True, help="source kind (ganglia, inca, glue2, ...)")
    i.add_argument("input", nargs="?", help="JSON lines file (default stdin)")
    i.set_defaults(func=cmd_ingest)

    q = sub.add_parser("query", parents=[common], help="select records from a store file as JSON lines")
    q.add_argument("--store", required=True, metavar="FILE")
    for col in ("source", "site", "resource", "service", "kind"):
        q.add_argument(f"--{col}")
    q.add_argument("--since", type=float)
    q.add_argument("--until", type=float)
    q.add_argument("--json-path", action="append", metavar="EXPR",
                   help="'$.a.b=value' or '$.a.b' (exists); repeatable")
    q.add_argument("--latest", action="store_true", help="newest record per key only")
    q.add_argument("--limit", type=int)
    q.set_defaults(func=cmd_query)

    c = sub.add_parser("convert", parents=[common], help="XML or NetLogger to JSON")
    c.add_argument("input", nargs="?", help="input file (default stdin)")
    c.add_argument("--input-format", choices=("auto", "xml", "netlogger"), default="auto")
    c.add_argument("--output", metavar="FILE")
    c.set_defaults(func=cmd_convert)

    s = sub.add_parser("stats", parents=[common], help="print a running broker's statistics")
    s.add_argument("--connect", required=True, metavar="HOST:PORT")
    s.add_argument("--report", metavar="PATH")
    s.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"fedmon: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ProfileError, StoreError, XmlError, NetLoggerError, ValueError, RuntimeError,
            OSError) as exc:
        print(f"fedmon: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
