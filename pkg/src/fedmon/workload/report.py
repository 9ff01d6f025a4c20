"""JSON and CSV rendering of emulation and throughput reports."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

FORMATS = ("json", "csv")


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    cols = list(rows[0])
    for r in rows[1:]:
        cols += [c for c in r if c not in cols]
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def render(document: dict, rows: list[dict], fmt: str) -> str:
    if fmt == "json":
        return json.dumps(document, indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        return rows_to_csv(rows)
    raise ValueError(f"format must be one of {FORMATS}")


def write_report(document: dict, rows: list[dict], path, formats=FORMATS) -> list[Path]:
    """Write ``path`` with each requested format's suffix; returns the files written."""
    base = Path(path)
    if base.suffix.lstrip(".") in FORMATS:
        base = base.with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    out = []
    for fmt in formats:
        p = base.with_suffix(f".{fmt}")
        p.write_text(render(document, rows, fmt), encoding="utf-8")
        out.append(p)
    return out


def emulation_rows(report) -> list[dict]:
    """Per-source publish/consume columns, plus a store row when the store ran."""
    rows = [{"profile": report.profile, "backend": report.backend, **r} for r in report.rows()]
    if report.store is not None:
        store_cols = report.store.columns(report.duration)
        rows.append({"profile": report.profile, "backend": report.backend,
                     "Source": "store", **store_cols})
    return rows
