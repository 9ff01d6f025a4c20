"""NetLogger ``key=value`` event lines to flat JSON objects."""

from __future__ import annotations

import shlex
from datetime import datetime

TS_KEY = "ts"


class NetLoggerError(ValueError):
    pass


def parse_timestamp(text: str) -> float:
    """ISO-8601 (``Z`` allowed) or epoch seconds to a POSIX timestamp."""
    try:
        return float(text)
    except ValueError:
        pass
    iso = text[:-1] + "+00:00" if text.endswith("Z") else text
    try:
        dt = datetime.fromisoformat(iso)
    except ValueError:
        raise NetLoggerError(f"unparseable timestamp {text!r}") from None
    if dt.tzinfo is None:
        raise NetLoggerError(f"timestamp {text!r} has no timezone")
    return dt.timestamp()


def netlogger_to_json(line: str) -> dict:
    """Values stay strings; ``ts`` is validated as a timestamp but kept verbatim."""
    try:
        tokens = shlex.split(line, comments=False, posix=True)
    except ValueError as exc:
        raise NetLoggerError(f"malformed line: {exc}") from None
    doc: dict[str, str] = {}
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep or not key:
            raise NetLoggerError(f"malformed pair {tok!r}")
        if key in doc:
            raise NetLoggerError(f"duplicate key {key!r}")
        doc[key] = value
    if TS_KEY in doc:
        parse_timestamp(doc[TS_KEY])
    return doc


def json_to_netlogger(doc: dict) -> str:
    return " ".join(f"{k}={shlex.quote(str(v))}" for k, v in doc.items())
