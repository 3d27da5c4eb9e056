"""Canonical JSON helpers.

All artifacts (reports, traces, audit logs, metrics) are serialized through
these helpers so that identical in-memory values always produce identical
bytes; determinism tests diff the files directly.
"""

import hashlib
import json
from pathlib import Path


def canonical_dumps(obj) -> str:
    """Pretty canonical form used for file artifacts (trailing newline)."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def canonical_line(obj) -> str:
    """Compact canonical form used for newline-delimited records."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def write_canonical(path, obj) -> None:
    Path(path).write_text(canonical_dumps(obj), encoding="utf-8")


def load_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def sha256_of(obj) -> str:
    return hashlib.sha256(canonical_line(obj).encode("utf-8")).hexdigest()
