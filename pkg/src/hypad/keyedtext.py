"""``key = value`` documents used for run configs and synthetic-series specs.

Blank lines and ``#`` comments are ignored.  Keys listed as repeatable collect
their values in a list; any other key may appear once.
"""
from __future__ import annotations

from .errors import ParseError


def parse_keyed_text(text: str, repeatable=()) -> dict:
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        key, val = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ParseError("empty key", line=lineno)
        if key in repeatable:
            out.setdefault(key, []).append(val)
        elif key in out:
            raise ParseError(f"duplicate key {key!r}", line=lineno)
        else:
            out[key] = val
    return out


def format_keyed_text(items: dict) -> str:
    lines = []
    for key, val in items.items():
        if isinstance(val, (list, tuple)):
            lines.extend(f"{key} = {v}" for v in val)
        else:
            lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"
