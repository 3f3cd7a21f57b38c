"""Plain-text report writers: key=value lines and comma-separated tables."""

from __future__ import annotations

from pathlib import Path


def format_value(value) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    if isinstance(value, bool):
        return str(value).lower()
    if value is None:
        return ""
    return str(value)


def write_kv(path, items: dict) -> str:
    """One `key=value` line per item, in the given order."""
    path = Path(path)
    lines = [f"{key}={format_value(value)}" for key, value in items.items()]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def write_csv(path, header, rows) -> str:
    """Comma-separated table with a header row."""
    path = Path(path)
    out = [",".join(header)]
    for row in rows:
        out.append(",".join(format_value(v) for v in row))
    path.write_text("\n".join(out) + "\n")
    return str(path)
