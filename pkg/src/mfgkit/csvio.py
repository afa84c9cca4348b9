"""CSV output with a reproducibility header and round-trip-exact reals."""

from __future__ import annotations

import csv
from pathlib import Path


def format_value(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_csv(path, columns, rows, header_comment: str | None = None):
    """RFC-4180-style CSV; floats at 17 significant digits; one comment line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def write_keyvalue(path, pairs, header_comment: str | None = None):
    """Flat key = value summary text."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        for key, val in pairs:
            fh.write(f"{key} = {format_value(val)}\n")
