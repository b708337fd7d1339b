"""Plain-text matrix blocks: a ``rows cols`` line, then one row per line.

Values are written with 17 significant digits so float64 round-trips.
"""

from __future__ import annotations

from typing import Iterator, TextIO

import numpy as np


def format_float(v: float) -> str:
    return format(float(v), ".17g")


def write_matrix(fh: TextIO, m: np.ndarray) -> None:
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    fh.write(f"{m.shape[0]} {m.shape[1]}\n")
    for row in m:
        fh.write(" ".join(format_float(v) for v in row) + "\n")


def read_matrix(lines: Iterator[tuple[int, str]]) -> np.ndarray:
    """Read one block from an iterator of ``(line_number, text)`` pairs."""
    lineno, header = next(lines)
    try:
        rows, cols = (int(t) for t in header.split())
    except ValueError:
        raise ValueError(f"line {lineno}: expected 'rows cols', got {header.strip()!r}") from None
    if rows < 1 or cols < 1:
        raise ValueError(f"line {lineno}: matrix dimensions must be positive")
    out = np.empty((rows, cols))
    for r in range(rows):
        try:
            lineno, text = next(lines)
        except StopIteration:
            raise ValueError(f"unexpected end of file: expected {rows} rows, got {r}") from None
        fields = text.split()
        if len(fields) != cols:
            raise ValueError(f"line {lineno}: expected {cols} values, got {len(fields)}")
        try:
            out[r] = [float(f) for f in fields]
        except ValueError:
            raise ValueError(f"line {lineno}: non-numeric value") from None
    return out


def numbered_lines(fh: TextIO, skip_blank: bool = True) -> Iterator[tuple[int, str]]:
    for i, line in enumerate(fh, start=1):
        if skip_blank and not line.strip():
            continue
        yield i, line.rstrip("\n")
