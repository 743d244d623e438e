"""CSV sample files.

Window rules (R1, R2): header ``x1,...,xn``; every data row is one window.
Matrix rule (R3): header ``c1,...,cc``; matrix rows follow, consecutive
matrices separated by one blank line, all with the same row count.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..codec import DEFAULT_CONFIG, FixedPointConfig, encode
from ..errors import ObliqcError, OutOfRange, ShapeMismatch


class SampleFileError(ObliqcError, ValueError):
    pass


def _expect_header(header, prefix):
    want = [f"{prefix}{i}" for i in range(1, len(header) + 1)]
    if [h.strip() for h in header] != want or not header:
        raise ShapeMismatch(f"header must be {prefix}1..{prefix}n, got {header}")


def read_samples(path, rule_id: str, cfg: FixedPointConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Raw encoded values: ``(B, n)`` for R1/R2, ``(B, r, c)`` for R3."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise SampleFileError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    prefix = "c" if rule_id == "R3" else "x"
    _expect_header(header, prefix)
    width = len(header)

    def parse(row, lineno):
        if len(row) != width:
            raise ShapeMismatch(f"{path}:{lineno}: expected {width} values, got {len(row)}")
        try:
            return [encode(v.strip(), cfg).raw for v in row]
        except OutOfRange as exc:
            raise OutOfRange(f"{path}:{lineno}: {exc}") from None
        except ArithmeticError as exc:
            raise SampleFileError(f"{path}:{lineno}: not a decimal: {exc}") from None

    if rule_id != "R3":
        data = [parse(r, i + 2) for i, r in enumerate(body) if r]
        if not data:
            raise SampleFileError(f"{path}: no windows")
        return np.array(data, dtype=np.int64)

    matrices, current = [], []
    for i, r in enumerate(body):
        if not r or all(not v.strip() for v in r):
            if current:
                matrices.append(current)
                current = []
            continue
        current.append(parse(r, i + 2))
    if current:
        matrices.append(current)
    if not matrices:
        raise SampleFileError(f"{path}: no matrices")
    if len({len(m) for m in matrices}) != 1:
        raise ShapeMismatch(f"{path}: matrices have different row counts")
    return np.array(matrices, dtype=np.int64)


def write_samples(path, data, rule_id: str, decimals: int = 2) -> Path:
    """Write decimal values (window rows or matrices) in the strict CSV layout."""
    data = np.asarray(data, dtype=float)
    fmt = f"{{:.{decimals}f}}"
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        if rule_id == "R3":
            if data.ndim == 2:
                data = data[None]
            w.writerow([f"c{i}" for i in range(1, data.shape[2] + 1)])
            for k, m in enumerate(data):
                if k:
                    w.writerow([])
                for row in m:
                    w.writerow([fmt.format(v) for v in row])
        else:
            if data.ndim == 1:
                data = data[None]
            w.writerow([f"x{i}" for i in range(1, data.shape[1] + 1)])
            for row in data:
                w.writerow([fmt.format(v) for v in row])
    return path
