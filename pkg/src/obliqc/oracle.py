"""Plain floating-point Westgard checks, used as the independent oracle.

Written directly from the rule definitions on decimal floats; shares no code
with the integer engine.
"""

import numpy as np


def rule1(samples, mean, sd) -> int:
    x = np.asarray(samples, dtype=float)
    return int(np.any((x > mean + 3 * sd) | (x < mean - 3 * sd)))


def rule2(samples, mean, sd) -> int:
    x = np.asarray(samples, dtype=float)
    r4s = np.any(np.abs(np.diff(x)) > 4 * sd)
    hi, lo = x > mean + 2 * sd, x < mean - 2 * sd
    two2s = np.any(hi[1:] & hi[:-1]) or np.any(lo[1:] & lo[:-1])
    return int(r4s or two2s)


def rule3(matrix, mean, sd):
    """Returns ``(score, row_flags)``: the largest row range and per-row SD > 2 sd."""
    m = np.asarray(matrix, dtype=float)
    ranges = m.max(axis=1) - m.min(axis=1)
    flags = [int(f) for f in np.std(m, axis=1, ddof=1) > 2 * sd]
    return float(ranges.max()), flags


def evaluate(rule_id: str, data, mean, sd):
    return {"R1": rule1, "R2": rule2, "R3": rule3}[rule_id](data, mean, sd)
