"""Truncated Chebyshev series for |x| and the degree sweep that chooses one.

On [-1, 1]:  |x| = 2/pi + (4/pi) * sum_{k>=1} (-1)^(k+1) T_2k(x) / (4k^2 - 1).

Only even terms are non-zero, so the series is evaluated as a Chebyshev
series in ``y = 2x^2 - 1`` (``T_2k(x) = T_k(y)``) with the Clenshaw
recurrence, halving the work.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..codec import DEFAULT_CONFIG, FixedPointConfig
from ..errors import Unattainable

SWEEP_DEGREES = (2, 4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048)
GRID_POINTS = 1_000_001  # odd, so x = 0 (the worst point) is on the grid


@dataclass(frozen=True)
class ChebyshevApprox:
    degree: int
    coefficients: tuple
    measured_max_error: float

    def __post_init__(self):
        if len(self.coefficients) != self.degree + 1:
            raise ValueError("need degree + 1 coefficients")

    def __call__(self, x):
        return chebyshev_eval_abs(x, self)


def abs_series(degree: int) -> np.ndarray:
    if degree < 1:
        raise ValueError("degree must be >= 1")
    c = np.zeros(degree + 1)
    c[0] = 2 / np.pi
    k = np.arange(1, degree // 2 + 1)
    c[2 * k] = (4 / np.pi) * np.where(k % 2 == 1, 1.0, -1.0) / (4 * k * k - 1)
    return c


def clenshaw(y, coeffs: Sequence[float]):
    """Evaluate ``sum c_k T_k(y)`` by Clenshaw's backward recurrence."""
    y = np.asarray(y, dtype=np.float64)
    b1 = np.zeros_like(y)
    b2 = np.zeros_like(y)
    two_y = 2 * y
    for c in coeffs[:0:-1]:
        b1, b2 = c + two_y * b1 - b2, b1
    return coeffs[0] + y * b1 - b2


def chebyshev_eval_abs(x, a: ChebyshevApprox):
    x = np.asarray(x, dtype=np.float64)
    y = 2 * x * x - 1
    out = clenshaw(y, a.coefficients[::2])
    return float(out) if out.ndim == 0 else out


def max_grid_error(a: ChebyshevApprox, points: int = GRID_POINTS, chunk: int = 250_000) -> float:
    worst = 0.0
    grid = np.linspace(-1.0, 1.0, points)
    for i in range(0, points, chunk):
        x = grid[i:i + chunk]
        worst = max(worst, float(np.max(np.abs(chebyshev_eval_abs(x, a) - np.abs(x)))))
    return worst


def chebyshev_fit(degree: int, grid_points: int = GRID_POINTS) -> ChebyshevApprox:
    coeffs = tuple(float(c) for c in abs_series(degree))
    provisional = ChebyshevApprox(degree, coeffs, float("nan"))
    return ChebyshevApprox(degree, coeffs, max_grid_error(provisional, grid_points))


@dataclass(frozen=True)
class Rule2Workload:
    """Adjacent-pair differences and range limits in scaled integer units."""

    diffs: np.ndarray
    limits: np.ndarray
    span: int

    @property
    def exact(self) -> np.ndarray:
        return np.abs(self.diffs) > self.limits


def rule2_workload(samples: int = 10**6, seed: int = 0,
                   cfg: FixedPointConfig = DEFAULT_CONFIG) -> Rule2Workload:
    """Control pairs drawn around a random target, so many land near the 4 SD limit."""
    rng = np.random.default_rng(seed)
    lo, hi = cfg.raw_lo, cfg.raw_hi
    mean = rng.integers(lo + cfg.raw_span // 5, hi - cfg.raw_span // 5 + 1, samples)
    sd = rng.integers(max(cfg.scale // 2, 1), 5 * cfg.scale + 1, samples)
    x1 = np.clip(np.rint(rng.normal(mean, 1.5 * sd)), lo, hi).astype(np.int64)
    x2 = np.clip(np.rint(rng.normal(mean, 1.5 * sd)), lo, hi).astype(np.int64)
    return Rule2Workload(x2 - x1, 4 * sd, cfg.raw_span)


def outcome_error_rate(a: ChebyshevApprox, workload: Rule2Workload, chunk: int = 250_000) -> float:
    """Fraction of range-rule outcomes that flip when |diff| comes from the series.

    True differences are integers, so the approximate decision is taken at the
    half-unit point ``limit + 0.5`` between the last passing and first failing value.
    """
    wrong = 0
    n = workload.diffs.shape[0]
    for i in range(0, n, chunk):
        d = workload.diffs[i:i + chunk]
        t = workload.limits[i:i + chunk]
        approx = chebyshev_eval_abs(d / workload.span, a) * workload.span
        wrong += int(np.count_nonzero((approx > t + 0.5) != (np.abs(d) > t)))
    return wrong / n


def sweep_degrees(workload: Rule2Workload, degrees: Sequence[int] = SWEEP_DEGREES,
                  grid_points: int = GRID_POINTS):
    """Yield ``(approx, outcome_error_rate)`` for each swept degree in order."""
    for d in degrees:
        a = chebyshev_fit(d, grid_points)
        yield a, outcome_error_rate(a, workload)


def select_poly_degree(target_outcome_error: float, workload: Optional[Rule2Workload] = None,
                       degrees: Sequence[int] = SWEEP_DEGREES, seed: int = 0,
                       grid_points: int = GRID_POINTS) -> int:
    """Smallest swept degree whose rule-outcome error rate is below the target."""
    if not 0 < target_outcome_error <= 1:
        raise ValueError("target must lie in (0, 1]")
    if workload is None:
        workload = rule2_workload(seed=seed)
    for a, rate in sweep_degrees(workload, sorted(degrees), grid_points):
        if rate < target_outcome_error:
            return a.degree
    raise Unattainable(f"no degree in {sorted(degrees)} reaches error rate {target_outcome_error}")
