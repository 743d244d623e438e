import numpy as np
import pytest

from obliqc.errors import Unattainable
from obliqc.kernels.chebyshev import (
    ChebyshevApprox,
    abs_series,
    chebyshev_eval_abs,
    chebyshev_fit,
    clenshaw,
    max_grid_error,
    outcome_error_rate,
    rule2_workload,
    select_poly_degree,
)

SMALL_GRID = 20_001


def test_coefficient_count_and_parity():
    for d in (1, 2, 7, 16):
        c = abs_series(d)
        assert len(c) == d + 1
        assert np.all(c[1::2] == 0)
    with pytest.raises(ValueError):
        abs_series(0)
    with pytest.raises(ValueError):
        ChebyshevApprox(4, (1.0, 2.0), 0.1)


def test_series_matches_numpy_chebyshev():
    # numpy's chebval on the full x-basis is an independent evaluator
    x = np.linspace(-1, 1, 2001)
    for d in (2, 8, 32):
        a = chebyshev_fit(d, SMALL_GRID)
        ref = np.polynomial.chebyshev.chebval(x, abs_series(d))
        np.testing.assert_allclose(a(x), ref, rtol=1e-12, atol=1e-14)


def test_clenshaw_agrees_with_power_basis():
    c = np.array([0.3, -0.5, 0.25, 0.125, -0.0625])
    y = np.linspace(-1, 1, 101)
    power = np.polynomial.polynomial.polyval(y, np.polynomial.chebyshev.cheb2poly(c))
    np.testing.assert_allclose(clenshaw(y, c), power, rtol=1e-12, atol=1e-15)


def test_error_bound_consistent_at_zero():
    for d in (2, 4, 16):
        a = chebyshev_fit(d, SMALL_GRID)
        assert abs(float(a(0.0))) <= a.measured_max_error + 1e-15


def test_error_non_increasing_small_grid():
    errs = [chebyshev_fit(d, SMALL_GRID).measured_max_error for d in (2, 4, 8, 16, 32, 64)]
    assert all(b <= a for a, b in zip(errs, errs[1:]))


def test_max_error_is_at_the_kink():
    a = chebyshev_fit(8, SMALL_GRID)
    assert a.measured_max_error == pytest.approx(abs(float(chebyshev_eval_abs(0.0, a))))
    assert max_grid_error(a, SMALL_GRID) == a.measured_max_error


def test_degenerate_target_returns_smallest_degree():
    w = rule2_workload(20_000, seed=1)
    assert select_poly_degree(1.0, w, grid_points=SMALL_GRID) == 2


def test_tighter_target_never_lowers_degree():
    w = rule2_workload(50_000, seed=2)
    degrees = (2, 4, 8, 16, 32, 64, 128)
    picks = []
    for t in (0.5, 0.1, 0.03, 0.01):
        try:
            picks.append(select_poly_degree(t, w, degrees, grid_points=SMALL_GRID))
        except Unattainable:
            picks.append(10**9)
    assert picks == sorted(picks)


def test_unattainable():
    w = rule2_workload(50_000, seed=3)
    with pytest.raises(Unattainable):
        select_poly_degree(1e-9, w, degrees=(2, 4), grid_points=SMALL_GRID)
    with pytest.raises(ValueError):
        select_poly_degree(0.0, w)


def test_workload_deterministic_by_seed():
    a, b = rule2_workload(1000, seed=9), rule2_workload(1000, seed=9)
    assert np.array_equal(a.diffs, b.diffs) and np.array_equal(a.limits, b.limits)
    rate = outcome_error_rate(chebyshev_fit(4, SMALL_GRID), a)
    assert 0 <= rate <= 1
