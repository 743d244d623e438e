"""Data-oblivious statistics and the Chebyshev reference path for |x|."""

from .chebyshev import (
    SWEEP_DEGREES,
    ChebyshevApprox,
    Rule2Workload,
    chebyshev_eval_abs,
    chebyshev_fit,
    clenshaw,
    outcome_error_rate,
    rule2_workload,
    select_poly_degree,
    sweep_degrees,
)
from .exact import (
    ABS_VARIANTS,
    abs_branchless,
    abs_naive,
    abs_select,
    fold_levels,
    max_ct,
    max_vec,
    min_ct,
    min_vec,
    pmap,
    sd_exceeds,
    sd_threshold,
    ssd,
    ssd_many,
    sum_vec,
    tree_depth,
)

__all__ = [
    "abs_branchless", "abs_naive", "abs_select", "ABS_VARIANTS", "chebyshev_eval_abs",
    "chebyshev_fit", "ChebyshevApprox", "clenshaw", "fold_levels", "max_ct", "max_vec",
    "min_ct", "min_vec", "outcome_error_rate", "pmap", "rule2_workload", "Rule2Workload",
    "sd_exceeds", "sd_threshold", "select_poly_degree", "ssd", "ssd_many", "sum_vec",
    "SWEEP_DEGREES", "sweep_degrees", "tree_depth",
]
