"""Westgard multirule QC evaluated over oblivious handles.

Rules, in canonical Westgard terms:

* ``R1`` -- 1_3s: any sample beyond mean +/- 3 SD.
* ``R2`` -- R_4s or 2_2s: an adjacent pair differing by more than 4 SD, or two
  consecutive samples beyond the same 2 SD limit.
* ``R3`` -- matrix aggregation: per-row range (max - min) and a per-row
  sample-SD check against 2 SD; the score is the largest row range.

Control limits are server-side plaintext and enter the circuits only as
plaintext thresholds.  Inputs are laid out with SIMD lanes as independent
instances: a window of ``n`` samples is ``n`` handles of ``B`` lanes each,
one lane per window, and an ``r x c`` matrix is ``r`` rows of ``c`` handles.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from functools import lru_cache
from typing import Optional, Sequence

from .codec import DEFAULT_CONFIG, FixedPointConfig, signed_max, to_decimal
from .errors import PlanOverflow, ShapeMismatch, UnknownRule, WidthMismatch
from .kernels.exact import (
    _add,
    abs_branchless,
    fold_levels,
    max_ct,
    min_ct,
    pmap,
    sd_threshold,
    tree_depth,
)
from .oblivious import ObliviousBit, ObliviousHandle

RULE_IDS = ("R1", "R2", "R3")
HEADROOM = 2


@dataclass(frozen=True)
class RuleSpec:
    rule_id: str
    target_mean: Decimal
    target_sd: Decimal
    window: Optional[int] = None
    matrix_dims: Optional[tuple] = None

    def __post_init__(self):
        if self.rule_id not in RULE_IDS:
            raise UnknownRule(self.rule_id)
        object.__setattr__(self, "target_mean", to_decimal(self.target_mean))
        object.__setattr__(self, "target_sd", to_decimal(self.target_sd))
        if self.target_sd <= 0:
            raise ValueError("target_sd must be positive")
        if self.matrix_dims is not None:
            object.__setattr__(self, "matrix_dims", tuple(int(d) for d in self.matrix_dims))

    @property
    def shape(self) -> Optional[tuple]:
        if self.rule_id == "R3":
            return self.matrix_dims
        return None if self.window is None else (self.window,)

    def shaped(self, shape: Sequence[int]) -> "RuleSpec":
        """This spec bound to a concrete input shape (catalog specs may leave it open)."""
        shape = tuple(int(s) for s in shape)
        if self.shape is not None and self.shape != shape:
            raise ShapeMismatch(f"{self.rule_id} expects shape {self.shape}, got {shape}")
        if self.rule_id == "R3":
            if len(shape) != 2:
                raise ShapeMismatch("R3 takes an r x c matrix")
            return replace(self, matrix_dims=shape)
        if len(shape) != 1:
            raise ShapeMismatch(f"{self.rule_id} takes a window of n samples")
        return replace(self, window=shape[0])

    @classmethod
    def from_dict(cls, d: dict) -> "RuleSpec":
        dims = d.get("matrix_dims")
        return cls(d["rule"], Decimal(str(d["mean"])), Decimal(str(d["sd"])),
                   d.get("window"), tuple(dims) if dims else None)


@dataclass(frozen=True)
class RuleVerdict:
    rule_id: str
    flag: Optional[ObliviousBit] = None
    score: Optional[ObliviousHandle] = None
    row_flags: tuple = ()


@dataclass(frozen=True)
class ExecutionPlan:
    spec: RuleSpec
    cfg: FixedPointConfig
    width: int
    acc_width: int
    thresholds: dict
    bounds: dict = field(compare=False)
    gate_count: int = 0
    depth: int = 0


def _scaled(x: Decimal, scale: int) -> int:
    return int((x * scale).to_integral_value(ROUND_HALF_UP))


def thresholds(spec: RuleSpec, cfg: FixedPointConfig) -> dict:
    m, s, k = spec.target_mean, spec.target_sd, cfg.scale
    if spec.rule_id == "R1":
        return {"upper3": _scaled(m + 3 * s, k), "lower3": _scaled(m - 3 * s, k)}
    if spec.rule_id == "R2":
        return {"range4": _scaled(4 * s, k), "upper2": _scaled(m + 2 * s, k),
                "lower2": _scaled(m - 2 * s, k)}
    _, c = spec.matrix_dims
    return {"ssd_limit": sd_threshold(c, 2 * s, k)}


def _check(bounds: dict, registers: dict) -> None:
    for name, bound in bounds.items():
        width = registers[name]
        if HEADROOM * bound > signed_max(width):
            raise PlanOverflow(name, bound, width)


def _plan_uncached(spec: RuleSpec, cfg: FixedPointConfig) -> ExecutionPlan:
    if spec.shape is None:
        raise ShapeMismatch(f"{spec.rule_id} spec has no concrete shape; use spec.shaped()")
    w = cfg.width
    M, span = cfg.max_abs_raw, cfg.raw_span
    if spec.rule_id == "R1":
        (n,) = spec.shape
        if n < 1:
            raise ShapeMismatch("R1 needs n >= 1")
        bounds = {"sample": M}
        registers = {"sample": w}
        acc, gates, depth = w, 4 * n - 1, 2 + tree_depth(n)
    elif spec.rule_id == "R2":
        (n,) = spec.shape
        if n < 2:
            raise ShapeMismatch("R2 needs n >= 2")
        # abs_branchless adds the mask (-1 or 0) before the xor
        bounds = {"sample": M, "pair_diff": span, "abs_intermediate": span + 1}
        registers = dict.fromkeys(bounds, w)
        acc, gates, depth = w, 12 * n - 11, 6 + tree_depth(n - 1)
    else:
        r, c = spec.shape
        if r < 1 or c < 2:
            raise ShapeMismatch("R3 needs r >= 1 rows and c >= 2 columns")
        acc = 2 * w
        bounds = {
            "sample": M, "row_range": span, "score": span,
            "square": M * M, "sum": c * M, "sum_squares": c * M * M,
            "n_sum_squares": c * c * M * M, "sum_squared": c * c * M * M,
            "ssd": c * c * M * M, "column_sum": r * M,
        }
        registers = {k: (w if k in ("sample", "row_range", "score") else acc) for k in bounds}
        L = tree_depth(c)
        gates = r * (14 * c - 7) + 5 * (r - 1)
        depth = max(4 * L + 1, L + 5) + 4 * tree_depth(r)
    _check(bounds, registers)
    return ExecutionPlan(spec, cfg, w, acc, thresholds(spec, cfg), bounds, gates, depth)


_plan_cached = lru_cache(maxsize=4096)(_plan_uncached)


def plan(spec: RuleSpec, cfg: FixedPointConfig = DEFAULT_CONFIG) -> ExecutionPlan:
    """Static bound check and cost estimate; raises PlanOverflow if infeasible.

    Every intermediate's worst-case magnitude, with a factor-2 headroom, must
    fit its register: value registers have the configured width, the R3
    dispersion accumulators have twice that width.
    """
    return _plan_cached(spec, cfg)


def _check_inputs(hs: Sequence[ObliviousHandle], cfg: FixedPointConfig):
    for h in hs:
        if h.width != cfg.width:
            raise WidthMismatch(f"handle width {h.width}, codec width {cfg.width}")


def rule1_eval(batch: Sequence[ObliviousHandle], spec: RuleSpec,
               cfg: FixedPointConfig = DEFAULT_CONFIG) -> RuleVerdict:
    p = plan(spec.shaped((len(batch),)), cfg)
    _check_inputs(batch, cfg)
    up, lo = p.thresholds["upper3"], p.thresholds["lower3"]
    bits = [x.gt(up) | x.lt(lo) for x in batch]
    (flag,) = fold_levels([bits], _bit_or)
    return RuleVerdict("R1", flag=flag)


def _bit_or(a, b):
    return a | b


def rule2_eval(batch: Sequence[ObliviousHandle], spec: RuleSpec,
               cfg: FixedPointConfig = DEFAULT_CONFIG) -> RuleVerdict:
    if len(batch) < 2:
        raise ShapeMismatch("R2 needs a window of at least 2 samples")
    p = plan(spec.shaped((len(batch),)), cfg)
    _check_inputs(batch, cfg)
    t = p.thresholds
    above = [x.gt(t["upper2"]) for x in batch]
    below = [x.lt(t["lower2"]) for x in batch]
    pair_flags = []
    for i in range(len(batch) - 1):
        wide_range = abs_branchless(batch[i + 1] - batch[i]).gt(t["range4"])
        same_side = (above[i] & above[i + 1]) | (below[i] & below[i + 1])
        pair_flags.append(wide_range | same_side)
    (flag,) = fold_levels([pair_flags], _bit_or)
    return RuleVerdict("R2", flag=flag)


def _rule3(matrix, spec: RuleSpec, cfg: FixedPointConfig, pool) -> RuleVerdict:
    rows = [list(r) for r in matrix]
    if not rows or any(len(r) == 0 for r in rows):
        raise ShapeMismatch("R3 matrix has an empty row")
    if len({len(r) for r in rows}) != 1:
        raise ShapeMismatch("R3 matrix rows differ in length")
    p = plan(spec.shaped((len(rows), len(rows[0]))), cfg)
    flat = [h for r in rows for h in r]
    _check_inputs(flat, cfg)
    r, c = p.spec.matrix_dims

    wide = pmap(lambda h: h.cast(p.acc_width), flat, pool)
    squares = pmap(lambda h: h * h, wide, pool)
    wide_rows = [wide[i * c:(i + 1) * c] for i in range(r)]
    sq_rows = [squares[i * c:(i + 1) * c] for i in range(r)]
    # max, min and both sums of every row reduced together, level by level
    folded = fold_levels(rows + rows + wide_rows + sq_rows,
                         [max_ct] * r + [min_ct] * r + [_add] * (2 * r), pool)
    maxes, mins = folded[:r], folded[r:2 * r]
    s1, s2 = folded[2 * r:3 * r], folded[3 * r:]
    limit = p.thresholds["ssd_limit"]

    def finish(i):
        spread = maxes[i] - mins[i]
        ssd = s2[i] * c - s1[i] * s1[i]
        return spread, ssd.gt(limit)

    done = pmap(finish, range(r), pool)
    (score,) = fold_levels([[d[0] for d in done]], max_ct, pool)
    return RuleVerdict("R3", score=score, row_flags=tuple(d[1] for d in done))


def rule3_eval(matrix, spec: RuleSpec, cfg: FixedPointConfig = DEFAULT_CONFIG) -> RuleVerdict:
    return _rule3(matrix, spec, cfg, None)


def rule3_eval_parallel(matrix, spec: RuleSpec, workers: int,
                        cfg: FixedPointConfig = DEFAULT_CONFIG, pool=None) -> RuleVerdict:
    """Same circuit as :func:`rule3_eval`, with each tree level spread over threads."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if pool is not None:
        return _rule3(matrix, spec, cfg, pool)
    if workers == 1:
        return _rule3(matrix, spec, cfg, None)
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return _rule3(matrix, spec, cfg, ex)


def evaluate(spec: RuleSpec, inputs, cfg: FixedPointConfig = DEFAULT_CONFIG,
             workers: int = 1, pool=None) -> RuleVerdict:
    if spec.rule_id == "R1":
        return rule1_eval(inputs, spec, cfg)
    if spec.rule_id == "R2":
        return rule2_eval(inputs, spec, cfg)
    return rule3_eval_parallel(inputs, spec, workers, cfg, pool)
