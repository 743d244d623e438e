"""Exact data-oblivious statistics over handles.

Nothing here branches on a value: every function emits the same gate
sequence for any inputs of the same shape.  Folds use a fixed balanced tree
(pairs ``(0,1), (2,3), ...`` per level, an odd tail carried up unchanged) so
the result is identical however the nodes of a level are scheduled.
"""

from __future__ import annotations

from decimal import ROUND_FLOOR, Decimal
from typing import Callable, Optional, Sequence

from ..codec import to_decimal
from ..errors import EmptyVector
from ..oblivious import ObliviousBit, ObliviousHandle, select


def abs_branchless(h: ObliviousHandle) -> ObliviousHandle:
    m = h >> (h.width - 1)
    return (h + m) ^ m


def abs_select(h: ObliviousHandle) -> ObliviousHandle:
    neg = -h
    return select(neg.gt(0), neg, h)


def abs_naive(h: ObliviousHandle) -> ObliviousHandle:
    """Both branches computed and blended through complementary masks."""
    neg = h * -1
    is_neg = neg.gt(0)
    keep = ~is_neg
    return (is_neg.mask(h.width) & neg) | (keep.mask(h.width) & h)


ABS_VARIANTS: dict[str, Callable[[ObliviousHandle], ObliviousHandle]] = {
    "branchless": abs_branchless,
    "select": abs_select,
    "naive": abs_naive,
}


def max_ct(a: ObliviousHandle, b: ObliviousHandle) -> ObliviousHandle:
    return select(a.gt(b), a, b)


def min_ct(a: ObliviousHandle, b: ObliviousHandle) -> ObliviousHandle:
    return select(a.gt(b), b, a)


def _add(a, b):
    return a + b


def fold_levels(vectors: Sequence[Sequence], op, pool=None) -> list:
    """Reduce several vectors at once along balanced trees.

    ``op`` is one binary callable, or a sequence with one callable per vector.
    Each tree level is a barrier; the pairs of a level, across every vector,
    are independent and go to ``pool.map`` when a pool is given.
    """
    level = [list(v) for v in vectors]
    ops = [op] * len(level) if callable(op) else list(op)
    if len(ops) != len(level):
        raise ValueError("need one op per vector")
    if any(len(v) == 0 for v in level):
        raise EmptyVector("cannot fold an empty vector")
    while any(len(v) > 1 for v in level):
        pairs = [(ops[j], v[i], v[i + 1])
                 for j, v in enumerate(level) for i in range(0, len(v) - 1, 2)]
        if pool is None:
            merged = [f(a, b) for f, a, b in pairs]
        else:
            merged = list(pool.map(lambda p: p[0](p[1], p[2]), pairs))
        it = iter(merged)
        nxt = []
        for v in level:
            row = [next(it) for _ in range(len(v) // 2)]
            if len(v) % 2:
                row.append(v[-1])
            nxt.append(row)
        level = nxt
    return [v[0] for v in level]


def tree_depth(n: int) -> int:
    return max(n - 1, 0).bit_length()


def max_vec(hs: Sequence[ObliviousHandle], pool=None) -> ObliviousHandle:
    return fold_levels([hs], max_ct, pool)[0]


def min_vec(hs: Sequence[ObliviousHandle], pool=None) -> ObliviousHandle:
    return fold_levels([hs], min_ct, pool)[0]


def sum_vec(hs: Sequence[ObliviousHandle], pool=None) -> ObliviousHandle:
    return fold_levels([hs], _add, pool)[0]


def pmap(fn, items, pool=None):
    return [fn(x) for x in items] if pool is None else list(pool.map(fn, items))


def ssd_many(rows: Sequence[Sequence[ObliviousHandle]], acc_width: Optional[int] = None,
             pool=None) -> list[ObliviousHandle]:
    """``n * sum(e^2) - (sum e)^2`` per row, evaluated in an ``acc_width`` register."""
    if any(len(r) == 0 for r in rows):
        raise EmptyVector("cannot compute dispersion of an empty vector")
    flat = [h for r in rows for h in r]
    width = acc_width or flat[0].width
    wide = pmap(lambda h: h.cast(width), flat, pool)
    squares = pmap(lambda w: w * w, wide, pool)
    groups, sq_groups, k = [], [], 0
    for r in rows:
        groups.append(wide[k:k + len(r)])
        sq_groups.append(squares[k:k + len(r)])
        k += len(r)
    sums = fold_levels(groups + sq_groups, _add, pool)
    s1, s2 = sums[:len(rows)], sums[len(rows):]

    def finish(i):
        return s2[i] * len(rows[i]) - s1[i] * s1[i]

    return pmap(finish, range(len(rows)), pool)


def ssd(hs: Sequence[ObliviousHandle], acc_width: Optional[int] = None, pool=None) -> ObliviousHandle:
    return ssd_many([hs], acc_width, pool)[0]


def sd_threshold(n: int, sigma_limit, scale: int) -> int:
    """Largest integer SSD value whose sample SD does not exceed ``sigma_limit``."""
    sigma = to_decimal(sigma_limit) * scale
    return int((Decimal(n * (n - 1)) * sigma * sigma).to_integral_value(ROUND_FLOOR))


def sd_exceeds(hs: Sequence[ObliviousHandle], sigma_limit, scale: int = 100,
               acc_width: Optional[int] = None, pool=None) -> ObliviousBit:
    """Sample SD of the lanes' window strictly above ``sigma_limit``.

    No division or square root: the squared limit is folded into a plaintext
    threshold on the scaled SSD.
    """
    return ssd(hs, acc_width, pool).gt(sd_threshold(len(hs), sigma_limit, scale))
