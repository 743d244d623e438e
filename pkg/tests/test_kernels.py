import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from obliqc.errors import EmptyVector
from obliqc.kernels import (
    ABS_VARIANTS,
    abs_branchless,
    fold_levels,
    max_vec,
    min_vec,
    sd_exceeds,
    ssd,
    sum_vec,
)
from obliqc.oblivious import ReferenceBackend, TraceBackend

raw_values = st.integers(0, 10000)


def enc(b, k, xs):
    """One handle per sample, one lane each."""
    return [b.encrypt([x], k) for x in xs]


def dec(b, k, h):
    return int(b.decrypt(h, k)[0])


def test_abs_variants_examples(ref):
    b, k = ref
    for fn in ABS_VARIANTS.values():
        assert b.decrypt(fn(b.encrypt(-525, k)), k) == 525
        assert b.decrypt(fn(b.encrypt(0, k)), k) == 0
        assert b.decrypt(fn(b.encrypt(10000, k)), k) == 10000


def test_abs_gate_count_ordering(tracer):
    b, k = tracer
    counts = {n: len(b.trace_program(fn, b.encrypt(-3, k))) for n, fn in ABS_VARIANTS.items()}
    assert counts["branchless"] == 3
    assert counts["branchless"] < counts["select"] <= counts["naive"]


def test_abs_variants_agree_on_random_lanes(ref):
    b, k = ref
    v = np.random.default_rng(3).integers(-10000, 10001, 10**6)
    h = b.encrypt(v, k)
    for fn in ABS_VARIANTS.values():
        assert np.array_equal(b.decrypt(fn(h), k), np.abs(v))


def test_min_max_examples(ref):
    b, k = ref
    assert dec(b, k, max_vec(enc(b, k, [3, 9, 1]))) == 9
    assert dec(b, k, min_vec(enc(b, k, [3, 9, 1]))) == 1
    assert dec(b, k, min_vec(enc(b, k, [42]))) == 42
    with pytest.raises(EmptyVector):
        max_vec([])


def test_min_max_sum_vs_native_lanes(ref32):
    b, k = ref32
    rng = np.random.default_rng(4)
    trials = 10**5
    for n in (1, 2, 3, 7, 16, 33, 64):
        x = rng.integers(0, 10001, (trials // 64 * (1 if n > 16 else 4), n))
        hs = [b.encrypt(x[:, j], k) for j in range(n)]
        assert np.array_equal(b.decrypt(max_vec(hs), k), x.max(axis=1))
        assert np.array_equal(b.decrypt(min_vec(hs), k), x.min(axis=1))
        assert np.array_equal(b.decrypt(sum_vec(hs), k), x.sum(axis=1))


def test_ssd_examples(ref):
    b, k = ref
    assert dec(b, k, ssd(enc(b, k, [1000, 1000, 1000]), acc_width=32)) == 0
    assert dec(b, k, ssd(enc(b, k, [100, 200, 300]), acc_width=32)) == 60000
    # 3 * sum((x - mean)^2) * scale^2, computed in floating point
    x = np.array([1.0, 2.0, 3.0])
    assert 60000 == round(3 * ((x - x.mean()) ** 2).sum() * 100**2)


def test_sd_exceeds_examples(ref):
    b, k = ref
    assert dec(b, k, sd_exceeds(enc(b, k, [100, 200, 300]), "0.5", acc_width=32)) == 1
    assert dec(b, k, sd_exceeds(enc(b, k, [700] * 5), "0.01", acc_width=32)) == 0


def test_sd_exceeds_vs_float_oracle(ref32):
    b, k = ref32
    rng = np.random.default_rng(5)
    n, trials = 8, 10**5
    x = rng.integers(4000, 6001, (trials, n))
    limit = "3.17"
    hs = [b.encrypt(x[:, j], k) for j in range(n)]
    got = b.decrypt(sd_exceeds(hs, limit, acc_width=64), k)
    sd = np.std(x / 100, axis=1, ddof=1)
    tie = np.isclose(sd, 3.17, rtol=0, atol=1e-9)
    assert np.array_equal(got[~tie], (sd > 3.17)[~tie].astype(int))


@given(st.lists(raw_values, min_size=1, max_size=24), st.randoms())
def test_fold_permutation_invariance(xs, rnd):
    b = ReferenceBackend()
    k = b.keygen(32)
    ys = list(xs)
    rnd.shuffle(ys)
    for kernel in (max_vec, min_vec, sum_vec):
        assert dec(b, k, kernel(enc(b, k, xs))) == dec(b, k, kernel(enc(b, k, ys)))
    if len(xs) > 1:
        assert dec(b, k, ssd(enc(b, k, xs), 64)) == dec(b, k, ssd(enc(b, k, ys), 64))


@given(st.lists(raw_values, min_size=1, max_size=24))
def test_ssd_nonnegative_zero_iff_constant(xs):
    b = ReferenceBackend()
    k = b.keygen(32)
    v = dec(b, k, ssd(enc(b, k, xs), 64))
    assert v >= 0
    assert (v == 0) == (len(set(xs)) == 1)
    n = len(xs)
    assert v == n * sum(x * x for x in xs) - sum(xs) ** 2


def test_fold_is_schedule_deterministic(ref):
    from concurrent.futures import ThreadPoolExecutor

    b, k = ref
    hs = enc(b, k, list(range(37)))
    with ThreadPoolExecutor(8) as pool:
        a = fold_levels([hs, hs], [lambda x, y: x + y, lambda x, y: x - y], pool)
    s = fold_levels([hs, hs], [lambda x, y: x + y, lambda x, y: x - y])
    assert [dec(b, k, h) for h in a] == [dec(b, k, h) for h in s]


def test_kernels_are_oblivious():
    b = TraceBackend()
    k = b.keygen(32)
    rng = np.random.default_rng(6)
    for kernel in (max_vec, min_vec, sum_vec, lambda hs: ssd(hs, 64),
                   lambda hs: sd_exceeds(hs, 1, acc_width=64), lambda hs: abs_branchless(hs[0])):
        traces = {b.trace_program(kernel, enc(b, k, rng.integers(0, 10001, 9))).to_bytes()
                  for _ in range(20)}
        assert len(traces) == 1
