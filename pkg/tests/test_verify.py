import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from grouptest.adaptive import adku_bound, detect_adaptive_det
from grouptest.core import InfeasibleCheck, InvalidInput, PoolingMatrix, Status, bernoulli_matrix, make_rng
from grouptest.nonadaptive import decode_restricted, gen_restricted_matrix, identity_matrix
from grouptest.verify import (
    BoundContext,
    bound_formulas,
    check_restricted,
    check_restricted_sampled,
    exhaustive_decoder_check,
)


def _brute_isolated(dense, cols):
    sub = dense[:, list(cols)]
    rows = sub[sub.sum(axis=1) == 1]
    return len({int(np.argmax(r)) for r in rows})


def test_identity_is_restricted():
    assert check_restricted(identity_matrix(5), 3, 3)
    for k in range(1, 6):
        assert check_restricted(identity_matrix(6), k, k)


def test_all_ones_row_has_no_isolation():
    m = PoolingMatrix.from_dense(np.ones((1, 4), bool))
    res = check_restricted(m, 2, 1)
    assert not res and len(res.witness) == 2 and res.min_isolated == 0


@given(st.integers(3, 9), st.integers(1, 20), st.floats(0.1, 0.6), st.integers(0, 2**32), st.data())
def test_check_matches_brute_force(n, t, p, seed, data):
    import itertools

    m = bernoulli_matrix(t, n, p, make_rng(seed))
    r = data.draw(st.integers(1, n))
    s = data.draw(st.integers(1, r))
    dense = m.to_dense()
    worst = min(_brute_isolated(dense, c) for c in itertools.combinations(range(n), r))
    res = check_restricted(m, r, s)
    assert res.ok == (worst >= s) and res.min_isolated == worst
    if not res.ok:
        assert len(set(res.witness)) == r and _brute_isolated(dense, [j - 1 for j in res.witness]) < s


def test_guard_raises():
    m = bernoulli_matrix(4, 60, 0.2, make_rng(0))
    assert math.comb(60, 10) > 10**7
    with pytest.raises(InfeasibleCheck):
        check_restricted(m, 10, 2)


def test_bad_parameters():
    with pytest.raises(InvalidInput):
        check_restricted(identity_matrix(4), 5, 1)
    with pytest.raises(InvalidInput):
        check_restricted(identity_matrix(4), 2, 3)
    with pytest.raises(InvalidInput):
        check_restricted_sampled(identity_matrix(4), 2, 1, 0, make_rng(0))


def test_sampled_agrees_on_verified_matrix():
    m = identity_matrix(12)
    assert check_restricted_sampled(m, 5, 5, 2000, make_rng(1))


def test_sampled_finds_dense_violations():
    m = bernoulli_matrix(3, 10, 0.9, make_rng(3))
    exact = check_restricted(m, 4, 3)
    assert not exact
    sampled = check_restricted_sampled(m, 4, 3, 500, make_rng(4))
    assert not sampled and _brute_isolated(m.to_dense(), [j - 1 for j in sampled.witness]) < 3


@given(st.integers(0, 2**32))
def test_sampled_false_implies_exact_false(seed):
    m = bernoulli_matrix(6, 9, 0.35, make_rng(seed))
    if not check_restricted_sampled(m, 4, 2, 50, make_rng(seed + 1)):
        assert not check_restricted(m, 4, 2)


def test_sampled_large_construction():
    m = gen_restricted_matrix(4096, 8, 4, 0.1, make_rng(0))
    assert check_restricted_sampled(m, 8, 4, 10**5, make_rng(1))


def test_sampled_subsets_when_r_is_large():
    assert check_restricted_sampled(identity_matrix(10), 9, 9, 200, make_rng(2))


def test_scale_closure_small():
    m = gen_restricted_matrix(14, 6, 4, 0.1, make_rng(6))
    assert check_restricted(m, 6, 4)
    for k in range(1, 4):
        assert check_restricted(m, 6 - k, 4 - k)
        assert check_restricted(m, 6, 4 - k)


def test_decoder_check_adaptive():
    rep = exhaustive_decoder_check(detect_adaptive_det, 12, range(2, 5), 2)
    assert rep.ok and rep.runs == sum(math.comb(12, d) for d in (2, 3, 4))
    assert rep.max_tests <= 2 * math.log2(6) + 6 == adku_bound(12, 2)


def test_decoder_check_restricted():
    for seed in range(10):
        m = gen_restricted_matrix(20, 4, 3, 0.1, make_rng(seed))
        if check_restricted(m, 4, 3):
            break
    rep = exhaustive_decoder_check(lambda o, ell: decode_restricted(m, o.answer_batch(m), ell), 20, [2], 1)
    assert rep.ok and rep.max_rounds == 1


def test_decoder_check_ell_above_range_all_failed():
    rep = exhaustive_decoder_check(detect_adaptive_det, 8, [1, 2], 3)
    assert len(rep.failures) == rep.runs == 8 + 28


def test_decoder_check_guard():
    with pytest.raises(InfeasibleCheck):
        exhaustive_decoder_check(detect_adaptive_det, 60, [10], 1)


def test_bounds_adaptive_known():
    b = bound_formulas(BoundContext(1024, 16, 4, 0.1, "AD", True))
    assert b.lower == pytest.approx(24)
    assert b.upper == pytest.approx(44)
    assert not b.lower_asymptotic and not b.upper_asymptotic and b.consistent


def test_bounds_nonadaptive_randomized_known():
    b = bound_formulas(BoundContext(1024, 16, 4, 0.1, "NR", True))
    assert b.lower == pytest.approx(23) and b.upper_asymptotic


def test_bounds_nonadaptive_deterministic_unknown():
    b = bound_formulas(BoundContext(500, 10, 1, 0.1, "ND", False))
    assert b.lower == 500 and b.lower_asymptotic and b.upper == 500 and not b.upper_asymptotic
    assert b.rows == (12, 11)


def test_bounds_other_rows():
    adu = bound_formulas(BoundContext(1024, 64, 4, 0.1, "AD", False))
    assert adu.lower == pytest.approx(4 * 8) and adu.rows == (3, 4)
    for setting in ("AR", "NR"):
        for known in (True, False):
            b = bound_formulas(BoundContext(2**16, 256, 8, 0.1, setting, known))
            if setting == "AR" or known:
                assert b.lower == pytest.approx(8 * 8 - 1)
    ndk = bound_formulas(BoundContext(2**10, 16, 2, 0.1, "ND", True))
    assert ndk.lower == ndk.upper == pytest.approx(16 * 6) and ndk.lower_asymptotic
    nru = bound_formulas(BoundContext(2**16, 256, 4, 0.1, "NR", False))
    assert nru.lower == pytest.approx(4 * 256 / (2 + 4)) and nru.upper == pytest.approx((4 + math.log2(10)) * 256)


@given(
    st.integers(2, 2**20), st.data(), st.floats(0.01, 0.99),
    st.sampled_from(["AD", "AR", "ND", "NR"]), st.booleans(),
)
def test_bound_formulas_are_pure(n, data, delta, setting, known):
    d = data.draw(st.integers(1, n))
    ell = data.draw(st.integers(1, d))
    ctx = BoundContext(n, d, ell, delta, setting, known)
    a, b = bound_formulas(ctx), bound_formulas(ctx)
    assert a == b
    assert a.lower is not None and a.upper is not None
    assert a.consistent == (a.lower <= a.upper)


def test_bound_context_validation():
    with pytest.raises(InvalidInput):
        BoundContext(100, 5, 6, 0.1, "AD", True)
    with pytest.raises(InvalidInput):
        BoundContext(100, 5, 1, 0.1, "XX", True)
