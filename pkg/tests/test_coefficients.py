import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from logsde.coefficients import (
    TruncationSpec,
    diagonal,
    fang_zhang_gap,
    from_functions,
    make_alpha_beta_model,
    make_linear_model,
    make_loglog_model,
    parse_model,
    smooth_cutoff,
    sup_abs_1d,
    truncate_model,
    verify_growth,
    verify_h1,
    with_drift_offset,
)

LL = make_loglog_model()
finite = st.floats(-1e6, 1e6, allow_nan=False)


def test_loglog_values():
    assert LL.b(1.0) == 0.0 and LL.b(0.0) == 0.0 and LL.b(-1.0) == 0.0
    assert LL.b(math.e) == pytest.approx(math.e, rel=1e-15)
    assert LL.sigma(math.e) == pytest.approx(math.e, rel=1e-15)
    assert LL.known_fixed_points == (-1.0, 0.0, 1.0)


def test_fixed_points_exact():
    for p in LL.known_fixed_points:
        assert LL.b(p) == 0.0 and LL.sigma(p) == 0.0
    for p in make_alpha_beta_model(1.0, 0.5).known_fixed_points:
        m = make_alpha_beta_model(1.0, 0.5)
        assert m.b(p) == 0.0 and m.sigma(p) == 0.0


@settings(max_examples=200)
@given(finite)
def test_loglog_odd_and_finite(x):
    assert LL.b(-x) == -LL.b(x)
    assert LL.sigma(-x) == -LL.sigma(x)
    assert math.isfinite(LL.b(x)) and math.isfinite(LL.sigma(x))


def test_vectorized_eval():
    x = np.array([-2.0, 0.0, 0.5, 3.0])
    assert np.array_equal(LL.b(x), [LL.b(float(v)) for v in x])


def test_alpha_beta():
    m = make_alpha_beta_model(1.0, 0.5)
    assert m.b(math.e) == pytest.approx(math.e) and m.sigma(math.e) == pytest.approx(math.e)
    m = make_alpha_beta_model(0.5, 0.0)
    assert m.b(4.0) == pytest.approx(2.0) and m.sigma(4.0) == pytest.approx(2.0)
    assert m.b(0.0) == 0.0
    with pytest.raises(ValueError):
        make_alpha_beta_model(0.9, 0.6)
    with pytest.raises(ValueError):
        make_alpha_beta_model(0.4, 0.2)


def test_derivatives_match_finite_differences():
    for m in (LL, make_alpha_beta_model(0.75, 0.25)):
        for x in (0.3, 2.0, 5.5, -3.0):
            h = 1e-6
            assert m.drift_jac(x) == pytest.approx((m.b(x + h) - m.b(x - h)) / (2 * h), rel=1e-6)
            assert m.diffusion_jac(x) == pytest.approx((m.sigma(x + h) - m.sigma(x - h)) / (2 * h), rel=1e-6)


def test_sup_abs():
    assert sup_abs_1d(LL, math.e) == pytest.approx(math.e, rel=1e-9)


def test_clamp_truncation():
    tr = truncate_model(LL, TruncationSpec(math.e))
    assert tr.truncation.m_R == pytest.approx(math.e, rel=1e-9)
    assert tr.b(math.e**2) == pytest.approx(math.e + 1, rel=1e-9)
    assert tr.bound == pytest.approx(math.e + 1, rel=1e-9)
    xs = np.linspace(-50, 50, 2001)
    assert np.all(np.abs(tr.b(xs)) <= tr.bound) and np.all(np.abs(tr.sigma(xs)) <= tr.bound)
    inside = xs[np.abs(xs) <= math.e]
    assert np.array_equal(tr.b(inside), LL.b(inside))
    assert tr.b(1.0) == 0.0


def test_smooth_cutoff_truncation():
    R = 3.0
    tr = truncate_model(LL, TruncationSpec(R, "smooth-cutoff"))
    xs = np.linspace(-R, R, 301)
    assert np.array_equal(tr.b(xs), LL.b(xs)) and np.array_equal(tr.sigma(xs), LL.sigma(xs))
    assert tr.b(R + 2) == 0.0 and tr.sigma(-(R + 1.0001)) == 0.0
    assert smooth_cutoff(R + 0.5, R) == pytest.approx(0.5)
    assert tr.bounded


def test_truncation_idempotent():
    spec = TruncationSpec(4.0)
    once = truncate_model(LL, spec)
    twice = truncate_model(once, spec)
    xs = np.linspace(-20, 20, 801)
    assert np.array_equal(once.b(xs), twice.b(xs)) and np.array_equal(once.sigma(xs), twice.sigma(xs))


def test_truncation_spec_validation():
    with pytest.raises(ValueError):
        TruncationSpec(0.0)
    with pytest.raises(ValueError):
        TruncationSpec(1.0, "cut")


def test_array_truncation_diagonal():
    m = diagonal(LL, 2)
    tr = truncate_model(m, TruncationSpec(3.0, "clamp", m_R=4.0))
    x = np.array([[10.0, 0.5]])
    assert np.all(np.abs(tr.drift(x)) <= 5.0)
    assert tr.drift(np.array([0.5, -0.5])) == pytest.approx(m.drift(np.array([0.5, -0.5])))


def test_h1_drift_line_holds_for_loglog():
    rep = verify_h1(LL, 2.0, 1.0, [3, 10, 100, 1000], 20_000, seed=1)
    assert rep.violations_by_line["drift"] == 0
    assert rep.violation_count == rep.violations_by_line["drift"] + rep.violations_by_line["diffusion"]
    assert len(rep.rows) == 8


def test_h1_deterministic():
    a = verify_h1(LL, 2.0, 1.0, [10, 100], 5000, seed=3)
    b = verify_h1(LL, 2.0, 1.0, [10, 100], 5000, seed=3)
    assert a.rows == b.rows and a.C_est == b.C_est


def test_h1_quadratic_drift_fails():
    sq = from_functions(lambda x: x * x, lambda x: 0.0, name="square")
    rep = verify_h1(sq, 2.0, 1.0, [1000], 20_000, seed=0)
    assert rep.violations_by_line["drift"] > 0
    # direct evaluation at (1000, 999)
    assert abs(sq.b(1000.0) - sq.b(999.0)) > 2 * (math.log(1000) * 1 + math.log(1000) / 1000)


def test_h1_c_est_is_admissible():
    rep = verify_h1(LL, 2.0, 1.0, [10, 100], 5000, seed=2)
    again = verify_h1(LL, rep.C_est * (1 + 1e-9), 1.0, [10, 100], 5000, seed=2)
    assert again.violation_count == 0


def test_h1_rejects_small_n():
    with pytest.raises(ValueError):
        verify_h1(LL, 2.0, 1.0, [2], 10)


@settings(max_examples=50, deadline=None)
@given(st.floats(1.0, 1e4), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_finite_increment_bound(N, u, v):
    # points with 1/N <= |x|, |y| <= N on the same side of 0
    x = math.copysign(N ** u, 1.0)
    y = math.copysign(N ** v, 1.0)
    assert abs(LL.b(x) - LL.b(y)) <= (1 + math.log(N)) * abs(x - y) * (1 + 1e-12) + 1e-300


def test_growth():
    rep = verify_growth(LL, 10.0, 5000, seed=0)
    assert rep.holds and rep.C_fit <= 1.0 + 1e-9
    assert verify_growth(truncate_model(LL, TruncationSpec(5.0)), 10.0, 2000).holds
    sq = from_functions(lambda x: x * x, lambda x: 1.0, name="square")
    bad = verify_growth(sq, 10.0, 5000)
    assert not bad.holds and bad.growth_ratio > 10


def test_fang_zhang_gap_values():
    tab = fang_zhang_gap(LL, [10.0, 1e6])
    mp = mpmath.mpf
    g10 = 11 * mpmath.log(mp(11)) - 10 * mpmath.log(mp(10))
    assert tab[0, 1] == pytest.approx(float(g10), rel=1e-13)
    assert tab[0, 1] == pytest.approx(3.350997070841615, rel=1e-12)
    g6 = (mp(10) ** 6 + 1) * mpmath.log(mp(10) ** 6 + 1) - mp(10) ** 6 * mpmath.log(mp(10) ** 6)
    assert tab[1, 1] == pytest.approx(float(g6), rel=1e-9)
    lin = fang_zhang_gap(make_linear_model(1.0, 0.0), [2.0, 50.0, 1e4])
    assert np.allclose(lin[:, 1], 1.0)
    with pytest.raises(ValueError):
        fang_zhang_gap(LL, [0.5])


def test_fang_zhang_gap_grows_like_log():
    xs = np.logspace(1, 8, 8)
    g = fang_zhang_gap(LL, xs)[:, 1]
    assert np.all(np.diff(g) > 0)
    assert np.allclose(g, np.log(xs) + 1, rtol=0.05)


def test_parse_model():
    assert parse_model("loglog").name == "loglog"
    assert parse_model("linear:-1,1").b(2.0) == -2.0
    assert parse_model("alphabeta:1,0.5").b(math.e) == pytest.approx(math.e)
    assert parse_model("custom:logsde.coefficients:make_loglog_model").name == "loglog"
    for bad in ("nope", "linear:1", "custom:x"):
        with pytest.raises(ValueError):
            parse_model(bad)


def test_drift_offset():
    m = with_drift_offset(LL, 1.0)
    assert m.b(2.0) == LL.b(2.0) + 1.0 and m.sigma(2.0) == LL.sigma(2.0)
