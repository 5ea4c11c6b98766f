import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from logsde.brownian import DyadicBrownianPath, refine_to, sample_path
from logsde.coefficients import from_functions, make_linear_model, make_loglog_model
from logsde.euler import (
    simulate,
    simulate_batch,
    simulate_pair,
    strong_error_study,
    tail_bound,
    tail_bound_check,
)
from logsde.rng import RngStream

LL = make_loglog_model()


def zero_path(n, T=1.0, m=1):
    return DyadicBrownianPath(n, T, m, np.zeros((int(T * 2**n) + 1, m)), ())


def path(i, n=10, T=1.0, label="t"):
    return sample_path(RngStream.for_path(0, label, i), T, n)


@pytest.mark.parametrize("x0", [-1.0, 0.0, 1.0])
def test_fixed_points_constant(x0):
    for i in range(20):
        tr = simulate(LL, path(i), x0)
        assert np.all(tr.values == x0) and not tr.exited and tr.valid


def test_initial_value_exact():
    tr = simulate(LL, path(0), 0.1 + 0.2)
    assert tr.values[0, 0] == 0.1 + 0.2


def test_zero_path_closed_form():
    tr = simulate(LL, zero_path(14), 2.0)
    assert abs(tr.values[-1, 0] - math.exp(math.e * math.log(2.0))) < 1e-3


def test_forward_euler_first_order():
    exact = math.exp(math.e * math.log(2.0))
    e10 = abs(simulate(LL, zero_path(10), 2.0).values[-1, 0] - exact)
    e11 = abs(simulate(LL, zero_path(11), 2.0).values[-1, 0] - exact)
    assert 0.4 <= e11 / e10 <= 0.6


def test_pair_identical_and_pinned():
    p = path(3)
    a, b = simulate_pair(LL, p, 0.7, 0.7)
    assert np.array_equal(a.values, b.values)
    a, b = simulate_pair(LL, p, -1.0, 1.0)
    assert np.all(a.values == -1.0) and np.all(b.values == 1.0)


def test_pair_gap_nonzero_inside_unit_interval():
    # a crossing needs the scheme to jump over the fixed point at 1
    inside = 0
    for i in range(20):
        a, b = simulate_pair(LL, path(i, 12), 0.5, 0.6)
        if np.all((a.values > 0) & (a.values < 1) & (b.values > 0) & (b.values < 1)):
            inside += 1
            assert np.all(a.values < b.values)
    assert inside >= 15


@pytest.mark.parametrize("eps", [0.25, 1 / 16])
def test_noise_scaling_bitwise(eps):
    p = path(5)
    a = simulate(LL, p, 2.0, epsilon=eps)
    b = simulate(LL, p.scaled(math.sqrt(eps)), 2.0)
    assert np.array_equal(a.values, b.values)


def test_noise_scaling_general():
    p = path(6)
    a = simulate(LL, p, 2.0, epsilon=0.1)
    b = simulate(LL, p.scaled(math.sqrt(0.1)), 2.0)
    assert np.allclose(a.values, b.values, rtol=1e-12)


def test_coupling_exactness():
    rng = RngStream(9, 9)
    p = sample_path(rng, 1.0, 8)
    q = refine_to(p, rng, 12).restrict(8)
    assert np.array_equal(simulate(LL, p, 2.0).values, simulate(LL, q, 2.0).values)


def test_exit_freeze_and_monotonicity():
    p = path(1)
    free = simulate(LL, p, 5.0, N_trunc=1e12)
    tight = simulate(LL, p, 5.0, N_trunc=6.0)
    assert tight.exited
    k = tight.exit_index
    assert abs(tight.values[k, 0]) > 6.0 and np.all(tight.values[k:] == tight.values[k])
    assert np.array_equal(tight.values[: k + 1], free.values[: k + 1])


def test_joint_exit():
    p = path(1)
    a, b = simulate_pair(LL, p, 5.0, 0.5, N_trunc=6.0)
    assert a.exit_index == b.exit_index


def test_invalid_flag():
    cube = from_functions(lambda x: x**3, lambda x: 0.0, name="cube")
    tr = simulate(cube, zero_path(4), 10.0, N_trunc=math.inf)
    assert not tr.valid
    assert np.isnan(tr.values[tr.invalid_index:, 0]).all()
    assert np.all(np.isfinite(tr.values[: tr.invalid_index]))


def test_preconditions():
    with pytest.raises(ValueError):
        simulate(LL, path(0), 1.0, epsilon=0.0)
    with pytest.raises(ValueError):
        simulate(LL, path(0), math.nan)
    with pytest.raises(ValueError):
        simulate(LL, sample_path(RngStream(0), 1.0, 4, 2), 1.0)


def test_batch_matches_single():
    p = path(2)
    v, _, _ = simulate_batch(LL, p, [[0.5], [2.0]])
    assert np.array_equal(v[:, 1], simulate(LL, p, 2.0).values)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.integers(0, 1000))
def test_csv_rows_shape(x0, i):
    tr = simulate(LL, path(i, 4), x0)
    rows = list(tr.csv_rows())
    assert len(rows) == 17 and rows[0][2] == x0
    assert tr.csv_header() == ("k", "t", "x_1", "exited")


def test_strong_error_exact_for_brownian():
    tab = strong_error_study(make_linear_model(0.0, 1.0), 0.3, 1.0, 4, 6, 9, 10, seed=1)
    # only the rounding of W at coarse grid points separates the levels
    assert np.all(tab.estimates < 1e-28)


def test_strong_error_deterministic_ratio():
    tab = strong_error_study(make_linear_model(-1.0, 0.0), 1.0, 1.0, 6, 9, 14, 4, seed=1)
    r = tab.estimates[1:] / tab.estimates[:-1]
    assert np.all((r > 0.2) & (r < 0.3))


def test_strong_error_study_layout():
    tab = strong_error_study(LL, 2.0, 1.0, 4, 6, 8, 30, seed=2)
    assert tab.levels == [4, 5, 6]
    assert all(r[1] == 30 and r[2] == 0 for r in tab.rows)
    assert np.all(tab.estimates >= 0) and np.all(tab.stderrs > 0)
    again = strong_error_study(LL, 2.0, 1.0, 4, 6, 8, 30, seed=2, workers=3)
    assert tab.rows == again.rows
    with pytest.raises(ValueError):
        strong_error_study(LL, 2.0, 1.0, 6, 6, 8, 30, seed=2)


def test_tail_bound_formula():
    assert tail_bound(1, 0, 1, 1, 4) == pytest.approx(2 * math.exp(-8))
    assert tail_bound(1, 0, 1, 1, 4) == pytest.approx(6.709e-4, rel=1e-3)


def test_tail_check_reflection_oracle():
    # discrete monitoring at level 10 shifts the barrier by 0.5826 sqrt(dt)
    R, level, M = 3.0, 10, 200_000
    shifted = R + 0.5826 * 2.0 ** (-level / 2)
    oracle = 4 * norm.sf(shifted)
    chk = tail_bound_check(1, 0, 1, 1, R, M, seed=3, level=level)
    assert chk.empirical_prob <= chk.paper_bound
    assert chk.lo95 <= chk.empirical_prob <= chk.hi95
    assert abs(chk.empirical_prob / oracle - 1) < 0.1


def test_tail_check_far_barrier_and_dims():
    assert tail_bound_check(1, 0, 1, 1, 12, 2000, seed=0, level=8).hits == 0
    chk = tail_bound_check(1, 0.5, 2, 1, 3, 20_000, seed=0, level=8)
    assert chk.empirical_prob <= chk.paper_bound
    with pytest.raises(ValueError):
        tail_bound_check(1, 5, 1, 1, 4, 10, seed=0)


def test_tail_check_matches_sample_path():
    # the streaming kernel sees the same W as sample_path for each index
    R = 1.0
    chk = tail_bound_check(1, 0, 1, 1, R, 200, seed=7, level=6)
    hits = sum(int(np.max(np.abs(sample_path(RngStream.for_path(7, "tail-bound", i), 1.0, 6).values)) >= R)
               for i in range(200))
    assert chk.hits == hits


def test_strong_error_typical_paths_converge():
    # the mean is dominated by rare huge paths; the bulk of the law is not
    tab = strong_error_study(LL, 2.0, 1.0, 6, 10, 13, 200, seed=12345)
    assert tab.samples.shape == (200, 5)
    for q in (0.5, 0.9):
        qs = tab.quantiles(q)
        assert np.all(np.diff(qs) < 0)
        assert qs[-1] < qs[0] / 4
