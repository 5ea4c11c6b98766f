import math

import numpy as np
import pytest

from logsde.brownian import sample_path
from logsde.coefficients import (
    TruncationSpec,
    make_linear_model,
    make_loglog_model,
    truncate_model,
)
from logsde.euler import simulate
from logsde.ldp import (
    LdpTable,
    _exit_kernel,
    _tube_kernel,
    euler_ldp_gap_probe,
    exit_probability_study,
    make_row,
    slope_fit,
    tube_probability_study,
    upper_bound_consistent,
)
from logsde.rng import RngStream, path_keys
from logsde.stats import wilson_interval

LL = make_loglog_model()
LL10 = truncate_model(LL, TruncationSpec(10.0))
BM = truncate_model(make_linear_model(0.0, 1.0), TruncationSpec(5.0))


def test_wilson_coverage():
    rng = np.random.default_rng(0)
    p, M = 0.03, 400
    hits = rng.binomial(M, p, size=10_000)
    cover = np.mean([lo <= p <= hi for lo, hi in (wilson_interval(int(h), M) for h in hits)])
    assert 0.93 <= cover <= 0.97


def test_zero_hit_row_is_a_bound():
    r = make_row(0.1, 0, 1000)
    assert r.upper_bound_only and r.phat == 0.0
    assert r.eps_log_phat == pytest.approx(0.1 * math.log(r.hi95))
    assert r.hi95 == pytest.approx(3.84 / 1000, rel=0.01)
    r = make_row(0.1, 10, 1000)
    assert not r.upper_bound_only and r.lo95 < 0.01 < r.hi95


def test_slope_fit_recovers_exponent():
    I, a, M = 0.8, -0.5, 10**12
    rows = [make_row(e, round(M * math.exp(a - I / e)), M) for e in (0.5, 0.25, 0.125)]
    fit = slope_fit(rows)
    assert fit.I_hat == pytest.approx(I, rel=1e-6) and fit.intercept == pytest.approx(a, abs=1e-5)
    assert fit.rows == 3 and fit.stderr > 0


def test_slope_fit_skips_degenerate_rows():
    rows = [make_row(1.0, 100, 100), make_row(0.5, 30, 100), make_row(0.25, 5, 100), make_row(0.1, 0, 100)]
    assert slope_fit(rows).rows == 2
    with pytest.raises(ValueError):
        slope_fit(rows[:2] + rows[3:])
    t = LdpTable(rows[:1], "exit")
    assert "I_hat" not in t.summary()


def test_exit_unit_noise_almost_sure():
    t = exit_probability_study(BM, 0.0, 0.1, [1.0], 1.0, 8, 2000, seed=1)
    assert t.rows[0].phat > 0.99


def test_exit_kernel_matches_simulate():
    M, level, eps, R = 300, 8, 0.25, 0.5
    keys = path_keys(3, "k", range(M))
    k = LL10.scalar
    fast = _exit_kernel(k.b, k.s, keys, 2**level, level, 2.0**-level, math.sqrt(eps), 2.0, 2.0, R)
    slow = []
    for i in range(M):
        v = simulate(LL10, sample_path(RngStream.for_path(3, "k", i), 1.0, level), 2.0, eps).values[:, 0]
        slow.append(int(np.any(np.abs(v - 2.0) >= R)))
    assert np.array_equal(np.asarray(fast, dtype=int), np.array(slow))
    assert 0 < sum(slow) < M


def test_tube_kernel_matches_simulate():
    M, level, eps, delta = 300, 6, 0.01, 0.05
    phi = 0.5 ** (math.e ** (np.arange(2**level + 1) / 2**level))
    keys = path_keys(4, "k", range(M))
    k = LL10.scalar
    fast = _tube_kernel(k.b, k.s, keys, 2**level, level, 2.0**-level, math.sqrt(eps), phi, delta)
    slow = []
    for i in range(M):
        v = simulate(LL10, sample_path(RngStream.for_path(4, "k", i), 1.0, level), 0.5, eps).values[:, 0]
        slow.append(int(np.all(np.abs(v - phi) <= delta)))
    assert np.array_equal(np.asarray(fast, dtype=int), np.array(slow))
    assert 0 < sum(slow) < M


def test_vacuous_tube_always_hit():
    phi = np.full(2**6 + 1, 0.0)
    t = tube_probability_study(BM, phi, 4.9, [0.01], 1.0, 6, 500, seed=0, predict=False)
    assert t.rows[0].hits == 500


def test_flow_tube_probability_tends_to_one():
    # the zero-noise Euler path of the same scheme
    level = 8
    x = [0.5]
    for _ in range(2**level):
        x.append(x[-1] + x[-1] * math.log(x[-1]) * 2.0**-level)
    t = tube_probability_study(LL10, np.array(x), 0.1, [1e-3, 1e-4], 1.0, level, 1000, seed=0, predict=False)
    assert t.rows[1].phat >= t.rows[0].phat >= 0.9


def test_workers_deterministic():
    a = exit_probability_study(LL10, 2.0, 1.0, [0.25, 0.125], 1.0, 8, 5000, seed=2)
    b = exit_probability_study(LL10, 2.0, 1.0, [0.25, 0.125], 1.0, 8, 5000, seed=2, workers=4)
    assert a.csv_rows() == b.csv_rows()


def test_exit_probability_decreases_with_eps():
    # the zero-noise flow from 0.5 moves 0.35 towards 0 and stays inside
    t = exit_probability_study(LL10, 0.5, 0.45, [0.5, 0.25, 0.125], 1.0, 8, 5000, seed=2)
    p = [r.phat for r in t.rows]
    assert p[0] > p[1] > p[2]


def test_guards():
    with pytest.raises(ValueError, match="truncated"):
        exit_probability_study(LL, 2.0, 1.0, [0.25], 1.0, 6, 10, seed=0)
    with pytest.raises(ValueError):
        exit_probability_study(LL10, 2.0, 5.0, [0.25], 1.0, 6, 10, seed=0)
    with pytest.raises(ValueError):
        exit_probability_study(LL10, 2.0, 1.0, [0.0], 1.0, 6, 10, seed=0)
    with pytest.raises(ValueError):
        tube_probability_study(LL10, np.zeros(5), 0.1, [0.1], 1.0, 6, 10, seed=0)
    with pytest.raises(ValueError):
        euler_ldp_gap_probe(LL10, 2.0, 0.1, [0.01], [4, 6], 1.0, 10, seed=0)
    with pytest.raises(ValueError):
        euler_ldp_gap_probe(LL, 2.0, 0.1, [0.1], [4, 6], 1.0, 10, seed=0)


def test_gap_probe_degenerate_cases():
    same = euler_ldp_gap_probe(LL10, 2.0, 1e-12, [0.1], [4, 6], 1.0, 50, seed=0, ref_offset=0)
    assert all(r[4] == 0 for r in same.rows)
    far = euler_ldp_gap_probe(LL10, 2.0, 100.0, [0.1], [4, 6], 1.0, 50, seed=0)
    assert all(r[4] == 0 for r in far.rows)


def test_gap_probe_shrinks_with_level():
    t = euler_ldp_gap_probe(LL10, 2.0, 0.05, [0.1], [5, 7, 9], 1.0, 400, seed=0)
    ps = [r[5] for r in t.rows]
    assert ps[0] > ps[-1]
    assert t.summary()["rows"] == 3


def test_upper_bound_helper():
    t = LdpTable([make_row(0.5, 10, 100), make_row(0.25, 5, 100)], "exit")
    assert upper_bound_consistent(t, 1.0, 0.0) == [True, False]
