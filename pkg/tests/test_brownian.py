import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from logsde.brownian import (
    MAX_LEVEL,
    bridge_midpoints,
    dump_path,
    grid_size,
    increment,
    load_path,
    refine,
    refine_to,
    sample_path,
    value_at,
)
from logsde.rng import RngStream


def test_grid_size():
    assert grid_size(1.0, 10) == 1024
    assert grid_size(0.75, 2) == 3
    with pytest.raises(ValueError):
        grid_size(0.3, 4)
    with pytest.raises(ValueError):
        grid_size(-1.0, 4)


def test_sample_path_basic():
    p = sample_path(RngStream(1, 2), 1.0, 8, 2)
    assert p.values.shape == (257, 2)
    assert np.all(p.values[0] == 0)
    assert p.dt == 2.0**-8
    assert np.array_equal(p.times, np.arange(257) / 256)


def test_sample_path_deterministic():
    a = sample_path(RngStream(3, 4), 2.0, 6)
    b = sample_path(RngStream(3, 4), 2.0, 6)
    assert np.array_equal(a.values, b.values)


def test_increment_variance():
    z = np.concatenate([sample_path(RngStream.for_path(0, "v", i), 1.0, 10).increments()[:, 0]
                        for i in range(50)])
    assert abs(z.var() * 1024 - 1.0) < 0.03


def test_refine_keeps_coarse_values_bitwise():
    rng = RngStream(11, 1)
    p = sample_path(rng, 1.0, 5)
    q = refine_to(p, rng, 9)
    assert q.level == 9
    assert np.array_equal(q.restrict(5).values, p.values)
    assert np.array_equal(refine(p, rng).values[::2], p.values)


def test_bridge_midpoints_subset_independent():
    rng = RngStream(2, 9)
    p = sample_path(rng, 1.0, 6, 2)
    full = bridge_midpoints(p, rng)
    some = bridge_midpoints(p, rng, [5, 1, 40])
    assert np.array_equal(some, full[[5, 1, 40]])


def test_bridge_conditional_variance():
    # midpoint minus interval average has variance dt/4
    res = []
    for i in range(200):
        rng = RngStream.for_path(4, "b", i)
        p = sample_path(rng, 1.0, 6)
        mid = bridge_midpoints(p, rng)
        res.append(mid[:, 0] - 0.5 * (p.values[:-1, 0] + p.values[1:, 0]))
    r = np.concatenate(res)
    assert abs(r.var() / (2.0**-6 / 4) - 1.0) < 0.03


def test_refined_path_has_brownian_increments():
    z = []
    for i in range(100):
        rng = RngStream.for_path(8, "r", i)
        z.append(refine_to(sample_path(rng, 1.0, 4), rng, 8).increments()[:, 0])
    z = np.concatenate(z)
    assert abs(z.var() * 256 - 1.0) < 0.05
    # lag-one correlation of increments vanishes
    assert abs(np.corrcoef(z[:-1], z[1:])[0, 1]) < 0.03


def test_refine_limit():
    p = sample_path(RngStream(0), 2.0**-MAX_LEVEL, MAX_LEVEL)
    with pytest.raises(ValueError):
        refine(p, RngStream(0))


def test_accessors():
    p = sample_path(RngStream(5), 1.0, 3)
    assert np.array_equal(increment(p, 2), p.values[3] - p.values[2])
    assert np.array_equal(value_at(p, 8), p.values[8])
    with pytest.raises(IndexError):
        value_at(p, 9)
    with pytest.raises(IndexError):
        increment(p, 8)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 8), st.integers(1, 3), st.integers(0, 2**32))
def test_dump_roundtrip(tmp_path_factory, n, m, seed):
    p = sample_path(RngStream(seed), 1.0, n, m)
    f = tmp_path_factory.mktemp("d") / "p.bin"
    dump_path(p, f)
    q = load_path(f)
    assert (q.level, q.T, q.dim) == (p.level, p.T, p.dim)
    assert np.array_equal(q.values, p.values)
    assert f.stat().st_size == 24 + 8 * (2**n + 1) * m


def test_scaled():
    p = sample_path(RngStream(5), 1.0, 4)
    assert np.array_equal(p.scaled(0.5).values, 0.5 * p.values)
