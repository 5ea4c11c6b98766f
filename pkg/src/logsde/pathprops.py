"""Coupled-path experiments: continuity in the initial point, non-confluence,
comparison, flow monotonicity and the moment modulus.

Every replication drives all of its starting points with one Brownian path
(synchronous coupling); replication ``i`` uses the stream
``RngStream.for_path(seed, <study label>, i)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._parallel import ordered_map
from .brownian import grid_size, sample_path
from .coefficients import CoefficientModel
from .euler import DEFAULT_N_TRUNC, simulate, simulate_batch, simulate_pair
from .rng import RngStream
from .stats import Z95, mean_and_stderr


def _path(seed, label, i, T, n, m):
    return sample_path(RngStream.for_path(seed, label, i), T, n, m)


@dataclass
class ContinuityTable:
    """Rows ``(delta, M, excluded, est, stderr)`` of ``E sup_t |X(x0) - X(x0+delta)|^2``."""

    rows: list

    CSV_HEADER = ("delta", "M", "excluded", "est", "stderr")

    def csv_rows(self):
        return [tuple(r) for r in self.rows]


def continuity_study(model, x0, deltas, T, n, M, seed, epsilon=1.0, N_trunc=DEFAULT_N_TRUNC,
                     workers=1) -> ContinuityTable:
    deltas = [float(d) for d in deltas]
    if any(d < 0 for d in deltas):
        raise ValueError("deltas must be non-negative")
    grid_size(T, n)
    x0 = np.asarray(x0, dtype=float)

    def one(i):
        path = _path(seed, "continuity", i, T, n, model.dim_noise)
        out = np.empty(len(deltas))
        for j, d in enumerate(deltas):
            a, b = simulate_pair(model, path, x0, x0 + d, epsilon, N_trunc)
            if not (a.valid and b.valid):
                out[j] = np.nan
                continue
            diff = a.values - b.values
            out[j] = np.max(np.sum(diff * diff, axis=1))
        return out

    E = np.array(ordered_map(one, range(M), workers)).reshape(M, len(deltas))
    rows = []
    for j, d in enumerate(deltas):
        col = E[:, j]
        ok = col[np.isfinite(col)]
        est, se = mean_and_stderr(ok)
        rows.append((d, M, M - ok.size, est, se))
    return ContinuityTable(rows)


@dataclass
class GapStatistics:
    """Per-path gap extremes for a coupled pair started at ``x != y``.

    ``sign_flips`` counts paths (1-D only) on which the sign of
    ``X(x) - X(y)`` ever differs from that of ``x - y``.
    """

    M: int
    min_gap: np.ndarray = field(repr=False)
    max_gap: np.ndarray = field(repr=False)
    sign_flips: int | None
    tau: float
    fraction_below_tau: float

    CSV_HEADER = ("path", "min_gap", "max_gap")

    def csv_rows(self):
        return [(i, a, b) for i, (a, b) in enumerate(zip(self.min_gap.tolist(), self.max_gap.tolist()))]

    def summary(self):
        return {
            "M": self.M,
            "fraction_below_tau": self.fraction_below_tau,
            "sign_flips": -1 if self.sign_flips is None else self.sign_flips,
            "min_gap": float(self.min_gap.min()) if self.M else math.nan,
        }


def confluence_study(model, x, y, T, n, M, tau, seed, epsilon=1.0, N_trunc=DEFAULT_N_TRUNC,
                     workers=1) -> GapStatistics:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.array_equal(x, y):
        raise ValueError("confluence study needs x != y")
    grid_size(T, n)
    one_d = model.dim_state == 1
    s0 = np.sign(float(x.ravel()[0] - y.ravel()[0])) if one_d else 0.0

    def one(i):
        path = _path(seed, "confluence", i, T, n, model.dim_noise)
        a, b = simulate_pair(model, path, x, y, epsilon, N_trunc)
        diff = a.values - b.values
        gap = np.linalg.norm(diff, axis=1)
        flip = bool(np.any(np.sign(diff[:, 0]) != s0)) if one_d else False
        return gap.min(), gap.max(), flip

    res = ordered_map(one, range(M), workers)
    mins = np.array([r[0] for r in res])
    maxs = np.array([r[1] for r in res])
    flips = sum(r[2] for r in res) if one_d else None
    frac = float(np.mean(mins < tau)) if M else 0.0
    return GapStatistics(M, mins, maxs, flips, float(tau), frac)


@dataclass
class ComparisonResult:
    violations: int
    total: int
    violation_fraction: float
    strictly_below_fraction: float
    M: int

    CSV_HEADER = ("M", "violations", "total", "violation_fraction", "strictly_below_fraction")

    def csv_rows(self):
        return [(self.M, self.violations, self.total, self.violation_fraction, self.strictly_below_fraction)]


def check_drift_order(model1, model2, grid=None):
    """Spot-check ``b1 <= b2`` and ``sigma1 == sigma2`` on a grid."""
    xs = np.linspace(-50.0, 50.0, 4001) if grid is None else np.asarray(grid, dtype=float)
    if np.any(np.asarray(model1.drift(xs)) > np.asarray(model2.drift(xs))):
        raise ValueError("drift order b1 <= b2 fails on the spot-check grid")
    if not np.array_equal(np.asarray(model1.diffusion(xs)), np.asarray(model2.diffusion(xs))):
        raise ValueError("the two models must share the diffusion coefficient")


def comparison_study(model1: CoefficientModel, model2: CoefficientModel, x1_0, x2_0, T, n, M, seed,
                     epsilon=1.0, N_trunc=DEFAULT_N_TRUNC, workers=1) -> ComparisonResult:
    """Count grid points where ``X1 > X2`` for shared-noise solutions.

    Requires 1-D models with ``b1 <= b2`` pointwise, equal diffusions and
    ``x1_0 <= x2_0``.
    """
    if not (model1.is_1d and model2.is_1d):
        raise ValueError("comparison study is one-dimensional")
    if x1_0 > x2_0:
        raise ValueError("need x1_0 <= x2_0")
    check_drift_order(model1, model2)
    K = grid_size(T, n)

    def one(i):
        path = _path(seed, "comparison", i, T, n, 1)
        a = simulate(model1, path, x1_0, epsilon, N_trunc).values[:, 0]
        b = simulate(model2, path, x2_0, epsilon, N_trunc).values[:, 0]
        return int(np.sum(a > b)), bool(np.all(a[1:] < b[1:]))

    res = ordered_map(one, range(M), workers)
    v = sum(r[0] for r in res)
    total = M * (K + 1)
    below = float(np.mean([r[1] for r in res])) if M else 0.0
    return ComparisonResult(v, total, v / total if total else 0.0, below, M)


@dataclass
class FlowSnapshot:
    """Terminal values ``X_t(x_j)`` on a sorted grid, one row per replication."""

    t: float
    x_grid: np.ndarray
    terminal: np.ndarray = field(repr=False)
    violations: int
    adjacent_pairs: int
    pinned_exact: bool
    grid_sorted: bool = True

    @property
    def violation_fraction(self):
        return self.violations / self.adjacent_pairs if self.adjacent_pairs else 0.0

    CSV_HEADER = ("replication", "j", "x", "X_t")

    def csv_rows(self):
        for i, row in enumerate(self.terminal):
            for j, (x, v) in enumerate(zip(self.x_grid.tolist(), row.tolist())):
                yield (i, j, x, v)


def flow_snapshot(model, x_grid, t, n, M, seed, epsilon=1.0, N_trunc=DEFAULT_N_TRUNC, workers=1) -> FlowSnapshot:
    """Push a sorted grid of starting points through one path per replication.

    Counts adjacent pairs with ``X_t(x_j) >= X_t(x_{j+1})`` and checks that
    grid points among the model's fixed points stay exactly in place.
    """
    if not model.is_1d:
        raise ValueError("flow snapshot is one-dimensional")
    xs = np.asarray(x_grid, dtype=float)
    if xs.size and np.any(np.diff(xs) <= 0):
        raise ValueError("x_grid must be strictly increasing")
    grid_size(t, n)
    J = xs.size

    def one(i):
        path = _path(seed, "flow", i, t, n, 1)
        v, _, _ = simulate_batch(model, path, xs[:, None], epsilon, N_trunc)
        return v[-1, :, 0]

    term = np.array(ordered_map(one, range(M), workers)).reshape(M, J)
    viol = int(np.sum(np.diff(term, axis=1) <= 0)) if M else 0
    pins = [j for j, x in enumerate(xs) if x in model.known_fixed_points]
    pinned = bool(all(np.all(term[:, j] == xs[j]) for j in pins))
    return FlowSnapshot(float(t), xs, term, viol, M * max(J - 1, 0), pinned)


@dataclass
class MomentTable:
    """Rows ``(x, s, y, t, est, stderr, envelope, ratio)`` and the fitted constant."""

    rows: list
    p: float
    c_fit: float
    c_upper95: float

    CSV_HEADER = ("x", "s", "y", "t", "est", "stderr", "envelope", "ratio", "slack")

    def csv_rows(self):
        return [tuple(r) + (self.c_fit * r[6] - r[4],) for r in self.rows]


def moment_envelope(dt, dx, p):
    return dt**p + dx ** (2 * p) + dx ** (p / 2) + dx ** (5 * p / 2)


def moment_modulus_study(model, pairs, p, n, M, seed, epsilon=1.0, workers=1) -> MomentTable:
    """Estimate ``E|X_t(x) - X_s(y)|^(2p)`` for each ``((x, s), (y, t))`` pair.

    The model must be bounded (truncate it first). The fitted constant is the
    smallest ``c`` with every estimate ``<= c * envelope``.
    """
    if not model.bounded:
        raise ValueError("moment modulus study needs a bounded model; apply truncate_model first")
    if p < 1:
        raise ValueError("p must be >= 1")
    pairs = [((float(a), float(s)), (float(b), float(t))) for (a, s), (b, t) in pairs]
    if model.truncation is not None:
        R = model.truncation.radius
        if any(abs(a) > R or abs(b) > R for (a, _), (b, _) in pairs):
            raise ValueError("initial points must lie within the truncation radius")
    times = [s for (_, s), _ in pairs] + [t for _, (_, t) in pairs]
    dt = 2.0**-n
    for tt in times:
        if tt < 0 or not (tt / dt).is_integer():
            raise ValueError(f"time {tt} is not on the level-{n} grid")
    T = max(max(times), dt)
    starts = sorted({a for (a, _), _ in pairs} | {b for _, (b, _) in pairs})
    col = {x: j for j, x in enumerate(starts)}
    x0s = np.array(starts)[:, None]

    def one(i):
        path = _path(seed, "moments", i, T, n, model.dim_noise)
        v, _, _ = simulate_batch(model, path, x0s, epsilon)
        v = v[:, :, 0]
        return [abs(v[int(round(s / dt)), col[a]] - v[int(round(t / dt)), col[b]]) ** (2 * p)
                for (a, s), (b, t) in pairs]

    E = np.array(ordered_map(one, range(M), workers)).reshape(M, len(pairs))
    rows, c, c_hi = [], 0.0, 0.0
    for j, ((a, s), (b, t)) in enumerate(pairs):
        est, se = mean_and_stderr(E[:, j])
        env = moment_envelope(abs(t - s), abs(a - b), p)
        ratio = est / env if env > 0 else 0.0
        if env > 0:
            c = max(c, ratio)
            c_hi = max(c_hi, (est + Z95 * (se if np.isfinite(se) else 0.0)) / env)
        rows.append((a, s, b, t, est, se, env, ratio))
    return MomentTable(rows, float(p), c, c_hi)
