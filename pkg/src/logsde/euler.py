"""Dyadic Euler-Maruyama scheme with exit monitoring.

``X[k+1] = X[k] + b(X[k]) 2**-n + sqrt(eps) sigma(X[k]) (W[k+1] - W[k])``,
evaluated on grid points only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from ._parallel import chunks, ordered_map
from .brownian import DyadicBrownianPath, grid_size, refine, sample_path
from .coefficients import CoefficientModel
from .stats import mean_and_stderr, wilson_interval
from .rng import TAG_INCREMENT, RngStream, normal_pair, path_keys, substream_base

DEFAULT_N_TRUNC = 1e6


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Euler states on the level-``level`` grid.

    ``exit_index`` is the first grid index with ``|x| > N_trunc``; values are
    frozen from there on. ``invalid_index`` marks the first non-finite state
    (values from there on are NaN).
    """

    level: int
    T: float
    values: np.ndarray = field(repr=False)
    N_trunc: float = DEFAULT_N_TRUNC
    exit_index: Optional[int] = None
    epsilon: float = 1.0
    invalid_index: Optional[int] = None

    @property
    def valid(self) -> bool:
        return self.invalid_index is None

    @property
    def exited(self) -> bool:
        return self.exit_index is not None

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.values.shape[0]) * 2.0**-self.level

    def restrict(self, level: int) -> np.ndarray:
        return self.values[:: 2 ** (self.level - level)]

    def csv_header(self):
        d = self.values.shape[1]
        return ("k", "t", *[f"x_{i + 1}" for i in range(d)], "exited")

    def csv_rows(self):
        ex = self.exit_index if self.exit_index is not None else self.values.shape[0]
        for k, (t, row) in enumerate(zip(self.times, self.values)):
            yield (k, t, *row.tolist(), int(k >= ex))


@dataclass
class StrongErrorTable:
    """Rows ``(n, M, excluded, est, stderr)`` of ``E sup_t |X_ref - X_n|^2``.

    ``samples`` holds the per-replication errors, shape ``(M, levels)``, NaN
    where a replication was excluded.
    """

    rows: list
    samples: np.ndarray = field(default=None, repr=False, compare=False)

    CSV_HEADER = ("n", "M", "excluded", "est", "stderr")

    def csv_rows(self):
        return [tuple(r) for r in self.rows]

    @property
    def levels(self):
        return [r[0] for r in self.rows]

    @property
    def estimates(self):
        return np.array([r[3] for r in self.rows])

    @property
    def stderrs(self):
        return np.array([r[4] for r in self.rows])

    def quantiles(self, q):
        """Per-level quantile ``q`` of the per-replication errors."""
        return np.nanquantile(self.samples, q, axis=0)


# ---------------------------------------------------------------------------
# kernels


@numba.njit(nogil=True)
def _euler_scalar(b, s, x0, dW, dt, seps, n_trunc, joint):
    K = dW.shape[0]
    J = x0.shape[0]
    v = np.empty((K + 1, J))
    exit_idx = np.full(J, -1, np.int64)
    bad_idx = np.full(J, -1, np.int64)
    for j in range(J):
        v[0, j] = x0[j]
    for k in range(K):
        dw = seps * dW[k]
        any_exit = False
        for j in range(J):
            x = v[k, j]
            if exit_idx[j] >= 0 or bad_idx[j] >= 0:
                v[k + 1, j] = x
                continue
            xn = x + b(x) * dt + s(x) * dw
            v[k + 1, j] = xn
            if not math.isfinite(xn):
                bad_idx[j] = k + 1
                v[k + 1, j] = np.nan
            elif abs(xn) > n_trunc:
                exit_idx[j] = k + 1
                any_exit = True
        if joint and any_exit:
            for j in range(J):
                if exit_idx[j] < 0 and bad_idx[j] < 0:
                    exit_idx[j] = k + 1
    return v, exit_idx, bad_idx


def _euler_generic(model, x0, dW, dt, seps, n_trunc, joint):
    # x0: (J, d); dW: (K, m)
    K = dW.shape[0]
    J, d = x0.shape
    v = np.empty((K + 1, J, d))
    v[0] = x0
    exit_idx = np.full(J, -1, np.int64)
    bad_idx = np.full(J, -1, np.int64)
    for k in range(K):
        x = v[k]
        if model.is_1d:
            xn = x + np.asarray(model.drift(x)) * dt + np.asarray(model.diffusion(x)) * (seps * dW[k])
        else:
            xn = x + model.drift(x) * dt + np.einsum("jdm,m->jd", model.diffusion(x), seps * dW[k])
        live = (exit_idx < 0) & (bad_idx < 0)
        xn = np.where(live[:, None], xn, x)
        finite = np.all(np.isfinite(xn), axis=1)
        newbad = live & ~finite
        bad_idx[newbad] = k + 1
        xn[newbad] = np.nan
        out = live & finite & (np.linalg.norm(xn, axis=1) > n_trunc)
        exit_idx[out] = k + 1
        if joint and out.any():
            exit_idx[(exit_idx < 0) & (bad_idx < 0)] = k + 1
        v[k + 1] = xn
    return v, exit_idx, bad_idx


def simulate_batch(model: CoefficientModel, path: DyadicBrownianPath, x0s, epsilon=1.0,
                   N_trunc=DEFAULT_N_TRUNC, joint=False):
    """Run several initial conditions on one Brownian path.

    Returns ``(values, exit_index, invalid_index)`` with ``values`` of shape
    ``(K + 1, J, d)`` and ``-1`` for "never" in the index arrays.
    """
    if path.dim != model.dim_noise:
        raise ValueError(f"path dimension {path.dim} != model noise dimension {model.dim_noise}")
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")
    d = model.dim_state
    x0s = np.asarray(x0s, dtype=float).reshape(-1, d)
    if not np.all(np.isfinite(x0s)):
        raise ValueError("initial condition must be finite")
    dW = path.increments()
    dt = path.dt
    seps = math.sqrt(epsilon)
    if model.is_1d and model.scalar is not None:
        k = model.scalar
        v, ex, bad = _euler_scalar(k.b, k.s, x0s[:, 0].copy(), dW[:, 0].copy(), dt, seps, float(N_trunc), joint)
        v = v[:, :, None]
    else:
        v, ex, bad = _euler_generic(model, x0s, dW, dt, seps, float(N_trunc), joint)
    for j in range(v.shape[1]):
        if ex[j] >= 0:
            v[ex[j]:, j] = v[ex[j], j]
    return v, ex, bad


def _trajectory(path, v, ex, bad, N_trunc, epsilon):
    return Trajectory(
        path.level,
        path.T,
        v,
        N_trunc,
        None if ex < 0 else int(ex),
        epsilon,
        None if bad < 0 else int(bad),
    )


def simulate(model, path, x0, epsilon=1.0, N_trunc=DEFAULT_N_TRUNC) -> Trajectory:
    """Euler trajectory of ``model`` driven by ``path`` from ``x0``."""
    v, ex, bad = simulate_batch(model, path, [x0], epsilon, N_trunc)
    return _trajectory(path, v[:, 0], ex[0], bad[0], N_trunc, epsilon)


def simulate_pair(model, path, x0, y0, epsilon=1.0, N_trunc=DEFAULT_N_TRUNC):
    """Two trajectories sharing every Brownian increment.

    Both freeze at the first grid index where either exceeds ``N_trunc``.
    """
    v, ex, bad = simulate_batch(model, path, [x0, y0], epsilon, N_trunc, joint=True)
    return (
        _trajectory(path, v[:, 0], ex[0], bad[0], N_trunc, epsilon),
        _trajectory(path, v[:, 1], ex[1], bad[1], N_trunc, epsilon),
    )


# ---------------------------------------------------------------------------
# strong error


def coupled_paths(rng: RngStream, T, n_min, n_max, m=1):
    """Paths at every level ``n_min..n_max`` built by refining one sample."""
    p = sample_path(rng, T, n_min, m)
    out = {n_min: p}
    for n in range(n_min + 1, n_max + 1):
        p = refine(p, rng)
        out[n] = p
    return out


def strong_error_study(model, x0, T, n_min, n_max, n_ref, M, seed, epsilon=1.0,
                       N_trunc=DEFAULT_N_TRUNC, workers=1) -> StrongErrorTable:
    """Monte Carlo estimate of ``E sup_t |X_ref(t) - X_n(t)|^2`` per level.

    All levels of one replication are restrictions of a single Brownian path
    refined from ``n_min`` up to ``n_ref``; the sup runs over the level
    ``n_min`` grid. Replications with a non-finite trajectory are excluded
    per row and counted.
    """
    if not (n_min < n_max < n_ref <= 30):
        raise ValueError("need n_min < n_max < n_ref <= 30")
    if M < 2:
        raise ValueError("M must be >= 2")
    grid_size(T, n_min)
    levels = list(range(n_min, n_max + 1))

    def one(i):
        rng = RngStream.for_path(seed, "strong-error", i)
        paths = coupled_paths(rng, T, n_min, n_ref, model.dim_noise)
        ref = simulate(model, paths[n_ref], x0, epsilon, N_trunc)
        xr = ref.restrict(n_min)
        errs = np.empty(len(levels))
        for j, n in enumerate(levels):
            tr = simulate(model, paths[n], x0, epsilon, N_trunc)
            if not (tr.valid and ref.valid):
                errs[j] = np.nan
                continue
            diff = tr.restrict(n_min) - xr
            errs[j] = np.max(np.sum(diff * diff, axis=1))
        return errs

    E = np.array(ordered_map(one, range(M), workers))
    rows = []
    for j, n in enumerate(levels):
        col = E[:, j]
        ok = col[np.isfinite(col)]
        excluded = M - ok.size
        est = float(np.mean(ok)) if ok.size else math.nan
        se = float(np.std(ok, ddof=1) / math.sqrt(ok.size)) if ok.size >= 2 else math.nan
        rows.append((n, M, excluded, est, se))
    return StrongErrorTable(rows, E)


# ---------------------------------------------------------------------------
# martingale tail bound


@dataclass
class TailCheck:
    empirical_prob: float
    paper_bound: float
    hits: int
    M: int
    lo95: float
    hi95: float


def tail_bound(A, B, d, T, R):
    """``2 d exp(-(R - sqrt(d) B T)^2 / (2 d A^2 T))``."""
    return 2.0 * d * math.exp(-((R - math.sqrt(d) * B * T) ** 2) / (2.0 * d * A * A * T))


@numba.njit(nogil=True)
def _tail_path_1d(base, K, dt, sd, a, f, R):
    w = 0.0
    for q in range(K // 2):
        z0, z1 = normal_pair(base, q)
        w = w + z0 * sd
        if abs(a * w + f * ((2 * q + 1) * dt)) >= R:
            return 1
        w = w + z1 * sd
        if abs(a * w + f * ((2 * q + 2) * dt)) >= R:
            return 1
    if K % 2 == 1:
        z0, z1 = normal_pair(base, K // 2)
        w = w + z0 * sd
        if abs(a * w + f * (K * dt)) >= R:
            return 1
    return 0


@numba.njit(nogil=True)
def _tail_kernel(keys, K, level, d, dt, a, f, R):
    hits = np.zeros(keys.shape[0], np.int64)
    sd = math.sqrt(dt)
    w = np.empty(d)
    R2 = R * R
    for p in range(keys.shape[0]):
        base = substream_base(keys[p], TAG_INCREMENT, level)
        if d == 1:
            hits[p] = _tail_path_1d(base, K, dt, sd, a, f, R)
            continue
        for c in range(d):
            w[c] = 0.0
        j = 0
        z1 = 0.0
        for k in range(K):
            t = (k + 1) * dt
            norm2 = 0.0
            for c in range(d):
                if j % 2 == 0:
                    z, z1 = normal_pair(base, j // 2)
                else:
                    z = z1
                j += 1
                w[c] = w[c] + z * sd
                e = a * w[c] + f * t
                norm2 += e * e
            if norm2 >= R2:
                hits[p] = 1
                break
    return hits


def tail_bound_check(A, B, d, T, R, M, seed, level=14, workers=1) -> TailCheck:
    """Empirical ``P(sup_t |eta_t| >= R)`` against the closed-form bound.

    ``eta_t = (A/sqrt(d)) W_t + (B/sqrt(d)) t (1, ..., 1)``, the constant
    coefficients with ``||e|| = A`` and ``|f| = B``, monitored on the
    level-``level`` grid. ``W`` matches :func:`sample_path` for the stream of
    each path index.
    """
    if not R > math.sqrt(d) * B * T:
        raise ValueError("need R > sqrt(d) B T")
    K = grid_size(T, level)
    keys = path_keys(seed, "tail-bound", range(M))
    a, f = A / math.sqrt(d), B / math.sqrt(d)
    dt = 2.0**-level

    def run(span):
        lo, hi = span
        return _tail_kernel(keys[lo:hi], K, int(level), int(d), dt, a, f, float(R))

    hits = int(np.concatenate(ordered_map(run, chunks(M, 4096), workers) or [np.zeros(0)]).sum())
    lo95, hi95 = wilson_interval(hits, M)
    return TailCheck(hits / M, tail_bound(A, B, d, T, R), hits, M, lo95, hi95)
