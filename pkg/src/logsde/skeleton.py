"""Controlled skeleton ODE ``dX_h = (sigma(X_h) hdot + b(X_h)) dt`` and the
minimum-action estimate of the rate function.

Controls are piecewise-constant rates on a dyadic grid, so the energy
``sum |hdot_k|^2 2^-n`` is exact. Rates are minimized with a penalty method:
an outer loop raises the penalty weight by a fixed factor and an inner
L-BFGS-B solve uses gradients back-propagated through the discrete Euler
recursion.

Derivative convention: coefficients with kinks at ``x = 0`` or ``|x| = 1``
use derivative 0 exactly at the kink.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.optimize import minimize

from .brownian import grid_size
from .coefficients import CoefficientModel

MAX_LEVEL = 16


class GradientCheckError(RuntimeError):
    """Back-propagated and finite-difference gradients disagree."""


# ---------------------------------------------------------------------------
# controls


@dataclass(frozen=True, eq=False)
class Control:
    """Piecewise-constant control rates ``hdot_k`` on ``[k 2^-n, (k+1) 2^-n)``.

    Parameters
    ----------
    level : int
    T : float
        Dyadic horizon, a multiple of ``2^-level``.
    rates : ndarray, shape (K,) or (K, m)
    """

    level: int
    T: float
    rates: np.ndarray = field(repr=False)
    energy_cache: float = field(init=False, repr=False)

    def __post_init__(self):
        K = grid_size(self.T, self.level)
        r = np.array(self.rates, dtype=float)
        if r.ndim == 1:
            r = r[:, None]
        if r.shape[0] != K:
            raise ValueError(f"expected {K} rates, got {r.shape[0]}")
        r.setflags(write=False)
        object.__setattr__(self, "rates", r)
        object.__setattr__(self, "energy_cache", _energy_sum(r, self.dt))

    @property
    def n_steps(self) -> int:
        return self.rates.shape[0]

    @property
    def dim(self) -> int:
        return self.rates.shape[1]

    @property
    def dt(self) -> float:
        return 2.0**-self.level

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def energy(self) -> float:
        return self.energy_cache

    def h(self) -> np.ndarray:
        """Values ``h(t_k)``, shape ``(K + 1, m)``, with ``h(0) = 0``."""
        out = np.zeros((self.n_steps + 1, self.dim))
        np.cumsum(self.rates * self.dt, axis=0, out=out[1:])
        return out

    def h_increments(self, level: int) -> np.ndarray:
        """Increments of ``h`` over the steps of the level-``level`` grid."""
        K = grid_size(self.T, level)
        if level >= self.level:
            return np.repeat(self.rates, 2 ** (level - self.level), axis=0) * 2.0**-level
        hv = self.h()
        stride = 2 ** (self.level - level)
        return np.diff(hv[::stride], axis=0)[:K]

    def at_level(self, level: int) -> "Control":
        """The same control expressed on a finer grid."""
        if level < self.level:
            raise ValueError("can only refine a control to a finer level")
        return Control(level, self.T, np.repeat(self.rates, 2 ** (level - self.level), axis=0))

    def scaled(self, c: float) -> "Control":
        return Control(self.level, self.T, c * self.rates)

    @classmethod
    def zeros(cls, level, T, m=1):
        return cls(level, T, np.zeros((grid_size(T, level), m)))

    @classmethod
    def constant(cls, c, level, T):
        c = np.atleast_1d(np.asarray(c, dtype=float))
        return cls(level, T, np.tile(c, (grid_size(T, level), 1)))

    def csv_header(self):
        return ("k", "t") + tuple(f"hdot_{i + 1}" for i in range(self.dim))

    def csv_rows(self):
        t = self.times
        for k, row in enumerate(self.rates.tolist()):
            yield (k, t[k], *row)


def _energy_sum(rates, dt):
    return float(np.sum(rates * rates) * dt)


def energy(control: Control) -> float:
    """Exact discrete energy ``sum_k |hdot_k|^2 2^-n``."""
    return _energy_sum(control.rates, control.dt)


# ---------------------------------------------------------------------------
# coefficient access for the generic path


class _Coef:
    """Uniform ``(d,)`` / ``(d, m)`` views of a model's coefficients."""

    def __init__(self, model: CoefficientModel):
        self.model = model
        self.d = model.dim_state
        self.m = model.dim_noise

    def b(self, x):
        return np.asarray(self.model.drift(x), dtype=float).reshape(self.d)

    def s(self, x):
        return np.asarray(self.model.diffusion(x), dtype=float).reshape(self.d, self.m)

    def db(self, x):
        if self.model.drift_jac is None:
            raise ValueError("model has no drift derivative")
        return np.asarray(self.model.drift_jac(x), dtype=float).reshape(self.d, self.d)

    def ds(self, x):
        if self.model.diffusion_jac is None:
            raise ValueError("model has no diffusion derivative")
        return np.asarray(self.model.diffusion_jac(x), dtype=float).reshape(self.d, self.m, self.d)


# ---------------------------------------------------------------------------
# integrators


@numba.njit(nogil=True)
def _euler_1d(b, s, x0, dh, dt):
    K = dh.shape[0]
    v = np.empty(K + 1)
    v[0] = x0
    bad = -1
    for k in range(K):
        x = v[k]
        xn = x + s(x) * dh[k] + b(x) * dt
        if not math.isfinite(xn):
            bad = k + 1
            v[k + 1:] = np.nan
            break
        v[k + 1] = xn
    return v, bad


@numba.njit(nogil=True)
def _rk4_1d(b, s, x0, rate, dt):
    K = rate.shape[0]
    v = np.empty(K + 1)
    v[0] = x0
    bad = -1
    for k in range(K):
        r = rate[k]
        x = v[k]
        k1 = s(x) * r + b(x)
        y = x + 0.5 * dt * k1
        k2 = s(y) * r + b(y)
        y = x + 0.5 * dt * k2
        k3 = s(y) * r + b(y)
        y = x + dt * k3
        k4 = s(y) * r + b(y)
        xn = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not math.isfinite(xn):
            bad = k + 1
            v[k + 1:] = np.nan
            break
        v[k + 1] = xn
    return v, bad


def _euler_generic(c: _Coef, x0, dh, dt):
    K = dh.shape[0]
    v = np.full((K + 1, c.d), np.nan)
    v[0] = x0
    for k in range(K):
        x = v[k]
        xn = x + c.s(x) @ dh[k] + c.b(x) * dt
        if not np.all(np.isfinite(xn)):
            return v, k + 1
        v[k + 1] = xn
    return v, -1


def _rk4_generic(c: _Coef, x0, rate, dt):
    K = rate.shape[0]
    v = np.full((K + 1, c.d), np.nan)
    v[0] = x0

    def f(x, r):
        return c.s(x) @ r + c.b(x)

    for k in range(K):
        x, r = v[k], rate[k]
        k1 = f(x, r)
        k2 = f(x + 0.5 * dt * k1, r)
        k3 = f(x + 0.5 * dt * k2, r)
        k4 = f(x + dt * k3, r)
        xn = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(xn)):
            return v, k + 1
        v[k + 1] = xn
    return v, -1


@dataclass
class SkeletonPath:
    """Skeleton trajectory on the level-``level`` grid, shape ``(K + 1, d)``."""

    level: int
    T: float
    values: np.ndarray = field(repr=False)
    integrator: str
    invalid_index: int | None = None

    @property
    def valid(self) -> bool:
        return self.invalid_index is None

    @property
    def times(self):
        return np.arange(self.values.shape[0]) * 2.0**-self.level

    @property
    def endpoint(self):
        return self.values[-1]

    def at_level(self, level: int) -> np.ndarray:
        """Values on a coarser grid (every ``2^(self.level - level)``-th point)."""
        if level > self.level:
            raise ValueError("cannot read a coarse path on a finer grid")
        return self.values[:: 2 ** (self.level - level)]


def _fast(model):
    return model.is_1d and model.scalar is not None


def solve_skeleton(model: CoefficientModel, control: Control, x0, integrator="euler",
                   level_out=None) -> SkeletonPath:
    """Integrate the controlled ODE.

    ``euler`` is the frozen-coefficient recursion
    ``x_{k+1} = x_k + sigma(x_k) (h(t_{k+1}) - h(t_k)) + b(x_k) 2^-n`` at
    ``level_out`` (default: the control level). ``rk4`` integrates the same
    right-hand side with classical Runge-Kutta at ``level_out`` (default:
    control level + 4), which must not be coarser than the control.
    """
    if control.dim != model.dim_noise:
        raise ValueError(f"control dimension {control.dim} != noise dimension {model.dim_noise}")
    d = model.dim_state
    x0 = np.asarray(x0, dtype=float).reshape(d)
    if integrator == "euler":
        level = control.level if level_out is None else int(level_out)
        grid_size(control.T, level)
        dh = control.h_increments(level)
        dt = 2.0**-level
        if _fast(model):
            k = model.scalar
            v, bad = _euler_1d(k.b, k.s, float(x0[0]), np.ascontiguousarray(dh[:, 0]), dt)
            v = v[:, None]
        else:
            v, bad = _euler_generic(_Coef(model), x0, dh, dt)
    elif integrator == "rk4":
        level = control.level + 4 if level_out is None else int(level_out)
        if level < control.level:
            raise ValueError("rk4 output level must not be coarser than the control level")
        rate = control.at_level(level).rates
        dt = 2.0**-level
        if _fast(model):
            k = model.scalar
            v, bad = _rk4_1d(k.b, k.s, float(x0[0]), np.ascontiguousarray(rate[:, 0]), dt)
            v = v[:, None]
        else:
            v, bad = _rk4_generic(_Coef(model), x0, rate, dt)
    else:
        raise ValueError(f"unknown integrator {integrator!r}; use 'euler' or 'rk4'")
    return SkeletonPath(level, control.T, v, integrator, None if bad < 0 else int(bad))


@dataclass
class ConsistencyTable:
    """Sup-gaps ``|X^n_h - X_h^{rk4}|`` over the level-``n`` grid."""

    rows: list
    ref_level: int
    slope: float

    CSV_HEADER = ("n", "gap")

    def csv_rows(self):
        return [tuple(r) for r in self.rows]

    @property
    def gaps(self):
        return np.array([r[1] for r in self.rows])


def skeleton_consistency(model, control: Control, x0, n_grid, ref_level=None) -> ConsistencyTable:
    """Compare Euler skeletons at each level in ``n_grid`` with an rk4 reference.

    ``slope`` is the least-squares slope of ``log2(gap)`` against ``n``
    (about -1 for a first-order scheme); NaN when fewer than two gaps are
    positive.
    """
    n_grid = [int(n) for n in n_grid]
    ref_level = max(max(n_grid), control.level) + 4 if ref_level is None else int(ref_level)
    ref = solve_skeleton(model, control, x0, "rk4", ref_level)
    rows = []
    for n in n_grid:
        eu = solve_skeleton(model, control, x0, "euler", n)
        gap = float(np.max(np.abs(eu.values - ref.at_level(n))))
        rows.append((n, gap))
    pos = [(n, g) for n, g in rows if g > 0 and math.isfinite(g)]
    slope = float(np.polyfit([p[0] for p in pos], np.log2([p[1] for p in pos]), 1)[0]) if len(pos) >= 2 else math.nan
    return ConsistencyTable(rows, ref_level, slope)


# ---------------------------------------------------------------------------
# penalized objective and its adjoint


@numba.njit(nogil=True)
def _adjoint_1d(b, s, db, ds, v, r, gx, dt):
    K = r.shape[0]
    grad = np.empty(K)
    lam = gx[K]
    for k in range(K - 1, -1, -1):
        x = v[k]
        grad[k] = dt * r[k] + s(x) * dt * lam
        lam = gx[k] + lam * (1.0 + dt * (ds(x) * r[k] + db(x)))
    return grad


def _adjoint_generic(c: _Coef, v, r, gx, dt):
    K = r.shape[0]
    grad = np.empty_like(r)
    lam = gx[K].copy()
    for k in range(K - 1, -1, -1):
        x = v[k]
        grad[k] = dt * r[k] + dt * (c.s(x).T @ lam)
        J = c.db(x) + np.einsum("imj,m->ij", c.ds(x), r[k])
        lam = gx[k] + lam + dt * (J.T @ lam)
    return grad


class _Penalized:
    """``P_w(u) = 1/2 |u|^2 + w * penalty(X)`` in the scaled variable ``u = hdot sqrt(dt)``."""

    BIG = 1e30

    def __init__(self, model, x0, level, T, penalty):
        self.model = model
        self.x0 = np.asarray(x0, dtype=float).reshape(model.dim_state)
        self.level = level
        self.T = T
        self.K = grid_size(T, level)
        self.m = model.dim_noise
        self.dt = 2.0**-level
        self.sq = math.sqrt(self.dt)
        self.penalty = penalty  # (values, w) -> (pen, gx)
        self.w = 1.0
        self.fast = _fast(model)
        self.coef = _Coef(model)
        self.n_eval = 0

    def rates(self, u):
        return u.reshape(self.K, self.m) / self.sq

    def forward(self, r):
        dh = r * self.dt
        if self.fast:
            k = self.model.scalar
            v, bad = _euler_1d(k.b, k.s, float(self.x0[0]), np.ascontiguousarray(dh[:, 0]), self.dt)
            return v[:, None], bad
        return _euler_generic(self.coef, self.x0, dh, self.dt)

    def __call__(self, u):
        self.n_eval += 1
        r = self.rates(u)
        v, bad = self.forward(r)
        if bad >= 0:
            return self.BIG, u.copy()
        pen, gx = self.penalty(v, self.w)
        f = 0.5 * float(u @ u) + pen
        if self.fast:
            k = self.model.scalar
            g = _adjoint_1d(k.b, k.s, k.db, k.ds, v[:, 0], np.ascontiguousarray(r[:, 0]),
                            np.ascontiguousarray(gx[:, 0]), self.dt)[:, None]
        else:
            g = _adjoint_generic(self.coef, v, r, gx, self.dt)
        return f, (g / self.sq).ravel()

    def value(self, u):
        return self(u)[0]


def _endpoint_penalty(y):
    def pen(v, w):
        diff = v[-1] - y
        gx = np.zeros_like(v)
        gx[-1] = 2.0 * w * diff
        return w * float(diff @ diff), gx

    def residual(v):
        return float(np.linalg.norm(v[-1] - y))

    return pen, residual


def _tube_penalty(phi, delta):
    def excess(v):
        diff = v - phi
        dist = np.linalg.norm(diff, axis=1)
        return diff, dist, np.maximum(dist - delta, 0.0)

    def pen(v, w):
        diff, dist, exc = excess(v)
        gx = np.zeros_like(v)
        on = exc > 0
        gx[on] = (2.0 * w * exc[on] / dist[on])[:, None] * diff[on]
        return w * float(exc @ exc), gx

    def residual(v):
        return float(np.max(excess(v)[2]))

    return pen, residual


def gradient_check(obj: _Penalized, u, n_coords=20, step=1e-6, seed=0):
    """Relative error between adjoint and central-difference gradients.

    Uses the norm ratio over ``n_coords`` random coordinates; returns 0 when
    both gradients are below ``1e-8`` in norm.
    """
    _, g = obj(u)
    rng = np.random.default_rng(seed)
    idx = rng.choice(u.size, size=min(n_coords, u.size), replace=False)
    fd = np.empty(idx.size)
    for j, i in enumerate(idx):
        e = np.zeros_like(u)
        e[i] = step
        fd[j] = (obj.value(u + e) - obj.value(u - e)) / (2 * step)
    ga = g[idx]
    na, nf = np.linalg.norm(ga), np.linalg.norm(fd)
    if max(na, nf) < 1e-8:
        return 0.0
    return float(np.linalg.norm(ga - fd) / max(na, nf))


# ---------------------------------------------------------------------------
# rate estimates


@dataclass
class RateEstimate:
    """Result of a penalized minimum-action solve.

    ``value`` is ``energy(control) / 2``; ``trace`` rows are
    ``(outer round, penalty weight, energy, residual)``.
    """

    value: float
    control: Control = field(repr=False)
    constraint_residual: float
    trace: list = field(repr=False)
    converged: bool
    tolerance: float
    outer_rounds: int
    inner_iters: int
    gradient_error: float
    scaling_derivative: float
    endpoint: np.ndarray = field(default=None, repr=False)

    CSV_HEADER = ("value", "residual", "converged", "outer_rounds", "inner_iters")

    def csv_rows(self):
        return [(self.value, self.constraint_residual, int(self.converged), self.outer_rounds, self.inner_iters)]

    def summary(self):
        return {
            "value": self.value,
            "residual": self.constraint_residual,
            "converged": int(self.converged),
            "outer_rounds": self.outer_rounds,
            "inner_iters": self.inner_iters,
            "gradient_error": self.gradient_error,
            "scaling_derivative": self.scaling_derivative,
        }


def _solve(obj: _Penalized, residual, inits, tol, w0, growth, max_rounds, gtol, maxiter,
           check_gradient, grad_tol):
    obj.w = w0
    u = min(inits, key=obj.value)
    gerr = math.nan
    if check_gradient:
        gerr = gradient_check(obj, u)
        if not gerr < grad_tol:
            raise GradientCheckError(f"adjoint gradient relative error {gerr:.3e} exceeds {grad_tol:g}")
    trace, iters = [], 0
    best = None
    w = w0
    res = math.inf
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        obj.w = w
        out = minimize(obj, u, jac=True, method="L-BFGS-B",
                       options={"gtol": gtol, "ftol": 1e-15, "maxiter": maxiter, "maxcor": 20})
        u = out.x
        iters += int(out.nit)
        v, bad = obj.forward(obj.rates(u))
        res = residual(v) if bad < 0 else math.inf
        e = float(u @ u)
        trace.append((rounds, w, e, res))
        if best is None or res < best[1] or (res <= tol and e < best[2]):
            best = (u.copy(), res, e)
        if res <= tol:
            break
        w *= growth
    u, res, _ = best if res > tol else (u, res, None)
    _, g = obj(u)
    return u, res, trace, rounds, iters, gerr, float(g @ u)


def _estimate(obj, u, res, trace, rounds, iters, gerr, sd, tol, T, level):
    ctrl = Control(level, T, obj.rates(u))
    v, _ = obj.forward(ctrl.rates)
    return RateEstimate(0.5 * ctrl.energy, ctrl, res, trace, bool(res <= tol), tol, rounds, iters,
                        gerr, sd, v[-1].copy())


def _straight_rates(model, x_from, x_to, T, K):
    """Constant rates solving ``sigma(xbar) hdot = (x_to - x_from)/T - b(xbar)``."""
    c = _Coef(model)
    xbar = 0.5 * (x_from + x_to)
    S = c.s(xbar)
    rhs = (x_to - x_from) / T - c.b(xbar)
    if not np.all(np.isfinite(S)) or np.linalg.matrix_rank(S) < model.dim_state:
        return None
    hd = np.linalg.lstsq(S, rhs, rcond=None)[0]
    return np.tile(hd, (K, 1))


def minimize_rate_endpoint(model: CoefficientModel, x0, y, T, level, tol_endpoint=1e-4, w0=1.0,
                           growth=10.0, max_rounds=8, gtol=1e-8, maxiter=500, check_gradient=True,
                           grad_tol=1e-5) -> RateEstimate:
    """Estimate ``inf { e(h)/2 : X_h(T) = y }`` on the level-``level`` grid.

    Raises
    ------
    GradientCheckError
        If the automatic gradient check fails before optimization.
    """
    if level > MAX_LEVEL:
        raise ValueError(f"level must be <= {MAX_LEVEL}")
    K = grid_size(T, level)
    d = model.dim_state
    x0 = np.asarray(x0, dtype=float).reshape(d)
    y = np.asarray(y, dtype=float).reshape(d)
    pen, residual = _endpoint_penalty(y)
    obj = _Penalized(model, x0, level, T, pen)
    sq = obj.sq
    inits = [np.zeros(K * model.dim_noise)]
    line = _straight_rates(model, x0, y, T, K)
    if line is not None:
        inits.append((line * sq).ravel())
    out = _solve(obj, residual, inits, tol_endpoint, w0, growth, max_rounds, gtol, maxiter,
                 check_gradient, grad_tol)
    return _estimate(obj, *out[:6], out[6], tol_endpoint, T, level)


def _phi_on_level(phi, level, T, d):
    phi = np.asarray(phi, dtype=float)
    if phi.ndim == 1:
        phi = phi[:, None]
    K = grid_size(T, level)
    steps = phi.shape[0] - 1
    if steps < K or steps % K:
        raise ValueError(f"reference path with {steps} steps cannot be read on the level-{level} grid")
    return phi[:: steps // K].reshape(K + 1, d)


def minimize_rate_tube(model: CoefficientModel, phi, delta, T, level, tol=1e-4, w0=1.0, growth=10.0,
                       max_rounds=8, gtol=1e-8, maxiter=500, check_gradient=True,
                       grad_tol=1e-5) -> RateEstimate:
    """Estimate the rate of the tube ``{max_k |X(t_k) - phi(t_k)| <= delta}``.

    ``phi`` is a grid path starting at ``x0 = phi[0]``; it may be given on a
    finer dyadic grid than ``level``.
    """
    if not delta > 0:
        raise ValueError("tube radius must be positive")
    if level > MAX_LEVEL:
        raise ValueError(f"level must be <= {MAX_LEVEL}")
    K = grid_size(T, level)
    d = model.dim_state
    ph = _phi_on_level(phi, level, T, d)
    pen, residual = _tube_penalty(ph, float(delta))
    obj = _Penalized(model, ph[0], level, T, pen)
    inits = [np.zeros(K * model.dim_noise)]
    follow = _follow_rates(model, ph, 2.0**-level)
    if follow is not None:
        inits.append((follow * obj.sq).ravel())
    out = _solve(obj, residual, inits, tol, w0, growth, max_rounds, gtol, maxiter, check_gradient, grad_tol)
    return _estimate(obj, *out[:6], out[6], tol, T, level)


def _follow_rates(model, ph, dt):
    """Rates steering the Euler skeleton along ``ph`` where sigma is invertible."""
    c = _Coef(model)
    K = ph.shape[0] - 1
    out = np.zeros((K, model.dim_noise))
    for k in range(K):
        S = c.s(ph[k])
        if not np.all(np.isfinite(S)) or np.linalg.matrix_rank(S) < model.dim_state:
            return None
        out[k] = np.linalg.lstsq(S, (ph[k + 1] - ph[k]) / dt - c.b(ph[k]), rcond=None)[0]
    return out
