"""Drift/diffusion coefficient models, truncations and audits.

One-dimensional models (``dim_state == dim_noise == 1``) evaluate
elementwise on arrays of any shape. Higher-dimensional models take
``(..., d)`` arrays and return ``(..., d)`` drifts and ``(..., d, m)``
diffusion matrices.

1-D models built here also carry numba-compiled scalar kernels, which the
simulation and optimisation hot loops call directly.
"""

from __future__ import annotations

import importlib
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numba
import numpy as np

from .rng import RngStream


class ScalarKernels(NamedTuple):
    """Compiled ``float -> float`` drift, diffusion and their derivatives."""

    b: object
    s: object
    db: object
    ds: object


@dataclass(frozen=True)
class TruncationSpec:
    """How to make a model bounded outside the ball of radius ``radius``.

    ``m_R`` is the sup of ``|b|`` and ``|sigma|`` over ``|x| <= radius``;
    leave it ``None`` for 1-D models to have it computed.
    """

    radius: float
    mode: str = "clamp"
    m_R: Optional[float] = None

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("truncation radius must be positive")
        if self.mode not in ("clamp", "smooth-cutoff"):
            raise ValueError(f"unknown truncation mode {self.mode!r}")


@dataclass(frozen=True, eq=False)
class CoefficientModel:
    """Evaluable drift/diffusion pair ``(b, sigma)`` with metadata.

    Attributes
    ----------
    dim_state, dim_noise : int
    drift, diffusion : callable
    name : str
    known_fixed_points : tuple of float or tuple of ndarray
        Points where drift and every diffusion entry are exactly zero.
    bound : float or None
        Uniform bound on ``|b|`` and the entries of ``sigma`` when known.
    drift_jac, diffusion_jac : callable or None
        Derivatives. For 1-D models these are plain ``b'`` and ``sigma'``;
        otherwise shapes ``(..., d, d)`` and ``(..., d, m, d)``.
    scalar : ScalarKernels or None
        Compiled scalar kernels (1-D only).
    truncation : TruncationSpec or None
        The truncation that produced this model, if any.
    """

    dim_state: int
    dim_noise: int
    drift: Callable
    diffusion: Callable
    name: str
    known_fixed_points: tuple = ()
    bound: Optional[float] = None
    drift_jac: Optional[Callable] = field(default=None, repr=False)
    diffusion_jac: Optional[Callable] = field(default=None, repr=False)
    scalar: Optional[ScalarKernels] = field(default=None, repr=False)
    truncation: Optional[TruncationSpec] = None

    @property
    def is_1d(self) -> bool:
        return self.dim_state == 1 and self.dim_noise == 1

    @property
    def bounded(self) -> bool:
        return self.bound is not None

    def b(self, x):
        return self.drift(x)

    def sigma(self, x):
        return self.diffusion(x)


# ---------------------------------------------------------------------------
# scalar kernel plumbing


@numba.njit(nogil=True)
def _map1(f, x):
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        out[i] = f(x[i])
    return out


def _vectorize(f):
    def g(x):
        a = np.asarray(x, dtype=float)
        r = _map1(f, np.ascontiguousarray(a.ravel())).reshape(a.shape)
        return float(r) if a.ndim == 0 else r

    return g


def _central_diff(f):
    @numba.njit(nogil=True)
    def df(x):
        h = 1e-6 * max(1.0, abs(x))
        return (f(x + h) - f(x - h)) / (2.0 * h)

    return df


def model_from_scalars(name, b, s, db=None, ds=None, fixed_points=(), bound=None, truncation=None):
    """Build a 1-D model from compiled scalar functions.

    Missing derivatives are replaced by central differences of the kernels.
    """
    db = db if db is not None else _central_diff(b)
    ds = ds if ds is not None else _central_diff(s)
    return CoefficientModel(
        dim_state=1,
        dim_noise=1,
        drift=_vectorize(b),
        diffusion=_vectorize(s),
        name=name,
        known_fixed_points=tuple(float(p) for p in fixed_points),
        bound=bound,
        drift_jac=_vectorize(db),
        diffusion_jac=_vectorize(ds),
        scalar=ScalarKernels(b, s, db, ds),
        truncation=truncation,
    )


def from_functions(drift, diffusion, name="custom", fixed_points=(), drift_deriv=None, diffusion_deriv=None):
    """Wrap plain Python ``float -> float`` functions as a 1-D model.

    The functions are compiled with numba when possible; otherwise the model
    falls back to Python evaluation, which the simulators also accept (only
    much slower).
    """
    fns = [drift, diffusion, drift_deriv, diffusion_deriv]
    try:
        jitted = [None if f is None else numba.njit(nogil=True)(f) for f in fns]
        for f in jitted:
            if f is not None:
                float(f(0.5))
    except Exception:
        jitted = None
    if jitted is not None:
        return model_from_scalars(name, *jitted, fixed_points=fixed_points)

    def vec(f):
        def g(x):
            a = np.asarray(x, dtype=float)
            r = np.vectorize(f, otypes=[float])(a)
            return float(r) if a.ndim == 0 else r

        return g

    def numdiff(f):
        def df(x):
            h = 1e-6 * max(1.0, abs(x))
            return (f(x + h) - f(x - h)) / (2 * h)

        return df

    return CoefficientModel(
        1,
        1,
        vec(drift),
        vec(diffusion),
        name,
        tuple(float(p) for p in fixed_points),
        drift_jac=vec(drift_deriv or numdiff(drift)),
        diffusion_jac=vec(diffusion_deriv or numdiff(diffusion)),
    )


# ---------------------------------------------------------------------------
# built-in families


@numba.njit(cache=True, nogil=True)
def _loglog_b(x):
    ax = abs(x)
    if ax == 0.0 or ax == 1.0:
        return 0.0
    return x * math.log(ax)


@numba.njit(cache=True, nogil=True)
def _loglog_s(x):
    ax = abs(x)
    if ax == 0.0 or ax == 1.0:
        return 0.0
    return x * math.sqrt(abs(math.log(ax)))


@numba.njit(cache=True, nogil=True)
def _loglog_db(x):
    ax = abs(x)
    if ax == 0.0:
        return 0.0
    return math.log(ax) + 1.0


@numba.njit(cache=True, nogil=True)
def _loglog_ds(x):
    ax = abs(x)
    if ax == 0.0 or ax == 1.0:
        return 0.0
    lg = math.log(ax)
    r = math.sqrt(abs(lg))
    sgn = 1.0 if lg > 0 else -1.0
    return r + sgn / (2.0 * r)


def make_loglog_model() -> CoefficientModel:
    """``b(x) = x log|x|``, ``sigma(x) = x sqrt(|log|x||)``, zero at 0 and +-1.

    The derivative convention at the kinks ``x = 0`` and ``|x| = 1`` is 0
    (``b'`` is smooth at +-1 and returns ``1`` there).
    """
    return model_from_scalars(
        "loglog", _loglog_b, _loglog_s, _loglog_db, _loglog_ds, fixed_points=(-1.0, 0.0, 1.0)
    )


def make_alpha_beta_model(alpha: float, beta: float) -> CoefficientModel:
    """``b = |x|^a |log|x||^(2 b)``, ``sigma = |x|^a |log|x||^b``, 0 at x=0.

    Requires ``0 <= beta <= 1/2 <= alpha <= 1``.
    """
    alpha, beta = float(alpha), float(beta)
    if not (0.0 <= beta <= 0.5 <= alpha <= 1.0):
        raise ValueError(f"need 0 <= beta <= 1/2 <= alpha <= 1, got alpha={alpha}, beta={beta}")
    a, b2, b1 = alpha, 2.0 * beta, beta

    @numba.njit(nogil=True)
    def pw(x, p):
        ax = abs(x)
        if ax == 0.0:
            return 0.0
        return ax**a * abs(math.log(ax)) ** p

    @numba.njit(nogil=True)
    def dpw(x, p):
        ax = abs(x)
        if ax == 0.0 or ax == 1.0:
            return 0.0
        lg = math.log(ax)
        L = abs(lg)
        sgn_x = 1.0 if x > 0 else -1.0
        sgn_l = 1.0 if lg > 0 else -1.0
        d = a * ax ** (a - 1.0) * L**p
        if p > 0.0:
            d += ax ** (a - 1.0) * p * L ** (p - 1.0) * sgn_l
        return sgn_x * d

    @numba.njit(nogil=True)
    def b(x):
        return pw(x, b2)

    @numba.njit(nogil=True)
    def s(x):
        return pw(x, b1)

    @numba.njit(nogil=True)
    def db(x):
        return dpw(x, b2)

    @numba.njit(nogil=True)
    def ds(x):
        return dpw(x, b1)

    fixed = (-1.0, 0.0, 1.0) if beta > 0 else (0.0,)
    return model_from_scalars(f"alphabeta:{alpha!r},{beta!r}", b, s, db, ds, fixed_points=fixed)


def make_linear_model(a: float, sigma: float) -> CoefficientModel:
    """``b(x) = a x`` with constant diffusion ``sigma``."""
    a, sg = float(a), float(sigma)

    @numba.njit(nogil=True)
    def b(x):
        return a * x

    @numba.njit(nogil=True)
    def s(x):
        return sg

    @numba.njit(nogil=True)
    def db(x):
        return a

    @numba.njit(nogil=True)
    def ds(x):
        return 0.0

    fixed = (0.0,) if sg == 0.0 else ()
    bound = abs(sg) if a == 0.0 else None
    return model_from_scalars(f"linear:{a!r},{sg!r}", b, s, db, ds, fixed_points=fixed, bound=bound)


def with_drift_offset(model: CoefficientModel, offset: float) -> CoefficientModel:
    """Same diffusion, drift ``b(x) + offset`` (1-D)."""
    _require_1d(model)
    c = float(offset)
    if model.scalar is None:
        return CoefficientModel(
            1,
            1,
            lambda x: model.drift(x) + c,
            model.diffusion,
            f"{model.name}+{c!r}",
            drift_jac=model.drift_jac,
            diffusion_jac=model.diffusion_jac,
        )
    b0 = model.scalar.b

    @numba.njit(nogil=True)
    def b(x):
        return b0(x) + c

    k = model.scalar
    return model_from_scalars(f"{model.name}+{c!r}", b, k.s, k.db, k.ds)


def diagonal(model: CoefficientModel, d: int) -> CoefficientModel:
    """d-dimensional model with ``b_i(x) = b(x_i)`` and ``sigma = diag(sigma(x_i))``."""
    _require_1d(model)
    d = int(d)

    def drift(x):
        return np.asarray(model.drift(np.asarray(x, dtype=float)))

    def diffusion(x):
        return _diag_embed(model.diffusion(np.asarray(x, dtype=float)))

    def drift_jac(x):
        return _diag_embed(model.drift_jac(np.asarray(x, dtype=float)))

    def diffusion_jac(x):
        g = np.asarray(model.diffusion_jac(np.asarray(x, dtype=float)))
        out = np.zeros(g.shape[:-1] + (d, d, d))
        idx = np.arange(d)
        out[..., idx, idx, idx] = g
        return out

    fixed = tuple(np.full(d, p) for p in model.known_fixed_points)
    return CoefficientModel(
        d, d, drift, diffusion, f"diag{d}:{model.name}", fixed, model.bound, drift_jac, diffusion_jac
    )


def _diag_embed(v):
    v = np.asarray(v)
    d = v.shape[-1]
    out = np.zeros(v.shape + (d,))
    idx = np.arange(d)
    out[..., idx, idx] = v
    return out


def _require_1d(model):
    if not model.is_1d:
        raise ValueError(f"model {model.name!r} must be one-dimensional")


# ---------------------------------------------------------------------------
# truncation


def _golden_max(f, lo, hi, iters=80):
    g = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    return max(fc, fd)


def sup_abs_1d(model: CoefficientModel, R: float, n_grid: int = 10_000) -> float:
    """``sup{|b(x)|, |sigma(x)| : |x| <= R}`` by grid search + golden refinement."""
    _require_1d(model)
    xs = np.linspace(-R, R, n_grid)

    def f(x):
        return max(abs(float(model.drift(x))), abs(float(model.diffusion(x))))

    vals = np.maximum(np.abs(model.drift(xs)), np.abs(model.diffusion(xs)))
    i = int(np.argmax(vals))
    best = float(vals[i])
    lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, n_grid - 1)]
    if hi > lo:
        best = max(best, _golden_max(f, lo, hi))
    return best


@numba.njit(cache=True, nogil=True)
def _smoothstep_cutoff(x, R):
    u = R + 1.0 - abs(x)
    if u >= 1.0:
        return 1.0
    if u <= 0.0:
        return 0.0
    return u * u * u * (u * (6.0 * u - 15.0) + 10.0)


@numba.njit(cache=True, nogil=True)
def _smoothstep_cutoff_deriv(x, R):
    u = R + 1.0 - abs(x)
    if u >= 1.0 or u <= 0.0:
        return 0.0
    sgn = 1.0 if x > 0 else -1.0
    return -sgn * 30.0 * u * u * (u - 1.0) * (u - 1.0)


def smooth_cutoff(x, R):
    """``phi_R(|x|)``: 1 on ``|x| <= R``, 0 beyond ``R + 1``, C^2 quintic between."""
    return _vectorize_cutoff(np.asarray(x, dtype=float), float(R))


def _vectorize_cutoff(r, R):
    u = np.clip(R + 1.0 - np.abs(r), 0.0, 1.0)
    return u * u * u * (u * (6.0 * u - 15.0) + 10.0)


def truncate_model(model: CoefficientModel, spec: TruncationSpec) -> CoefficientModel:
    """Bounded version of ``model`` that agrees with it on ``|x| <= R``.

    ``clamp`` clips every coefficient entry to ``[-(m_R+1), m_R+1]``;
    ``smooth-cutoff`` multiplies by :func:`smooth_cutoff`. A model already
    truncated with an equal spec is returned unchanged.
    """
    if model.truncation is not None and _same_spec(model.truncation, spec):
        return model
    R = float(spec.radius)
    if spec.m_R is not None:
        m_R = float(spec.m_R)
    elif model.is_1d:
        m_R = sup_abs_1d(model, R)
    else:
        raise ValueError("m_R must be supplied to truncate a multi-dimensional model")
    resolved = TruncationSpec(R, spec.mode, m_R)
    name = f"{model.name}|{spec.mode}@{R!r}"
    if model.is_1d and model.scalar is not None:
        return _truncate_scalar(model, resolved, name)
    return _truncate_array(model, resolved, name)


def _same_spec(a: TruncationSpec, b: TruncationSpec) -> bool:
    return a.radius == b.radius and a.mode == b.mode and (b.m_R is None or a.m_R == b.m_R)


def _truncate_scalar(model, spec, name):
    k = model.scalar
    b0, s0, db0, ds0 = k.b, k.s, k.db, k.ds
    R = spec.radius
    if spec.mode == "clamp":
        M = spec.m_R + 1.0

        @numba.njit(nogil=True)
        def b(x):
            return min(max(b0(x), -M), M)

        @numba.njit(nogil=True)
        def s(x):
            return min(max(s0(x), -M), M)

        @numba.njit(nogil=True)
        def db(x):
            return db0(x) if abs(b0(x)) < M else 0.0

        @numba.njit(nogil=True)
        def ds(x):
            return ds0(x) if abs(s0(x)) < M else 0.0

        bound = M
    else:

        @numba.njit(nogil=True)
        def b(x):
            return _smoothstep_cutoff(x, R) * b0(x)

        @numba.njit(nogil=True)
        def s(x):
            return _smoothstep_cutoff(x, R) * s0(x)

        @numba.njit(nogil=True)
        def db(x):
            return _smoothstep_cutoff(x, R) * db0(x) + _smoothstep_cutoff_deriv(x, R) * b0(x)

        @numba.njit(nogil=True)
        def ds(x):
            return _smoothstep_cutoff(x, R) * ds0(x) + _smoothstep_cutoff_deriv(x, R) * s0(x)

        bound = sup_abs_1d(model, R + 1.0)
    return model_from_scalars(
        name, b, s, db, ds, fixed_points=model.known_fixed_points, bound=bound, truncation=spec
    )


def _truncate_array(model, spec, name):
    R = spec.radius
    is1 = model.is_1d
    if spec.mode == "clamp":
        M = spec.m_R + 1.0

        def drift(x):
            return np.clip(model.drift(x), -M, M)

        def diffusion(x):
            return np.clip(model.diffusion(x), -M, M)

        def drift_jac(x):
            inside = np.abs(np.asarray(model.drift(x))) < M
            J = np.asarray(model.drift_jac(x))
            return J * (inside if is1 else inside[..., :, None])

        def diffusion_jac(x):
            inside = np.abs(np.asarray(model.diffusion(x))) < M
            J = np.asarray(model.diffusion_jac(x))
            return J * (inside if is1 else inside[..., None])

        bound = M
    else:

        def radius(x):
            x = np.asarray(x, dtype=float)
            return np.abs(x) if is1 else np.linalg.norm(x, axis=-1)

        def dphi(x):
            x = np.asarray(x, dtype=float)
            r = radius(x)
            u = np.clip(R + 1.0 - r, 0.0, 1.0)
            dr = -30.0 * u * u * (u - 1.0) ** 2 * ((u > 0) & (u < 1))
            if is1:
                return dr * np.sign(x)
            with np.errstate(invalid="ignore", divide="ignore"):
                unit = np.where(r[..., None] > 0, x / r[..., None], 0.0)
            return dr[..., None] * unit

        def drift(x):
            p = _vectorize_cutoff(radius(x), R)
            return np.asarray(model.drift(x)) * (p if is1 else p[..., None])

        def diffusion(x):
            p = _vectorize_cutoff(radius(x), R)
            return np.asarray(model.diffusion(x)) * (p if is1 else p[..., None, None])

        def drift_jac(x):
            p, g = _vectorize_cutoff(radius(x), R), dphi(x)
            bx, J = np.asarray(model.drift(x)), np.asarray(model.drift_jac(x))
            if is1:
                return p * J + g * bx
            return p[..., None, None] * J + bx[..., :, None] * g[..., None, :]

        def diffusion_jac(x):
            p, g = _vectorize_cutoff(radius(x), R), dphi(x)
            sx, J = np.asarray(model.diffusion(x)), np.asarray(model.diffusion_jac(x))
            if is1:
                return p * J + g * sx
            return p[..., None, None, None] * J + sx[..., :, :, None] * g[..., None, None, :]

        bound = sup_abs_1d(model, R + 1.0) if is1 else spec.m_R
    return CoefficientModel(
        model.dim_state,
        model.dim_noise,
        drift,
        diffusion,
        name,
        model.known_fixed_points,
        bound,
        drift_jac,
        diffusion_jac,
        None,
        spec,
    )


# ---------------------------------------------------------------------------
# model specs


def parse_model(spec: str) -> CoefficientModel:
    """Build a model from ``loglog``, ``alphabeta:a,b``, ``linear:a,s``,
    or ``custom:module:attr`` (``attr`` is a model or a zero-arg factory)."""
    kind, _, rest = spec.partition(":")
    kind = kind.strip().lower()
    if kind == "loglog":
        return make_loglog_model()
    if kind in ("alphabeta", "linear"):
        try:
            p, q = (float(t) for t in rest.split(","))
        except ValueError:
            raise ValueError(f"model spec {spec!r}: expected two comma-separated numbers") from None
        return make_alpha_beta_model(p, q) if kind == "alphabeta" else make_linear_model(p, q)
    if kind == "custom":
        mod, _, attr = rest.partition(":")
        if not mod or not attr:
            raise ValueError(f"model spec {spec!r}: expected custom:module:attribute")
        obj = getattr(importlib.import_module(mod), attr)
        model = obj if isinstance(obj, CoefficientModel) else obj()
        if not isinstance(model, CoefficientModel):
            raise ValueError(f"{spec!r} did not produce a CoefficientModel")
        return model
    raise ValueError(f"unknown model kind {kind!r} in {spec!r}")


# ---------------------------------------------------------------------------
# audits


@dataclass
class H1Report:
    """Outcome of a sampled (H1) audit.

    ``violation_count`` is measured against the supplied ``(C, mu)``.
    ``C_est`` is the smallest constant that makes every sampled pair pass
    with ``mu_est = mu``, so ``violation_count == 0`` iff ``C_est <= C``.
    """

    C: float
    mu: float
    C_est: float
    mu_est: float
    N_grid: list
    violation_count: int
    violations_by_line: dict
    worst_pair: tuple
    rows: list = field(default_factory=list)

    CSV_HEADER = ("N", "C", "mu", "line", "violations", "worst_lhs", "worst_rhs")

    def csv_rows(self):
        return [tuple(r) for r in self.rows]


def _sample_ball(rng, n, d, radius):
    if d == 1:
        return rng.uniform(-radius, radius, size=(n, 1))
    v = rng.standard_normal((n, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = radius * rng.uniform(0, 1, size=(n, 1)) ** (1.0 / d)
    return v * r


def _clip_ball(x, radius):
    r = np.linalg.norm(x, axis=1, keepdims=True)
    return np.where(r > radius, x * (radius / np.maximum(r, 1e-300)), x)


def _h1_pairs(rng, n, d, N):
    """Uniform pairs in B(N) plus strata near 0, near |x| = 1 and near x = y."""
    n_uni = n - 3 * (n // 5)
    n_zero = n_unit = n_diag = n // 5
    xs = [_sample_ball(rng, n_uni, d, N)]
    ys = [_sample_ball(rng, n_uni, d, N)]
    xs.append(_sample_ball(rng, n_zero, d, 2.0 / N))
    ys.append(np.where(rng.uniform(size=(n_zero, 1)) < 0.5, _sample_ball(rng, n_zero, d, 2.0 / N),
                       _sample_ball(rng, n_zero, d, N)))
    u = rng.standard_normal((n_unit, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    xs.append(u * (1.0 + rng.uniform(-0.05, 0.05, size=(n_unit, 1))))
    ys.append(u * (1.0 + rng.uniform(-0.05, 0.05, size=(n_unit, 1))))
    base = np.concatenate([_sample_ball(rng, n_diag - n_diag // 2, d, N),
                           u[: n_diag // 2] * (1.0 + rng.uniform(-1e-3, 1e-3, size=(n_diag // 2, 1)))])
    step = 10.0 ** rng.uniform(-12, -1, size=(n_diag, 1))
    dirs = rng.standard_normal((n_diag, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    xs.append(base)
    ys.append(base + step * dirs)
    x = _clip_ball(np.concatenate(xs), N)
    y = _clip_ball(np.concatenate(ys), N)
    return x, y


def _eval(model, x):
    if model.is_1d:
        return np.asarray(model.drift(x[:, 0]))[:, None], np.asarray(model.diffusion(x[:, 0])).reshape(-1, 1, 1)
    return np.asarray(model.drift(x)), np.asarray(model.diffusion(x))


def verify_h1(model, C, mu, N_grid=(3, 10, 100, 1000, 10_000), n_samples=100_000, seed=0) -> H1Report:
    """Sample pairs in each ball ``B(N)`` and check both (H1) inequalities.

    Diffusion line: ``||sigma(x)-sigma(y)|| <= C sqrt(log N)|x-y| + C log N / N^mu``;
    drift line: ``|b(x)-b(y)| <= C log N |x-y| + C log N / N^mu``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    for N in N_grid:
        if not N > math.e:
            raise ValueError(f"every N must exceed e, got {N}")
    rng = np.random.default_rng(RngStream(seed, 0x48_31).key)
    d = model.dim_state
    rows, by_line = [], {"drift": 0, "diffusion": 0}
    C_est, worst, worst_margin = 0.0, None, -np.inf
    for N in N_grid:
        x, y = _h1_pairs(rng, int(n_samples), d, float(N))
        bx, sx = _eval(model, x)
        by, sy = _eval(model, y)
        dist = np.linalg.norm(x - y, axis=1)
        logN = math.log(N)
        defect = logN / float(N) ** mu
        lines = {
            "diffusion": (np.sqrt(((sx - sy) ** 2).sum(axis=(1, 2))), math.sqrt(logN)),
            "drift": (np.linalg.norm(bx - by, axis=1), logN),
        }
        for line, (lhs, slope) in lines.items():
            unit = slope * dist + defect
            rhs = C * unit
            bad = lhs > rhs
            nbad = int(bad.sum())
            by_line[line] += nbad
            C_est = max(C_est, float(np.max(lhs / unit)))
            margin = lhs - rhs
            i = int(np.argmax(margin))
            rows.append((N, C, mu, line, nbad, float(lhs[i]), float(rhs[i])))
            if margin[i] > worst_margin:
                worst_margin = float(margin[i])
                xi = float(x[i, 0]) if d == 1 else x[i].copy()
                yi = float(y[i, 0]) if d == 1 else y[i].copy()
                worst = (xi, yi, N, float(lhs[i]), float(rhs[i]))
    total = by_line["drift"] + by_line["diffusion"]
    return H1Report(C, mu, C_est, mu, list(N_grid), total, by_line, worst, rows)


@dataclass
class GrowthReport:
    holds: bool
    C_fit: float
    growth_ratio: float
    worst_x: float
    C_by_decade: list


def verify_growth(model, K, n_samples=20_000, seed=0, rtol=0.05) -> GrowthReport:
    """Fit the smallest ``C`` in ``|sigma|^2 <= C(|x|^2 log|x| + 1)`` and
    ``|b| <= C(|x| log|x| + 1)`` for ``|x|`` log-uniform in ``(K, 1e6 K]``.

    The growth bound is reported as holding when the constant fitted on the
    upper half of the log-range exceeds the lower-half constant by at most
    ``rtol``; an unbounded ratio keeps growing with the range.
    """
    if not K > 1:
        raise ValueError("K must exceed 1")
    rng = np.random.default_rng(RngStream(seed, 0x6772).key)
    lo, hi = math.log(K), math.log(K * 1e6)
    r = np.exp(rng.uniform(lo, hi, size=n_samples))
    r = np.where(r <= K, np.nextafter(K, np.inf), r)
    d = model.dim_state
    if d == 1:
        x = (r * rng.choice([-1.0, 1.0], size=n_samples))[:, None]
    else:
        u = rng.standard_normal((n_samples, d))
        x = u / np.linalg.norm(u, axis=1, keepdims=True) * r[:, None]
    bx, sx = _eval(model, x)
    lr = np.log(r)
    ratio = np.maximum(
        (sx**2).sum(axis=(1, 2)) / (r**2 * lr + 1.0),
        np.linalg.norm(bx, axis=1) / (r * lr + 1.0),
    )
    mid = 0.5 * (lo + hi)
    lower, upper = ratio[np.log(r) <= mid], ratio[np.log(r) > mid]
    c_low = float(lower.max()) if lower.size else 0.0
    c_up = float(upper.max()) if upper.size else 0.0
    growth = c_up / c_low if c_low > 0 else (0.0 if c_up == 0 else math.inf)
    edges = np.arange(math.floor(lo / math.log(10)), math.ceil(hi / math.log(10)) + 1)
    dec = np.floor(np.log10(r))
    by_decade = [float(ratio[dec == e].max()) for e in edges if np.any(dec == e)]
    i = int(np.argmax(ratio))
    return GrowthReport(bool(growth <= 1.0 + rtol), float(ratio.max()), growth, float(r[i]), by_decade)


def fang_zhang_gap(model, x_grid) -> np.ndarray:
    """Rows ``(x, |b(x+1) - b(x)|)`` for a 1-D model at grid points ``> 1``."""
    _require_1d(model)
    x = np.asarray(x_grid, dtype=float)
    if np.any(x <= 1):
        raise ValueError("grid points must exceed 1")
    g = np.abs(np.asarray(model.drift(x + 1.0)) - np.asarray(model.drift(x)))
    return np.column_stack([x, g])
