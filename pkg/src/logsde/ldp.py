"""Small-noise Monte Carlo for exit and tube probabilities and the
regression readout of their exponential decay rate.

Paths for noise level ``eps`` follow the Euler recursion of
:mod:`logsde.euler` with noise scaled by ``sqrt(eps)``; the Brownian
increments are regenerated on the fly from the counter stream, bit-for-bit
identical to ``sample_path`` for the same stream, and a path stops as soon as
its event is decided.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from ._parallel import chunks, ordered_map
from .brownian import grid_size, sample_path
from .coefficients import CoefficientModel
from .euler import simulate_batch
from .rng import TAG_INCREMENT, RngStream, normal_pair, path_keys, substream_base
from .skeleton import RateEstimate, minimize_rate_endpoint, minimize_rate_tube
from .stats import wilson_interval

CHUNK = 4096
DEFAULT_EPSILONS = (1 / 4, 1 / 8, 1 / 12, 1 / 16)


# ---------------------------------------------------------------------------
# tables and fits


@dataclass
class LdpRow:
    epsilon: float
    M: int
    hits: int
    phat: float
    lo95: float
    hi95: float
    eps_log_phat: float
    upper_bound_only: bool

    def as_tuple(self):
        return (self.epsilon, self.M, self.hits, self.phat, self.lo95, self.hi95, self.eps_log_phat)


def make_row(epsilon, hits, M) -> LdpRow:
    """Row with a Wilson interval; zero-hit rows store ``eps log(hi95)`` as a bound."""
    lo, hi = wilson_interval(hits, M)
    p = hits / M if M else 0.0
    if hits > 0:
        return LdpRow(epsilon, M, hits, p, lo, hi, epsilon * math.log(p), False)
    bound = epsilon * math.log(hi) if hi > 0 else -math.inf
    return LdpRow(epsilon, M, hits, p, lo, hi, bound, True)


@dataclass
class SlopeFit:
    """Exponent estimate ``I_hat`` from ``log phat ~ a - I/eps``."""

    I_hat: float
    stderr: float
    rows: int
    intercept: float = math.nan

    CSV_HEADER = ("I_hat", "stderr", "rows")

    def csv_rows(self):
        return [(self.I_hat, self.stderr, self.rows)]


def slope_fit(rows) -> SlopeFit:
    """Weighted least squares of ``log phat`` on ``1/eps``.

    Only rows with ``0 < hits < M`` enter; weights ``M p / (1 - p)`` are the
    inverse binomial variance of ``log phat``. The standard error comes from
    the weighted normal equations with those known variances.
    """
    use = [r for r in rows if 0 < r.hits < r.M]
    if len(use) < 2:
        raise ValueError(f"slope fit needs at least 2 rows with 0 < hits < M, got {len(use)}")
    x = np.array([1.0 / r.epsilon for r in use])
    y = np.array([math.log(r.phat) for r in use])
    w = np.array([r.M * r.phat / (1.0 - r.phat) for r in use])
    X = np.column_stack([np.ones_like(x), x])
    A = X.T @ (w[:, None] * X)
    coef = np.linalg.solve(A, X.T @ (w * y))
    cov = np.linalg.inv(A)
    return SlopeFit(float(-coef[1]), float(math.sqrt(cov[1, 1])), len(use), float(coef[0]))


@dataclass
class LdpTable:
    rows: list
    event: str
    predicted: float | None = None
    prediction: RateEstimate | None = field(default=None, repr=False)

    CSV_HEADER = ("epsilon", "M", "hits", "phat", "lo95", "hi95", "eps_log_phat")

    def csv_rows(self):
        return [r.as_tuple() for r in self.rows]

    def fit(self) -> SlopeFit:
        return slope_fit(self.rows)

    def summary(self):
        out = {"rows": len(self.rows), "total_hits": sum(r.hits for r in self.rows)}
        for i, r in enumerate(self.rows):
            out[f"phat_{i}"] = r.phat
            out[f"hits_{i}"] = r.hits
        try:
            f = self.fit()
            out.update(I_hat=f.I_hat, I_stderr=f.stderr, fit_rows=f.rows)
        except ValueError:
            pass
        if self.predicted is not None:
            out["I_pred"] = self.predicted
            if "I_hat" in out and self.predicted > 0:
                out["I_rel_error"] = abs(out["I_hat"] - self.predicted) / self.predicted
        return out


# ---------------------------------------------------------------------------
# streaming kernels (1-D models with compiled kernels)


@numba.njit(nogil=True)
def _step(b, s, x, w, z, sd, dt, seps):
    wn = w + z * sd
    return x + b(x) * dt + s(x) * (seps * (wn - w)), wn


@numba.njit(nogil=True)
def _exit_kernel(b, s, keys, K, level, dt, seps, x0, center, R):
    hits = np.zeros(keys.shape[0], np.int64)
    sd = math.sqrt(dt)
    for p in range(keys.shape[0]):
        base = substream_base(keys[p], TAG_INCREMENT, level)
        x = x0
        w = 0.0
        z1 = 0.0
        for k in range(K):
            if k % 2 == 0:
                z, z1 = normal_pair(base, k // 2)
            else:
                z = z1
            x, w = _step(b, s, x, w, z, sd, dt, seps)
            if not abs(x - center) < R:
                hits[p] = 1
                break
    return hits


@numba.njit(nogil=True)
def _tube_kernel(b, s, keys, K, level, dt, seps, phi, delta):
    hits = np.zeros(keys.shape[0], np.int64)
    sd = math.sqrt(dt)
    for p in range(keys.shape[0]):
        base = substream_base(keys[p], TAG_INCREMENT, level)
        x = phi[0]
        w = 0.0
        z1 = 0.0
        inside = 1
        for k in range(K):
            if k % 2 == 0:
                z, z1 = normal_pair(base, k // 2)
            else:
                z = z1
            x, w = _step(b, s, x, w, z, sd, dt, seps)
            if not abs(x - phi[k + 1]) <= delta:
                inside = 0
                break
        hits[p] = inside
    return hits


def _require_truncated(model: CoefficientModel, R_needed: float):
    if not model.bounded or model.truncation is None:
        raise ValueError("model must be truncated (apply truncate_model) before small-noise studies")
    if model.truncation.radius < R_needed:
        raise ValueError(f"truncation radius {model.truncation.radius} < required {R_needed}")


def _count(model, label, M, seed, workers, fast_kernel, path_event, K, level, T):
    keys = path_keys(seed, label, range(M))
    if model.is_1d and model.scalar is not None:
        def run(span):
            return int(fast_kernel(keys[span[0]:span[1]]).sum())
    else:
        def run(span):
            n = 0
            for i in range(span[0], span[1]):
                path = sample_path(RngStream.for_path(seed, label, i), T, level, model.dim_noise)
                n += path_event(path)
            return n

    return int(sum(ordered_map(run, chunks(M, CHUNK), workers)))


def _eps_label(kind, eps):
    return f"{kind}:{float(eps)!r}"


def _check_eps(eps_list):
    eps_list = [float(e) for e in eps_list]
    if not eps_list or any(not 0 < e <= 1 for e in eps_list):
        raise ValueError("epsilon values must lie in (0, 1]")
    return eps_list


def exit_probability_study(model: CoefficientModel, x0, R_dom, eps_list, T, level, M, seed,
                           workers=1, predict=False, predict_level=8) -> LdpTable:
    """Estimate ``P(exists k <= T 2^n : |X^eps_k - x0| >= R_dom)`` per ``eps``.

    The model must be truncated at radius ``>= 2 R_dom``. Each ``eps`` uses
    its own experiment label, so rows are independent.
    """
    x0 = float(x0)
    if not R_dom > 0:
        raise ValueError("R_dom must be positive")
    _require_truncated(model, 2.0 * R_dom + abs(x0))
    eps_list = _check_eps(eps_list)
    K = grid_size(T, level)
    dt = 2.0**-level
    rows = []
    for eps in eps_list:
        seps = math.sqrt(eps)

        def fast(keys, seps=seps):
            k = model.scalar
            return _exit_kernel(k.b, k.s, keys, K, level, dt, seps, x0, x0, float(R_dom))

        def slow(path, eps=eps):
            v, _, _ = simulate_batch(model, path, [x0], eps)
            return int(np.any(np.linalg.norm(v[:, 0] - x0, axis=-1) >= R_dom))

        hits = _count(model, _eps_label("ldp-exit", eps), M, seed, workers, fast, slow, K, level, T)
        rows.append(make_row(eps, hits, M))
    table = LdpTable(rows, "exit")
    if predict:
        est = exit_rate_prediction(model, x0, R_dom, T, predict_level)
        table.predicted, table.prediction = est.value, est
    return table


def exit_rate_prediction(model, x0, R_dom, T, level=8, **opts) -> RateEstimate:
    """Skeleton exponent for leaving the interval ``(x0 - R_dom, x0 + R_dom)`` by time ``T``.

    Minimum of the endpoint rates for ``y = x0 - R_dom`` and ``y = x0 + R_dom``.
    """
    if not model.is_1d:
        raise ValueError("exit prediction is implemented for 1-D models")
    ests = [minimize_rate_endpoint(model, x0, y, T, level, **opts) for y in (x0 - R_dom, x0 + R_dom)]
    ok = [e for e in ests if e.converged] or ests
    return min(ok, key=lambda e: e.value)


def tube_probability_study(model: CoefficientModel, phi, delta, eps_list, T, level, M, seed,
                           workers=1, predict=True, predict_level=None) -> LdpTable:
    """Estimate ``P(max_k |X^eps_k - phi(t_k)| <= delta)`` per ``eps``.

    ``phi`` is given on the level-``level`` grid (``T 2^level + 1`` points).
    The skeleton tube exponent from :func:`minimize_rate_tube` is attached
    as ``predicted`` unless ``predict`` is false.
    """
    if not delta > 0:
        raise ValueError("tube radius must be positive")
    if not model.is_1d:
        raise ValueError("tube study is implemented for 1-D models")
    K = grid_size(T, level)
    phi = np.asarray(phi, dtype=float).ravel()
    if phi.size != K + 1:
        raise ValueError(f"phi must have {K + 1} points on the level-{level} grid")
    _require_truncated(model, float(np.max(np.abs(phi))) + delta)
    eps_list = _check_eps(eps_list)
    dt = 2.0**-level
    rows = []
    for eps in eps_list:
        seps = math.sqrt(eps)

        def fast(keys, seps=seps):
            k = model.scalar
            return _tube_kernel(k.b, k.s, keys, K, level, dt, seps, phi, float(delta))

        def slow(path, eps=eps):
            v, _, _ = simulate_batch(model, path, [phi[0]], eps)
            return int(np.all(np.abs(v[:, 0, 0] - phi) <= delta))

        hits = _count(model, _eps_label("ldp-tube", eps), M, seed, workers, fast, slow, K, level, T)
        rows.append(make_row(eps, hits, M))
    table = LdpTable(rows, "tube")
    if predict:
        pl = min(level, 10) if predict_level is None else predict_level
        est = minimize_rate_tube(model, phi, delta, T, pl)
        table.predicted, table.prediction = est.value, est
    return table


# ---------------------------------------------------------------------------
# Euler versus refined-Euler deviation probe


@dataclass
class GapProbeTable:
    """Rows ``(epsilon, n, n_ref, M, hits, phat, lo95, hi95)``."""

    rows: list
    delta: float

    CSV_HEADER = ("epsilon", "n", "n_ref", "M", "hits", "phat", "lo95", "hi95")

    def csv_rows(self):
        return [tuple(r) for r in self.rows]

    def for_epsilon(self, eps):
        return [r for r in self.rows if r[0] == eps]

    def summary(self):
        out = {"rows": len(self.rows)}
        eps_vals = sorted({r[0] for r in self.rows})
        nonincr, separated = 1, 1
        for e in eps_vals:
            rs = sorted(self.for_epsilon(e), key=lambda r: r[1])
            ps = [r[5] for r in rs]
            nonincr &= int(all(a >= b for a, b in zip(ps, ps[1:])))
            # first row above the last with disjoint Wilson intervals
            separated &= int(len(rs) >= 2 and rs[0][6] > rs[-1][7])
        for i, r in enumerate(self.rows):
            out[f"phat_{i}"] = r[5]
        out["non_increasing"] = nonincr
        out["ci_separated"] = separated
        return out


def euler_ldp_gap_probe(model: CoefficientModel, x0, delta, eps_list, n_list, T, M, seed,
                        ref_offset=4, workers=1) -> GapProbeTable:
    """Estimate ``P(max_k |X^eps_n(t_k) - X^eps_{n+4}(t_k)| >= delta)``.

    Both levels are driven by one Brownian path sampled at the finest level
    needed and restricted, so every row of a replication shares the noise.
    The maximum runs over the coarse grid.
    """
    eps_list = _check_eps(eps_list)
    if any(e < 0.05 for e in eps_list):
        raise ValueError("epsilon must be >= 0.05 for the gap probe")
    _require_truncated(model, 0.0)
    n_list = [int(n) for n in n_list]
    refs = [n + int(ref_offset) for n in n_list]
    top = max(refs + n_list)
    grid_size(T, min(n_list))
    rows = []
    for eps in eps_list:
        label = _eps_label("ldp-euler", eps)

        def one(i, eps=eps):
            path = sample_path(RngStream.for_path(seed, label, i), T, top, model.dim_noise)
            cache = {}

            def run(level):
                if level not in cache:
                    v, _, _ = simulate_batch(model, path.restrict(level), [x0], eps)
                    cache[level] = v[:, 0]
                return cache[level]

            out = []
            for n, r in zip(n_list, refs):
                coarse, fine = run(n), run(r)[:: 2 ** (r - n)]
                out.append(int(np.max(np.linalg.norm(coarse - fine, axis=-1)) >= delta))
            return out

        H = np.array(ordered_map(one, range(M), workers)).reshape(M, len(n_list))
        for j, (n, r) in enumerate(zip(n_list, refs)):
            hits = int(H[:, j].sum())
            lo, hi = wilson_interval(hits, M)
            rows.append((eps, n, r, M, hits, hits / M if M else 0.0, lo, hi))
    return GapProbeTable(rows, float(delta))


def upper_bound_consistent(table: LdpTable, I_var: float, slack: float) -> list:
    """Per row, whether ``phat <= exp((-I_var + slack) / eps)``."""
    return [r.phat <= math.exp((-I_var + slack) / r.epsilon) for r in table.rows]


__all__ = [
    "DEFAULT_EPSILONS",
    "LdpRow",
    "LdpTable",
    "SlopeFit",
    "GapProbeTable",
    "make_row",
    "slope_fit",
    "exit_probability_study",
    "exit_rate_prediction",
    "tube_probability_study",
    "euler_ldp_gap_probe",
    "upper_bound_consistent",
]
