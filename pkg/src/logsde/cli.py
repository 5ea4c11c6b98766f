"""Batch driver: ``logsde run <config.json>`` and ``logsde check <suite.json>``.

A config is one JSON object with ``kind``, ``model``, ``seed`` and the
kind-specific parameters; ``truncate`` (``{"radius": R, "mode": "clamp"}``)
wraps the model before use. Each run writes CSV files (17 significant
digits, ``#`` provenance lines first) plus ``manifest.json`` into the output
directory.

Exit codes: 0 ok, 2 invalid config, 3 numerical failure, 4 failed check.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .coefficients import (
    TruncationSpec,
    fang_zhang_gap,
    parse_model,
    truncate_model,
    verify_growth,
    verify_h1,
    with_drift_offset,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_CHECK = 4

OPS = {
    "<=": lambda a, v, t: a <= v + t,
    ">=": lambda a, v, t: a >= v - t,
    "<": lambda a, v, t: a < v + t,
    ">": lambda a, v, t: a > v - t,
    "==": lambda a, v, t: abs(a - v) <= t,
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


class NumericalFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# output


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


_BUILD_ID = None


def build_id() -> str:
    global _BUILD_ID
    if _BUILD_ID is None:
        desc = ""
        try:
            desc = subprocess.run(
                ["git", "describe", "--always", "--dirty"],
                cwd=os.path.dirname(__file__), capture_output=True, text=True, timeout=5,
            ).stdout.strip()
        except (OSError, subprocess.SubprocessError):
            pass
        _BUILD_ID = f"logsde-{__version__}" + (f"+{desc}" if desc else "")
    return _BUILD_ID


def provenance(cfg) -> list:
    return [
        f"kind={cfg['kind']}",
        f"model={cfg.get('model')}",
        f"n={cfg.get('n', cfg.get('level', ''))}",
        f"T={cfg.get('T', cfg.get('t', ''))}",
        f"M={cfg.get('M', '')}",
        f"seed={cfg['seed']}",
        f"build={build_id()}",
        f"timestamp={_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}",
    ]


def write_csv(path, header, rows, comments=()):
    """Write ``# comment`` lines, a header and rows; returns the body text."""
    body = [",".join(header)] + [",".join(fmt(v) for v in row) for row in rows]
    text = "\n".join(body) + "\n"
    with open(path, "w", newline="\n") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        fh.write(text)
    return text


def read_csv_body(path) -> str:
    """File content without the ``#`` comment lines."""
    with open(path) as fh:
        return "".join(line for line in fh if not line.startswith("#"))


# ---------------------------------------------------------------------------
# config access


class _Cfg:
    def __init__(self, cfg: dict):
        self.cfg = cfg

    def req(self, name, kind=float):
        if name not in self.cfg:
            raise ConfigError(f"missing required field '{name}' for kind '{self.cfg['kind']}'")
        return self._conv(name, self.cfg[name], kind)

    def opt(self, name, default, kind=float):
        return self._conv(name, self.cfg[name], kind) if name in self.cfg else default

    @staticmethod
    def _conv(name, v, kind):
        try:
            if kind is list:
                if not isinstance(v, list):
                    raise TypeError
                return [float(x) for x in v]
            if kind is int:
                if isinstance(v, bool) or float(v) != int(v):
                    raise TypeError
                return int(v)
            if kind is float:
                out = float(v)
                if not math.isfinite(out):
                    raise TypeError
                return out
            return v
        except (TypeError, ValueError):
            raise ConfigError(f"field '{name}' has invalid value {v!r}") from None


def _check_dyadic(T, n, field="T"):
    if n < 0 or n > 30:
        raise ConfigError(f"field 'n' must lie in [0, 30], got {n}")
    K = T * 2.0**n
    if not T > 0 or K != math.floor(K):
        raise ConfigError(f"field '{field}'={T} is not a multiple of 2^-{n}")


def _model(cfg, key="model"):
    if key not in cfg:
        raise ConfigError(f"missing required field '{key}'")
    try:
        model = parse_model(str(cfg[key]))
    except (ValueError, ImportError, AttributeError) as e:
        raise ConfigError(f"field '{key}': {e}") from None
    tr = cfg.get("truncate")
    if tr is not None:
        if not isinstance(tr, dict) or "radius" not in tr:
            raise ConfigError("field 'truncate' must be an object with 'radius'")
        try:
            model = truncate_model(model, TruncationSpec(float(tr["radius"]), tr.get("mode", "clamp")))
        except ValueError as e:
            raise ConfigError(f"field 'truncate': {e}") from None
    return model


def _need_bounded(model):
    if not model.bounded:
        raise ConfigError("field 'truncate' is required: this kind needs a bounded (truncated) model")


# ---------------------------------------------------------------------------
# kinds: each returns (files, summary) with files = [(name, header, rows)]


def _k_simulate(c: _Cfg, model, workers):
    from .brownian import sample_path
    from .euler import simulate
    from .rng import RngStream

    T, n = c.req("T"), c.req("n", int)
    _check_dyadic(T, n)
    x0s = c.cfg.get("x0")
    if x0s is None:
        raise ConfigError("missing required field 'x0' for kind 'simulate'")
    x0s = x0s if isinstance(x0s, list) else [x0s]
    M = c.opt("M", 1, int)
    eps = c.opt("epsilon", 1.0)
    seed = c.cfg["seed"]
    files, dev, exited, invalid, ends = [], 0.0, 0, 0, []
    for j, x0 in enumerate(x0s):
        x0v = np.asarray(x0, dtype=float)
        for i in range(M):
            tr = simulate(model, sample_path(RngStream.for_path(seed, "simulate", i), T, n, model.dim_noise),
                          x0v, eps)
            if tr.valid:
                dev = max(dev, float(np.max(np.abs(tr.values - x0v))))
            invalid += int(not tr.valid)
            exited += int(tr.exited)
            if i == 0:
                ends.append(float(tr.values[-1, 0]))
                name = "trajectory.csv" if len(x0s) == 1 else f"trajectory_{j}.csv"
                files.append((name, tr.csv_header(), list(tr.csv_rows())))
    return files, {"max_abs_deviation": dev, "exited": exited, "invalid": invalid, "endpoint": ends[0]}


def _k_converge(c, model, workers):
    from .euler import strong_error_study
    from .stats import ci_separated

    T = c.req("T")
    n_min, n_max, n_ref = c.req("n_min", int), c.req("n_max", int), c.req("n_ref", int)
    _check_dyadic(T, n_min)
    M = c.req("M", int)
    tab = strong_error_study(model, c.req("x0"), T, n_min, n_max, n_ref, M, c.cfg["seed"],
                             c.opt("epsilon", 1.0), workers=workers)
    est, se = tab.estimates, tab.stderrs
    summ = {
        "strictly_decreasing": int(bool(np.all(np.diff(est) < 0))),
        "ci_separated": int(ci_separated(est[0], se[0], est[-1], se[-1])),
        "est_first": float(est[0]),
        "est_last": float(est[-1]),
        "excluded": int(sum(r[2] for r in tab.rows)),
    }
    return [("strong_error.csv", tab.CSV_HEADER, tab.csv_rows())], summ


def _k_h1(c, model, workers):
    rep = verify_h1(model, c.req("C"), c.req("mu"), [float(x) for x in c.opt("N_grid", [3, 10, 100, 1000], list)],
                    c.opt("n_samples", 100_000, int), c.cfg["seed"])
    summ = {"violation_count": rep.violation_count, "C_est": rep.C_est, "mu_est": rep.mu_est}
    for line, v in rep.violations_by_line.items():
        summ[f"{line}_violations"] = v
    return [("h1.csv", rep.CSV_HEADER, rep.csv_rows())], summ


def _k_growth(c, model, workers):
    rep = verify_growth(model, c.req("K"), c.opt("n_samples", 20_000, int), c.cfg["seed"], c.opt("rtol", 0.05))
    rows = [(i, v) for i, v in enumerate(rep.C_by_decade)]
    summ = {"holds": int(rep.holds), "C_fit": rep.C_fit, "growth_ratio": rep.growth_ratio}
    return [("growth.csv", ("decade", "C"), rows)], summ


def _k_fzgap(c, model, workers):
    grid = c.req("x_grid", list)
    try:
        tab = fang_zhang_gap(model, grid)
    except ValueError as e:
        raise ConfigError(f"field 'x_grid': {e}") from None
    g = tab[:, 1]
    summ = {"g_first": float(g[0]), "g_last": float(g[-1]), "ratio": float(g[-1] / g[0])}
    return [("fzgap.csv", ("x", "gap"), tab.tolist())], summ


def _k_tail(c, model, workers):
    from .euler import tail_bound_check

    A, B, d, T, R = c.req("A"), c.req("B"), c.req("d", int), c.req("T"), c.req("R")
    level = c.opt("level", 14, int)
    _check_dyadic(T, level)
    chk = tail_bound_check(A, B, d, T, R, c.req("M", int), c.cfg["seed"], level, workers)
    ref = c.opt("reference", None)
    summ = {"phat": chk.empirical_prob, "bound": chk.paper_bound, "hits": chk.hits,
            "lo95": chk.lo95, "hi95": chk.hi95}
    if ref:
        summ["ratio_to_reference"] = chk.empirical_prob / ref
    rows = [(chk.M, chk.hits, chk.empirical_prob, chk.lo95, chk.hi95, chk.paper_bound)]
    return [("tail.csv", ("M", "hits", "phat", "lo95", "hi95", "bound"), rows)], summ


def _k_continuity(c, model, workers):
    from .pathprops import continuity_study
    from .stats import ci_separated

    T, n = c.req("T"), c.req("n", int)
    _check_dyadic(T, n)
    tab = continuity_study(model, c.req("x0"), c.req("deltas", list), T, n, c.req("M", int), c.cfg["seed"],
                           c.opt("epsilon", 1.0), workers=workers)
    est = [r[3] for r in tab.rows]
    first, last = tab.rows[0], tab.rows[-1]
    summ = {
        "strictly_decreasing": int(all(a > b for a, b in zip(est, est[1:]))),
        "ci_separated": int(ci_separated(first[3], first[4], last[3], last[4])),
    }
    return [("continuity.csv", tab.CSV_HEADER, tab.csv_rows())], summ


def _k_confluence(c, model, workers):
    from .pathprops import confluence_study

    T, n = c.req("T"), c.req("n", int)
    _check_dyadic(T, n)
    x, y = c.req("x"), c.req("y")
    if x == y:
        raise ConfigError("fields 'x' and 'y' must differ")
    g = confluence_study(model, x, y, T, n, c.req("M", int), c.req("tau"), c.cfg["seed"], workers=workers)
    return [("gaps.csv", g.CSV_HEADER, g.csv_rows())], g.summary()


def _k_compare(c, model, workers):
    from .pathprops import comparison_study

    T, n = c.req("T"), c.req("n", int)
    _check_dyadic(T, n)
    if "model2" in c.cfg:
        model2 = _model(c.cfg, "model2")
    else:
        model2 = with_drift_offset(model, c.req("drift_offset"))
    try:
        r = comparison_study(model, model2, c.req("x1_0"), c.req("x2_0"), T, n, c.req("M", int), c.cfg["seed"],
                             workers=workers)
    except ValueError as e:
        raise ConfigError(f"comparison setup: {e}") from None
    summ = {"violation_fraction": r.violation_fraction, "violations": r.violations,
            "strictly_below_fraction": r.strictly_below_fraction}
    return [("comparison.csv", r.CSV_HEADER, r.csv_rows())], summ


def _k_flow(c, model, workers):
    from .pathprops import flow_snapshot

    t, n = c.req("t"), c.req("n", int)
    _check_dyadic(t, n, "t")
    try:
        f = flow_snapshot(model, c.req("x_grid", list), t, n, c.req("M", int), c.cfg["seed"], workers=workers)
    except ValueError as e:
        raise ConfigError(f"field 'x_grid': {e}") from None
    summ = {"violations": f.violations, "violation_fraction": f.violation_fraction,
            "pinned_exact": int(f.pinned_exact)}
    return [("flow.csv", f.CSV_HEADER, list(f.csv_rows()))], summ


def _k_moments(c, model, workers):
    from .pathprops import moment_modulus_study

    _need_bounded(model)
    n = c.req("n", int)
    pairs = c.req("pairs", None)
    try:
        pairs = [((float(a[0]), float(a[1])), (float(b[0]), float(b[1]))) for a, b in pairs]
    except (TypeError, ValueError, IndexError):
        raise ConfigError("field 'pairs' must be a list of [[x, s], [y, t]]") from None
    tab = moment_modulus_study(model, pairs, c.req("p"), n, c.req("M", int), c.cfg["seed"], workers=workers)
    return [("moments.csv", tab.CSV_HEADER, tab.csv_rows())], {"c_fit": tab.c_fit, "c_upper95": tab.c_upper95}


def _control(c, level, T, m):
    from .skeleton import Control

    spec = c.cfg.get("control", "zero")
    if spec == "zero":
        return Control.zeros(level, T, m)
    if isinstance(spec, dict) and "constant" in spec:
        return Control.constant(spec["constant"], level, T)
    if isinstance(spec, dict) and "ramp" in spec:
        # hdot(t) = a t with a^2 T^3 / 3 = energy, sampled at cell midpoints
        K = int(T * 2**level)
        a = math.sqrt(3.0 * float(spec["ramp"]) / T**3)
        return Control(level, T, a * (np.arange(K) + 0.5) * 2.0**-level)
    raise ConfigError("field 'control' must be 'zero', {'constant': c} or {'ramp': energy}")


def _k_skeleton(c, model, workers):
    from .skeleton import skeleton_consistency, solve_skeleton

    T, level = c.req("T"), c.req("level", int)
    _check_dyadic(T, level)
    ctrl = _control(c, level, T, model.dim_noise)
    integ = c.opt("integrator", "euler", str)
    level_out = c.opt("level_out", None, int)
    try:
        sk = solve_skeleton(model, ctrl, c.req("x0"), integ, level_out)
    except ValueError as e:
        raise ConfigError(f"skeleton: {e}") from None
    if not sk.valid:
        raise NumericalFailure(f"skeleton state became non-finite at step {sk.invalid_index}")
    rows = [(k, t, *v.tolist()) for k, (t, v) in enumerate(zip(sk.times, sk.values))]
    header = ("k", "t") + tuple(f"x_{i + 1}" for i in range(sk.values.shape[1]))
    files = [("skeleton.csv", header, rows)]
    summ = {"endpoint": float(sk.endpoint[0]), "energy": ctrl.energy}
    if "closed_form" in c.cfg:
        ref = float(c.cfg["closed_form"])
        summ["rel_error"] = abs(sk.endpoint[0] - ref) / abs(ref)
        summ["abs_error"] = abs(sk.endpoint[0] - ref)
    if "n_grid" in c.cfg:
        tab = skeleton_consistency(model, ctrl, c.req("x0"), [int(v) for v in c.req("n_grid", list)])
        g = tab.gaps
        summ["gaps_strictly_decreasing"] = int(bool(np.all(np.diff(g) < 0)))
        summ["slope"] = tab.slope
        files.append(("consistency.csv", tab.CSV_HEADER, tab.csv_rows()))
    return files, summ


def _rate_files(est):
    c = est.control
    return [("rate.csv", est.CSV_HEADER, est.csv_rows()),
            ("control.csv", c.csv_header(), list(c.csv_rows())),
            ("trace.csv", ("outer", "weight", "energy", "residual"), est.trace)]


def _k_rate(c, model, workers):
    from .skeleton import minimize_rate_endpoint

    T, level = c.req("T"), c.req("level", int)
    _check_dyadic(T, level)
    est = minimize_rate_endpoint(model, c.req("x0"), c.req("y"), T, level, c.opt("tol", 1e-4))
    return _rate_files(est), est.summary()


def _phi(c, model, level, T):
    from .skeleton import Control, solve_skeleton

    spec = c.cfg.get("phi")
    K = int(T * 2**level)
    if spec == "flow":
        return solve_skeleton(model, Control.zeros(level, T, model.dim_noise), c.req("x0")).values[:, 0]
    if isinstance(spec, dict) and "line" in spec:
        a, b = (float(v) for v in spec["line"])
        return a + (b - a) * np.arange(K + 1) / K
    raise ConfigError("field 'phi' must be 'flow' or {'line': [start, end]}")


def _k_tube(c, model, workers):
    from .skeleton import minimize_rate_tube

    T, level = c.req("T"), c.req("level", int)
    _check_dyadic(T, level)
    est = minimize_rate_tube(model, _phi(c, model, level, T), c.req("delta"), T, level, c.opt("tol", 1e-4))
    return _rate_files(est), est.summary()


def _ldp_files(tab):
    files = [("ldp.csv", tab.CSV_HEADER, tab.csv_rows())]
    try:
        f = tab.fit()
        files.append(("slope.csv", f.CSV_HEADER, f.csv_rows()))
    except ValueError:
        pass
    return files


def _k_ldp_exit(c, model, workers):
    from .ldp import DEFAULT_EPSILONS, exit_probability_study

    T, level = c.req("T"), c.req("level", int)
    _check_dyadic(T, level)
    _need_bounded(model)
    try:
        tab = exit_probability_study(model, c.req("x0"), c.req("R_dom"), c.opt("epsilons", list(DEFAULT_EPSILONS), list),
                                     T, level, c.req("M", int), c.cfg["seed"], workers,
                                     predict=bool(c.opt("predict", True, None)),
                                     predict_level=c.opt("predict_level", 8, int))
    except ValueError as e:
        raise ConfigError(f"ldp-exit: {e}") from None
    return _ldp_files(tab), tab.summary()


def _k_ldp_tube(c, model, workers):
    from .ldp import DEFAULT_EPSILONS, tube_probability_study

    T, level = c.req("T"), c.req("level", int)
    _check_dyadic(T, level)
    _need_bounded(model)
    try:
        tab = tube_probability_study(model, _phi(c, model, level, T), c.req("delta"),
                                     c.opt("epsilons", list(DEFAULT_EPSILONS), list), T, level, c.req("M", int),
                                     c.cfg["seed"], workers, predict=bool(c.opt("predict", True, None)))
    except ValueError as e:
        raise ConfigError(f"ldp-tube: {e}") from None
    return _ldp_files(tab), tab.summary()


def _k_ldp_euler(c, model, workers):
    from .ldp import euler_ldp_gap_probe

    T = c.req("T")
    n_list = [int(v) for v in c.req("n_list", list)]
    _check_dyadic(T, min(n_list))
    _need_bounded(model)
    try:
        tab = euler_ldp_gap_probe(model, c.req("x0"), c.req("delta"), c.req("epsilons", list), n_list, T,
                                  c.req("M", int), c.cfg["seed"], c.opt("ref_offset", 4, int), workers)
    except ValueError as e:
        raise ConfigError(f"ldp-euler: {e}") from None
    return [("gap_probe.csv", tab.CSV_HEADER, tab.csv_rows())], tab.summary()


MODEL_FREE = {"tail"}

KINDS = {
    "simulate": _k_simulate,
    "converge": _k_converge,
    "h1": _k_h1,
    "growth": _k_growth,
    "fzgap": _k_fzgap,
    "tail": _k_tail,
    "continuity": _k_continuity,
    "confluence": _k_confluence,
    "compare": _k_compare,
    "flow": _k_flow,
    "moments": _k_moments,
    "skeleton": _k_skeleton,
    "rate": _k_rate,
    "tube": _k_tube,
    "ldp-exit": _k_ldp_exit,
    "ldp-tube": _k_ldp_tube,
    "ldp-euler": _k_ldp_euler,
}


# ---------------------------------------------------------------------------
# run / check


def resolve(cfg: dict, seed=None, workers=None, out=None) -> dict:
    """Apply flag overrides and validate the common fields."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    cfg = dict(cfg)
    if seed is not None:
        cfg["seed"] = seed
    if workers is not None:
        cfg["workers"] = workers
    if out is not None:
        cfg["out"] = out
    kind = cfg.get("kind")
    if kind is None:
        raise ConfigError("missing required field 'kind'")
    if kind not in KINDS:
        raise ConfigError(f"field 'kind': unknown kind {kind!r}; expected one of {', '.join(KINDS)}")
    if "seed" not in cfg:
        raise ConfigError("missing required field 'seed'")
    if isinstance(cfg["seed"], bool) or not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("field 'seed' must be a non-negative integer")
    w = cfg.setdefault("workers", 1)
    if isinstance(w, bool) or not isinstance(w, int) or w < 1:
        raise ConfigError("field 'workers' must be a positive integer")
    cfg.setdefault("out", "out")
    return cfg


def run_config(cfg: dict, seed=None, workers=None, out=None):
    """Run one experiment; returns ``(summary, written paths)``.

    Raises :class:`ConfigError` or :class:`NumericalFailure`.
    """
    from .skeleton import GradientCheckError

    cfg = resolve(cfg, seed, workers, out)
    model = None if cfg["kind"] in MODEL_FREE and "model" not in cfg else _model(cfg)
    try:
        files, summary = KINDS[cfg["kind"]](_Cfg(cfg), model, cfg["workers"])
    except GradientCheckError as e:
        raise NumericalFailure(str(e)) from None
    except FloatingPointError as e:
        raise NumericalFailure(str(e)) from None
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from None
    outdir = Path(cfg["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    comments = provenance(cfg)
    paths = []
    for name, header, rows in files:
        p = outdir / name
        write_csv(p, header, rows, comments)
        paths.append(str(p))
    summary = {k: (float(v) if isinstance(v, (float, np.floating)) else int(v) if isinstance(v, (bool, np.bool_, np.integer)) else v)
               for k, v in summary.items()}
    manifest = {"config": cfg, "build": build_id(), "files": [os.path.basename(p) for p in paths],
                "summary": summary}
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
    return summary, paths


def evaluate(summary: dict, assertion: dict):
    """Return ``(passed, actual)`` for one ``{field, op, value, tol}`` assertion."""
    for key in ("field", "op", "value"):
        if key not in assertion:
            raise ConfigError(f"assertion missing '{key}'")
    op = assertion["op"]
    if op not in OPS:
        raise ConfigError(f"assertion field 'op': unknown comparator {op!r}")
    tol = float(assertion.get("tol", 0.0))
    if not tol >= 0:
        raise ConfigError(f"assertion field 'tol' must be >= 0, got {tol}")
    name = assertion["field"]
    if name not in summary:
        return False, None
    actual = summary[name]
    ok = actual is not None and not (isinstance(actual, float) and math.isnan(actual))
    return bool(ok and OPS[op](actual, float(assertion["value"]), tol)), actual


def validate_suite(suite) -> list:
    if not isinstance(suite, dict) or not isinstance(suite.get("checks", []), list):
        raise ConfigError("suite must be an object with a 'checks' list")
    checks = suite.get("checks", [])
    for i, ch in enumerate(checks):
        if not isinstance(ch, dict) or "config" not in ch:
            raise ConfigError(f"check {i}: missing 'config'")
        for a in ch.get("assert", []):
            tol = a.get("tol", 0.0)
            if not isinstance(tol, (int, float)) or tol < 0:
                raise ConfigError(f"check {i}: assertion field 'tol' must be >= 0, got {tol!r}")
            if a.get("op") not in OPS:
                raise ConfigError(f"check {i}: assertion field 'op': unknown comparator {a.get('op')!r}")
    return checks


def check_suite(suite: dict, seed=None, workers=None, out="out", stream=None) -> int:
    """Run every check, print one row per assertion and return an exit code."""
    stream = sys.stdout if stream is None else stream
    checks = validate_suite(suite)
    all_ok = True
    numerical = False
    print(f"{'check':<28} {'field':<26} {'op':<3} {'value':>12} {'actual':>14}  result", file=stream)
    for i, ch in enumerate(checks):
        name = ch.get("name", f"check{i}")
        sub = os.path.join(out, name)
        try:
            summary, _ = run_config(ch["config"], seed=seed, workers=workers, out=sub)
        except NumericalFailure as e:
            print(f"{name:<28} numerical failure: {e}", file=stream)
            all_ok, numerical = False, True
            continue
        for a in ch.get("assert", []):
            ok, actual = evaluate(summary, a)
            all_ok &= ok
            act = "missing" if actual is None else fmt(actual)
            print(f"{name:<28} {a['field']:<26} {a['op']:<3} {fmt(a['value']):>12} {act:>14}  {'PASS' if ok else 'FAIL'}",
                  file=stream)
    print(f"{len(checks)} checks, {'all passed' if all_ok else 'FAILED'}", file=stream)
    if all_ok:
        return EXIT_OK
    return EXIT_NUMERICAL if numerical else EXIT_CHECK


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from None


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="logsde", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="cmd", required=True)
    for name, help_ in (("run", "run one experiment config"), ("check", "run an acceptance suite")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("path")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--out")
    args = parser.parse_args(argv)
    try:
        doc = _load_json(args.path)
        if args.cmd == "run":
            summary, paths = run_config(doc, args.seed, args.workers, args.out)
            for p in paths:
                print(p)
            print(json.dumps(summary, sort_keys=True))
            return EXIT_OK
        return check_suite(doc, args.seed, args.workers, args.out or "out")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
