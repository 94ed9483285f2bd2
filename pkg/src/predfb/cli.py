"""Batch command line front end.

Usage::

    predfb CONFIG.json [--out DIR] [--seed INT] [--threads INT]

The config is a single JSON object whose ``mode`` is one of
``design-linear``, ``predict``, ``simulate``, ``sweep-f`` or ``verify-bounds``.
Each run writes into one directory: ``config.json`` (the effective config),
``summary.json`` and, depending on the mode, ``trajectory.csv``,
``sweep.csv`` or ``verify_report.json``. Outputs carry no timestamps, so
re-running a config reproduces them byte for byte.

Exit codes: 0 success, 1 verify-bounds found a violation, 2 invalid config,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from .closed_loop_sim import claim_checks, decay_fit, make_schedule, simulate_linear, simulate_nonlinear
from .errors import NumericalError, ValidationError
from .euler_predictor import N_MAX_DEFAULT, euler_trajectory, lemma_oracles, predict, euler_run
from .input_history import InputWindow, PiecewiseLinearSignal
from .linear_design import (
    default_p_grid,
    f_sweep,
    iss_gain_gamma,
    linear_error_bound,
    linear_predict,
    min_grid_count,
    min_grid_lhs,
    spectral_norm,
)
from .lyapunov_design import build_bounds_pack, derive_design
from .oracle import rk4_reference, rk4_states
from .system_model import LinearSystem, linear_as_nonlinear, zero_system
from .verification import cubic_bound_sweep, linear_bound_sweep, oracle_refinement, zero_bound_sweep
from .worked import cubic_certificates, cubic_setup, scalar_unstable, scalar_unstable_gamma

MODES = ("design-linear", "predict", "simulate", "sweep-f", "verify-bounds")
EXIT_OK, EXIT_VIOLATION, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3


# -- config parsing --------------------------------------------------------

def _require(cfg, key, kind=float, positive=False):
    if key not in cfg or cfg[key] is None:
        raise ValidationError(f"config is missing {key!r}")
    try:
        value = kind(cfg[key])
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{key!r} must be a {kind.__name__}") from exc
    if positive and not value > 0:
        raise ValidationError(f"{key!r} must be positive")
    return value


def _field(cfg, key):
    if cfg.get(key) is None:
        raise ValidationError(f"config is missing {key!r}")
    return cfg[key]


def _optional(cfg, key, default, kind=float, positive=False):
    if cfg.get(key) is None:
        return default
    return _require(cfg, key, kind, positive)


def _vector(value, length, name):
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.shape != (length,) or not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name!r} must be a finite vector of length {length}")
    return arr


class _Plant:
    """Parsed ``system`` block: a linear plant or a named built-in."""

    def __init__(self, desc, tau, r):
        if not isinstance(desc, dict):
            raise ValidationError("'system' must be an object")
        self.desc = desc
        self.tau, self.r = tau, r
        self.linear = None
        self.gamma_rule = None
        name = desc.get("builtin")
        if name is None:
            if not all(k in desc for k in ("A", "B", "K")):
                raise ValidationError("a matrix system needs 'A', 'B' and 'K'")
            self.linear = LinearSystem(A=desc["A"], B=desc["B"], K=desc["K"], tau=tau)
            self.name = "linear"
        elif name == "scalar_unstable":
            p = float(desc.get("p", 1.93))
            if not p > 1:
                raise ValidationError("scalar_unstable needs p > 1")
            self.linear = scalar_unstable(p, tau)
            self.gamma_rule = scalar_unstable_gamma(p)
            self.name = name
        elif name in ("cubic", "zero"):
            self.name = name
        else:
            raise ValidationError(f"unknown built-in system {name!r}")

    @property
    def is_linear(self):
        return self.linear is not None

    @property
    def dims(self):
        if self.is_linear:
            return self.linear.n, self.linear.m
        return 1, 1

    def gamma(self):
        """ISS gain: config value, then the example's rule, then the Lyapunov certificate."""
        g = self.desc.get("gamma")
        if isinstance(g, (int, float)):
            if not g > 0:
                raise ValidationError("'gamma' must be positive")
            return float(g), None
        if g not in (None, "iss"):
            raise ValidationError("'gamma' must be a number or \"iss\"")
        if g is None and self.gamma_rule is not None:
            return self.gamma_rule, None
        rep = iss_gain_gamma(self.linear, float(self.desc.get("gamma_margin", 1.05)))
        return rep.gamma, rep

    def nonlinear_setup(self):
        """``(sys, cc, fc, pack, design)`` for the built-in nonlinear plants."""
        if self.r is None:
            raise ValidationError("nonlinear designs need 'r'")
        alpha = float(self.desc.get("alpha", 1.0))
        theta = float(self.desc.get("theta", 0.5))
        if not alpha > 0 or not theta > 0:
            raise ValidationError("certificate parameters must be positive")
        if self.name == "cubic":
            return cubic_setup(self.tau, self.r, alpha, theta)
        sys_ = zero_system()
        cc, fc = cubic_certificates(self.tau, self.r, alpha, theta)
        pack = build_bounds_pack(cc, sys_.L, self.tau)
        return sys_, cc, fc, pack, derive_design(fc, cc, pack, sys_.L, self.r, self.tau)


def _input_signal(desc, tau, m):
    """Input on ``[-tau, 0]``: a constant vector or ``{"times": [...], "values": [...]}``."""
    if desc is None:
        desc = [0.0] * m
    if isinstance(desc, dict):
        if "times" not in desc or "values" not in desc:
            raise ValidationError("an input table needs 'times' and 'values'")
        t = np.asarray(desc["times"], dtype=float)
        v = np.asarray(desc["values"], dtype=float).reshape(len(t), -1)
        if v.shape[1] != m:
            raise ValidationError(f"input values must have {m} channels")
        return PiecewiseLinearSignal(t, v)
    c = _vector(desc, m, "u0")
    return PiecewiseLinearSignal([-tau, 0.0], [c, c])


def _as_window(sig, tau):
    return InputWindow(sig.times + tau, sig.values, tau)


def _grid_setting(cfg):
    N = cfg.get("N", "auto")
    if N == "auto":
        return None
    if isinstance(N, bool) or not isinstance(N, int) or N < 1:
        raise ValidationError("'N' must be a positive integer or \"auto\"")
    return N


# -- output helpers --------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))
    return obj


def _write_json(path, data):
    text = json.dumps(_clean(data), indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    path.write_text(text, encoding="utf-8", newline="\n")


def _write_text(path, text):
    path.write_text(text, encoding="utf-8", newline="\n")


def _states_csv(t, X):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"x_{j + 1}" for j in range(X.shape[1])])
    for k in range(len(t)):
        w.writerow([repr(float(t[k]))] + [repr(float(v)) for v in X[k]])
    return buf.getvalue()


# -- modes -------------------------------------------------------------------

def _design_linear(cfg, out, ctx):
    tau = _require(cfg, "tau", positive=True)
    r = _require(cfg, "r", positive=True)
    plant = _Plant(cfg.get("system"), tau, r)
    if not plant.is_linear:
        raise ValidationError("design-linear needs a linear system")
    lin = plant.linear
    gamma, rep = plant.gamma()
    summary = {
        "mode": "design-linear",
        "gamma": gamma,
        "N_star": min_grid_count(lin, r, gamma),
        "criterion_lhs": min_grid_lhs(lin, r, gamma),
        "norms": {"A": spectral_norm(lin.A), "B": spectral_norm(lin.B), "K": spectral_norm(lin.K)},
    }
    if rep is not None:
        summary["iss_certificate"] = rep.to_dict()
        summary["iss_residuals"] = list(rep.residuals(lin))
    _write_json(out / "summary.json", summary)
    return EXIT_OK, f"N* = {summary['N_star']} (gamma = {gamma:.6g})"


def _predict(cfg, out, ctx):
    tau = _require(cfg, "tau", positive=True)
    r = _optional(cfg, "r", None, positive=True)
    plant = _Plant(cfg.get("system"), tau, r)
    n, m = plant.dims
    x0 = _vector(_field(cfg, "x0"), n, "x0")
    window = _as_window(_input_signal(cfg.get("u0"), tau, m), tau)
    integ = cfg.get("integrator") or {}
    N = _grid_setting(cfg)
    summary = {"mode": "predict", "x0": x0, "input_sup": window.norm}
    if plant.is_linear:
        lin = plant.linear
        if N is None:
            if r is None:
                raise ValidationError("N = \"auto\" for a linear plant needs 'r'")
            N = min_grid_count(lin, r, plant.gamma()[0])
        sys_ = linear_as_nonlinear(lin)
        z = linear_predict(lin, x0, window, 0.0, N, backend=ctx["backend"])
        ref = rk4_reference(sys_, x0, window, 0.0, tau, int(integ.get("oracle_steps", 10**5)))
        summary |= {
            "z": z, "N": N, "h": tau / N,
            "error_bound": linear_error_bound(spectral_norm(lin.A), spectral_norm(lin.B), tau, N,
                                              float(np.linalg.norm(x0)), window.norm),
            "oracle_state": ref.state, "oracle_budget": ref.error_estimate,
            "error": float(np.linalg.norm(z - ref.state)),
        }
    else:
        sys_, cc, fc, pack, design = plant.nonlinear_setup()
        n_max = int(integ.get("n_max", N_MAX_DEFAULT))
        res = predict(sys_, pack, design, x0, window, 0.0, n_max=n_max, force_N=N, backend=ctx["backend"])
        N = res.N
        run = euler_run(sys_, x0, window, N, backend=ctx["backend"])
        k = oracle_refinement(N)
        coarse = rk4_states(sys_, x0, window, 0.0, tau, N * k, every=k, backend=ctx["backend"])
        fine = rk4_states(sys_, x0, window, 0.0, tau, 2 * N * k, every=2 * k, backend=ctx["backend"])
        budget = float(np.max(np.linalg.norm(coarse - fine, axis=1))) + 1e-12
        try:
            lemma = lemma_oracles(sys_, pack, run, coarse, budget=budget).to_dict()
        except ValidationError as exc:
            lemma = {"skipped": str(exc)}
        summary |= res.to_record() | {
            "s": res.s, "state_bound": res.state_bound, "oracle_state": coarse[-1],
            "oracle_budget": budget, "error": float(np.linalg.norm(res.z - coarse[-1])), "lemma": lemma,
        }
    states = euler_trajectory(sys_, x0, window, N, store=True, backend=ctx["backend"])
    _write_text(out / "trajectory.csv", _states_csv(tau * np.arange(N + 1) / N, states))
    _write_json(out / "summary.json", summary)
    return EXIT_OK, f"N = {N}, |z - oracle| = {summary['error']:.3g}"


def _simulate(cfg, out, ctx):
    tau = _require(cfg, "tau", positive=True)
    r = _require(cfg, "r", positive=True)
    horizon = _optional(cfg, "horizon", 30.0, positive=True)
    plant = _Plant(cfg.get("system"), tau, r)
    n, m = plant.dims
    x0 = _vector(_field(cfg, "x0"), n, "x0")
    sig = _input_signal(cfg.get("u0"), tau, m)
    u0 = (lambda s: sig.value(min(max(s, sig.start), sig.end), "right")) if isinstance(cfg.get("u0"), dict) \
        else sig.values[0]
    sched_cfg = cfg.get("schedule") or {}
    kind = sched_cfg.get("kind", "uniform")
    seed = int(sched_cfg.get("seed", ctx["seed"]))
    sched = make_schedule(kind, r, horizon, seed)
    integ = cfg.get("integrator") or {}
    spu = integ.get("plant_steps_per_unit")
    N = _grid_setting(cfg)
    summary = {"mode": "simulate", "system": plant.name, "schedule": {"kind": kind, "seed": seed,
                                                                     "samples": len(sched.partition)}}
    if plant.is_linear:
        if N is None:
            N = min_grid_count(plant.linear, r, plant.gamma()[0])
        traj = simulate_linear(plant.linear, N, sched, x0, u0, horizon, spu, backend=ctx["backend"])
    else:
        sys_, cc, fc, pack, design = plant.nonlinear_setup()
        traj = simulate_nonlinear(sys_, pack, design, sched, tau, x0, u0, horizon, spu,
                                  n_max=int(integ.get("n_max", N_MAX_DEFAULT)), force_N=N,
                                  backend=ctx["backend"])
        summary["claims"] = claim_checks(traj, design, fc)
        summary["design"] = design.report()
    mvals = traj.m_values()
    used = traj.N_used[traj.is_sample]
    summary |= {
        "N": "auto" if N is None else N,
        "N_min": int(used.min()) if used.size else None,
        "N_max": int(used.max()) if used.size else None,
        "m_initial": float(mvals[0]),
        "m_final": float(mvals[-1]),
        "m_ratio": float(mvals[-1] / mvals[0]) if mvals[0] > 0 else 0.0,
        "sup_m": float(np.max(mvals)),
        "grid_points": len(traj.t),
    }
    if traj.t[-1] - traj.t[0] >= 5 * tau:
        fit = decay_fit(traj)
        summary["decay"] = fit.to_dict()
        summary["sigma_hat"] = fit.rate
    _write_text(out / "trajectory.csv", traj.to_csv())
    _write_json(out / "summary.json", summary)
    return EXIT_OK, f"simulated {len(sched.partition)} samples, m(end)/m(0) = {summary['m_ratio']:.3g}"


def _sweep_f(cfg, out, ctx):
    r = _require(cfg, "r", positive=True)
    grid_cfg = cfg.get("p_grid") or {}
    step = float(grid_cfg.get("step", 0.01))
    p_max = float(grid_cfg.get("p_max", 10.0))
    if not step > 0 or not p_max > 1 + step:
        raise ValidationError("p_grid needs step > 0 and p_max > 1 + step")
    res = f_sweep(r, default_p_grid(step, p_max))
    tau = _optional(cfg, "tau", 1.0, positive=True)
    p = res.argmin_p
    summary = {
        "mode": "sweep-f", "r": r, "argmin_p": p, "min_f": res.min_f, "points": len(res.table),
        "N_star": min_grid_count(scalar_unstable(p, tau), r, scalar_unstable_gamma(p)),
    }
    _write_text(out / "sweep.csv", res.to_csv())
    _write_json(out / "summary.json", summary)
    return EXIT_OK, f"argmin p = {p:g}, f = {res.min_f:.6g}, N* = {summary['N_star']}"


_SUITES = {
    "linear": lambda c, seed, th, tau: linear_bound_sweep(c, seed, threads=th),
    "cubic": lambda c, seed, th, tau: cubic_bound_sweep(c, seed, tau=tau, threads=th),
    "zero": lambda c, seed, th, tau: zero_bound_sweep(c, seed, tau=tau),
}
_DEFAULT_CASES = {"linear": 100, "cubic": 100, "zero": 10}


def _verify_bounds(cfg, out, ctx):
    tau = _optional(cfg, "tau", None, positive=True)
    suites = cfg.get("suites", list(_SUITES))
    if not isinstance(suites, list) or not suites:
        raise ValidationError("'suites' must be a non-empty list")
    reports = []
    for entry in suites:
        entry = {"name": entry} if isinstance(entry, str) else dict(entry)
        name = entry.get("name")
        if name not in _SUITES:
            raise ValidationError(f"unknown suite {name!r}; choose from {sorted(_SUITES)}")
        cases = int(entry.get("cases", _DEFAULT_CASES[name]))
        if cases < 1:
            raise ValidationError("'cases' must be positive")
        suite_tau = float(entry.get("tau", tau or (0.5 if name == "cubic" else 1.0)))
        rep = _SUITES[name](cases, ctx["seed"], ctx["threads"], suite_tau)
        reports.append({"suite": name} | rep.to_dict())
    passed = all(rep["passed"] for rep in reports)
    _write_json(out / "verify_report.json", {"passed": passed, "suites": reports})
    _write_json(out / "summary.json", {
        "mode": "verify-bounds", "passed": passed,
        "violations": {rep["suite"]: sum(rep["violations"].values()) for rep in reports},
    })
    return (EXIT_OK if passed else EXIT_VIOLATION), ("no violations" if passed else "bound violations found")


_HANDLERS = {
    "design-linear": _design_linear,
    "predict": _predict,
    "simulate": _simulate,
    "sweep-f": _sweep_f,
    "verify-bounds": _verify_bounds,
}


# -- entry point -------------------------------------------------------------

def _parser():
    p = argparse.ArgumentParser(prog="predfb", description="Run a predictor-feedback experiment from a JSON config.")
    p.add_argument("config", help="path to the JSON run config")
    p.add_argument("--out", help="output directory (default: config 'out' or <config stem>_out)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
    return p


def load_config(path):
    """Read and minimally check a run config."""
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ValidationError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ValidationError("config must be a JSON object")
    if cfg.get("mode") not in MODES:
        raise ValidationError(f"unknown mode {cfg.get('mode')!r}; choose from {', '.join(MODES)}")
    return cfg


def run(config_path, out=None, seed=None, threads=1, backend=None):
    """Execute one config; returns ``(exit_code, message)``."""
    try:
        cfg = load_config(config_path)
        if seed is not None:
            cfg["seed"] = int(seed)
        if threads < 1:
            raise ValidationError("--threads must be at least 1")
        out_dir = Path(out or cfg.get("out") or Path(config_path).with_name(Path(config_path).stem + "_out"))
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(out_dir / "config.json", cfg)
        ctx = {"seed": int(cfg.get("seed", 0)), "threads": int(threads), "backend": backend}
        return _HANDLERS[cfg["mode"]](cfg, out_dir, ctx)
    except ValidationError as exc:
        return EXIT_INVALID, f"invalid config: {exc}"
    except (NumericalError, FloatingPointError, OverflowError) as exc:
        return EXIT_NUMERIC, f"numerical failure: {exc}"


def main(argv=None):
    args = _parser().parse_args(argv)
    code, message = run(args.config, args.out, args.seed, args.threads)
    print(f"predfb: {message}", file=sys.stderr if code >= EXIT_INVALID else sys.stdout)
    return code


if __name__ == "__main__":
    sys.exit(main())
