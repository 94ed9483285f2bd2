"""Bound-dominance sweeps against the RK4 oracle."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .euler_predictor import apriori_bound, euler_run, grid_count, lemma_oracles
from .input_history import InputWindow
from .linear_design import linear_error_bound, linear_predict
from .oracle import rk4_reference, rk4_states
from .system_model import LinearSystem, linear_as_nonlinear, zero_system
from .worked import cubic_certificates
from .lyapunov_design import build_bounds_pack
from .system_model import cubic_system

LINEAR_N_CHOICES = tuple(8 * 2**k for k in range(6))


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def random_window(rng, tau, m, sup, knots=16):
    """Piecewise-linear input on ``[0, tau]`` whose largest node norm is exactly ``sup``."""
    t = np.linspace(0.0, tau, knots + 1)
    vals = rng.uniform(-1.0, 1.0, (knots + 1, m))
    peak = np.max(np.linalg.norm(vals, axis=1))
    vals = vals * (sup / peak) if peak > 0 else vals
    return InputWindow(t, vals, tau)


@dataclass
class SweepReport:
    """Per-bound minimum slack and violation counts over a sweep."""

    name: str
    cases: int = 0
    violations: dict = field(default_factory=dict)
    min_slack: dict = field(default_factory=dict)
    details: list = field(default_factory=list)

    def add(self, bound, slack, violated):
        self.min_slack[bound] = min(self.min_slack.get(bound, math.inf), float(slack))
        self.violations[bound] = self.violations.get(bound, 0) + int(bool(violated))

    @property
    def passed(self):
        return all(v == 0 for v in self.violations.values())

    def to_dict(self):
        return {
            "name": self.name,
            "cases": self.cases,
            "violations": dict(sorted(self.violations.items())),
            "min_slack": {k: float(v) for k, v in sorted(self.min_slack.items())},
            "passed": self.passed,
        }


def _linear_case(seed, oracle_steps):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(-2.0, 2.0, 2)
    tau = 1.0
    N = int(rng.choice(LINEAR_N_CHOICES))
    x0 = rng.uniform(-1.0, 1.0, 1)
    window = random_window(rng, tau, 1, rng.uniform(0.0, 1.0))
    lin = LinearSystem(A=[[a]], B=[[b]], K=[[0.0]], tau=tau)
    z = linear_predict(lin, x0, window, 0.0, N)
    ref = rk4_reference(linear_as_nonlinear(lin), x0, window, 0.0, tau, oracle_steps)
    err = float(np.linalg.norm(z - ref.state))
    bound = linear_error_bound(abs(a), abs(b), tau, N, float(abs(x0[0])), window.norm)
    return {"a": float(a), "b": float(b), "N": N, "error": err, "bound": bound, "budget": ref.error_estimate}


def linear_bound_sweep(cases=100, seed=0, oracle_steps=10**5, threads=1):
    """Euler error of random scalar linear predictions against the linear error bound."""
    seeds = [seed * 100_003 + k for k in range(cases)]
    rows = _map(lambda s: _linear_case(s, oracle_steps), seeds, threads)
    rep = SweepReport("linear_error_bound", cases=cases)
    for row in rows:
        slack = row["bound"] + row["budget"] - row["error"]
        rep.add("linear_error_bound", row["bound"] - row["error"], slack < 0)
        rep.details.append(row)
    return rep


def oracle_refinement(N, budget_steps=2 * 10**6, max_factor=1000):
    """Oracle sub-steps per Euler step: up to ``max_factor`` while the total stays near ``budget_steps``."""
    return int(max(1, min(max_factor, budget_steps // N)))


def check_prediction(sys, pack, x0, window, N, backend=None):
    """Run Euler, the oracle on the same grid and every bound check for one case."""
    run = euler_run(sys, x0, window, N, backend=backend)
    k = oracle_refinement(N)
    coarse = rk4_states(sys, x0, window, 0.0, window.tau, N * k, every=k, backend=backend)
    fine = rk4_states(sys, x0, window, 0.0, window.tau, 2 * N * k, every=2 * k, backend=backend)
    budget = float(np.max(np.linalg.norm(coarse - fine, axis=1))) + 1e-12
    s = float(np.linalg.norm(x0)) + window.norm
    bound = apriori_bound(pack, s, N) if s > 0 else 0.0
    err = float(np.linalg.norm(run.states[-1] - coarse[-1]))
    report = lemma_oracles(sys, pack, run, coarse, budget=budget)
    return {
        "s": s, "N": N, "error": err, "apriori_bound": bound, "budget": budget,
        "oracle_factor": k, "lemma": report,
    }


def cubic_bound_sweep(cases=100, seed=0, tau=0.5, accuracy=None, n_max=2 * 10**7, s_max=1.0,
                      threads=1, backend=None):
    """A-priori bound, state bound and per-step inequalities on random cubic predictions.

    ``accuracy`` is the target fed to the grid count (default ``R(s) = s``).
    """
    sys = cubic_system()
    cc, _ = cubic_certificates(tau, tau)
    pack = build_bounds_pack(cc, sys.L, tau)
    accuracy = accuracy or (lambda s: s)

    def one(k):
        rng = np.random.default_rng(seed * 100_003 + k)
        s = s_max * (1.0 - rng.random())
        w = rng.random()
        x0 = np.array([rng.choice([-1.0, 1.0]) * w * s])
        window = random_window(rng, tau, 1, (1.0 - w) * s)
        N = grid_count(pack, accuracy, abs(x0[0]), window.norm, n_max)
        row = check_prediction(sys, pack, x0, window, N, backend)
        row["target"] = float(accuracy(row["s"]))
        return row

    rows = _map(one, range(cases), threads)
    rep = SweepReport("cubic_predictor", cases=cases)
    for row in rows:
        lem = row["lemma"]
        rep.add("apriori_bound", row["apriori_bound"] - row["error"],
                row["error"] > row["apriori_bound"] + row["budget"])
        rep.add("apriori_le_target", row["target"] - row["apriori_bound"], row["apriori_bound"] > row["target"])
        rep.add("state_bound", lem.state_slack, lem.state_violations > 0)
        rep.add("w_growth", lem.w_slack, lem.w_violations > 0)
        rep.add("step_error", lem.error_slack, lem.error_violations > 0)
        rep.details.append({k: v for k, v in row.items() if k != "lemma"} | {"lemma": lem.to_dict()})
    return rep


def zero_bound_sweep(cases=10, seed=0, tau=1.0):
    """Degenerate sweep: zero dynamics, zero data; every slack is exactly zero."""
    sys = zero_system()
    cc, _ = cubic_certificates(tau, tau)
    pack = build_bounds_pack(cc, lambda s: 1.0, tau)
    rep = SweepReport("zero_system", cases=cases)
    rng = np.random.default_rng(seed)
    for _ in range(cases):
        N = int(rng.integers(1, 64))
        window = InputWindow([0.0, tau], [[0.0], [0.0]], tau)
        run = euler_run(sys, np.zeros(1), window, N)
        lem = lemma_oracles(sys, pack, run, np.zeros((N + 1, 1)))
        rep.add("state_bound", lem.state_slack, lem.state_violations > 0)
        rep.add("w_growth", lem.w_slack, lem.w_violations > 0)
        rep.add("step_error", lem.error_slack, lem.error_violations > 0)
    return rep
