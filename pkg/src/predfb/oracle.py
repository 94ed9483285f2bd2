"""Fixed-step RK4 reference solutions with a step-halving error estimate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import NonFiniteStateError, ValidationError
from .input_history import PiecewiseLinearSignal


@dataclass(frozen=True)
class OracleResult:
    """Terminal state of an RK4 run and its Richardson error estimate.

    Attributes
    ----------
    state : ndarray
        State at ``t1`` from the run with ``steps`` steps.
    error_estimate : float
        ``|x_steps - x_{2 steps}|``; ``nan`` if halving was skipped.
    steps : int
        Number of steps of the primary run.
    states : ndarray or None
        States on the coarse grid when requested, shape ``(k, n)``.
    """

    state: np.ndarray
    error_estimate: float
    steps: int
    states: np.ndarray | None = None


def _generic_rk4(sys, x0, sampler, grid, every):
    f = sys.f
    piecewise = isinstance(sampler, PiecewiseLinearSignal)

    def u_at(s, side):
        if piecewise:
            return sampler.value(s, side)
        return np.atleast_1d(np.asarray(sampler(s), dtype=float))

    x = np.array(x0, dtype=float)
    steps = len(grid) - 1
    rows = [x.copy()]
    for i in range(steps):
        t, dt = grid[i], grid[i + 1] - grid[i]
        ua, um, ub = u_at(t, "right"), u_at(t + 0.5 * dt, "right"), u_at(grid[i + 1], "left")
        k1 = np.asarray(f(x, ua), dtype=float)
        k2 = np.asarray(f(x + 0.5 * dt * k1, um), dtype=float)
        k3 = np.asarray(f(x + 0.5 * dt * k2, um), dtype=float)
        k4 = np.asarray(f(x + dt * k3, ub), dtype=float)
        x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise NonFiniteStateError(f"oracle state became non-finite at step {i}", step=i, time=grid[i + 1])
        if (i + 1) % every == 0 or i + 1 == steps:
            rows.append(x.copy())
    return np.array(rows)


def rk4_states(sys, x0, sampler, t0, t1, steps, every=1, backend=None):
    """RK4 states on ``linspace(t0, t1, steps + 1)``, kept every ``every`` steps.

    ``sampler`` is a callable ``s -> u`` or a :class:`PiecewiseLinearSignal`;
    the latter, combined with a system carrying an ``affine_form``, runs in
    the compiled kernel.
    """
    if steps < 1:
        raise ValidationError("steps must be at least 1")
    if not t1 >= t0:
        raise ValidationError("t1 must not precede t0")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    grid = np.linspace(t0, t1, int(steps) + 1)
    if sys.affine_form is not None and isinstance(sampler, PiecewiseLinearSignal):
        out, fail = kernels.rk4_affine_grid(
            sys.affine_form, x0, grid, sampler.times, sampler.values, 0.0, int(every), backend=backend
        )
        if fail >= 0:
            raise NonFiniteStateError(
                f"oracle state became non-finite at step {fail}", step=fail, time=grid[fail + 1]
            )
        return out
    return _generic_rk4(sys, x0, sampler, grid, int(every))


def rk4_reference(sys, x0, sampler, t0, t1, steps, halving=True, every=None, backend=None):
    """Classical RK4 from ``t0`` to ``t1`` with ``steps`` equal steps.

    Parameters
    ----------
    sys : NonlinearSystem
    x0 : array_like
    sampler : callable or PiecewiseLinearSignal
        Input as a function of absolute time on ``[t0, t1]``.
    steps : int
    halving : bool
        Also run with ``2 * steps`` and report the difference as the error
        estimate.
    every : int, optional
        Keep coarse-grid states every ``every`` steps in ``result.states``.

    Returns
    -------
    OracleResult
    """
    keep = every if every is not None else int(steps)
    coarse = rk4_states(sys, x0, sampler, t0, t1, steps, keep, backend)
    state = coarse[-1]
    est = float("nan")
    if halving:
        fine = rk4_states(sys, x0, sampler, t0, t1, 2 * int(steps), 2 * int(steps), backend)
        est = float(np.linalg.norm(state - fine[-1]))
    return OracleResult(state=state, error_estimate=est, steps=int(steps),
                        states=coarse if every is not None else None)


def order_ratio(sys, x0, sampler, t0, t1, steps):
    """Ratio of Richardson estimates ``E(2 steps) / E(steps)``; about 1/16 for RK4."""
    a = rk4_reference(sys, x0, sampler, t0, t1, steps)
    b = rk4_reference(sys, x0, sampler, t0, t1, 2 * steps)
    return b.error_estimate / a.error_estimate
