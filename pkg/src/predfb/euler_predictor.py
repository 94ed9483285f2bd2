"""Explicit Euler scheme with inputs, the predictor mapping and its grid count.

One Euler step freezes the state and integrates the vector field exactly in
the input::

    x_{i+1} = x_i + int_{ih}^{(i+1)h} f(x_i, u(s)) ds,   h = tau / N.

For systems with an :class:`~predfb.system_model.AffinePolyForm` the integral
splits into ``h g(x_i) + B int u`` and the loop runs in the compiled kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from . import kernels
from .errors import GridCountOverflow, NonFiniteStateError, ValidationError
from .input_history import InputHistory, InputWindow
from .lyapunov_design import _batched, _batched_scalar

N_MAX_DEFAULT = 10**7
_CHUNK = 1 << 20


@dataclass(frozen=True)
class PredictorOutput:
    """Result of one prediction.

    ``state_bound`` is ``min(accuracy_target + a_tau(s), Q(s))`` with
    ``s = |x0| + ||u||``.
    """

    z: np.ndarray
    N: int
    h: float
    apriori_bound: float
    accuracy_target: float
    state_bound: float
    s: float

    def to_record(self):
        return {
            "z": [float(v) for v in self.z],
            "N": int(self.N),
            "h": float(self.h),
            "apriori_bound": float(self.apriori_bound),
            "accuracy_target": float(self.accuracy_target),
        }


@dataclass(frozen=True)
class EulerRun:
    """Stored Euler trajectory with the window that drove it."""

    states: np.ndarray
    window: InputWindow
    N: int
    h: float

    @property
    def tau(self):
        return self.window.tau


def _edges(tau, N, lo, hi):
    return tau * (np.arange(lo, hi + 1, dtype=float) / N)


def euler_trajectory(sys, x0, window: InputWindow, N, store=True, backend=None):
    """States ``x_0 .. x_N`` of the Euler scheme over the re-based window.

    Returns an ``(N + 1, n)`` array, or only the final state (shape ``(1, n)``)
    when ``store`` is false.
    """
    N = int(N)
    if N < 1:
        raise ValidationError("N must be at least 1")
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    if x.shape != (sys.n,):
        raise ValidationError(f"x0 must have length {sys.n}")
    if window.m != sys.m:
        raise ValidationError(f"input window has {window.m} channels, system expects {sys.m}")
    tau = window.tau
    h = tau / N
    rows = [x[None, :]] if store else None
    for lo in range(0, N, _CHUNK):
        hi = min(N, lo + _CHUNK)
        edges = _edges(tau, N, lo, hi)
        if sys.affine_form is not None:
            U = window.step_integrals(edges)
            out, fail = kernels.euler_affine(sys.affine_form, x, h, U, store, backend)
        else:
            out, fail = _generic_chunk(sys, x, window, edges, store)
        if fail >= 0:
            step = lo + fail
            raise NonFiniteStateError(f"Euler state became non-finite at step {step}", step=step, time=edges[fail + 1])
        x = out[-1].copy()
        if store:
            rows.append(out[1:])
    if store:
        return np.vstack(rows)
    return x[None, :]


def _generic_chunk(sys, x, window, edges, store):
    times, values, offsets = window.step_nodes(edges)
    steps = len(edges) - 1
    out = np.empty((steps + 1 if store else 1, sys.n))
    if store:
        out[0] = x
    for i in range(steps):
        a, b = offsets[i], offsets[i + 1]
        fv = np.array([sys.f(x, values[k]) for k in range(a, b)], dtype=float)
        dt = np.diff(times[a:b])
        x = x + np.sum(dt[:, None] * (fv[1:] + fv[:-1]) * 0.5, axis=0)
        if not np.all(np.isfinite(x)):
            return out, i
        if store:
            out[i + 1] = x
    if not store:
        out[0] = x
    return out, -1


def grid_count(pack, R, x0_norm, u_sup, n_max=N_MAX_DEFAULT):
    """Grid count ``N`` that keeps the a-priori error below ``R(s)``, ``s = x0_norm + u_sup``.

    ``N = 1 + floor(tau * max(B(s)(e^{tau A(s)} - 1) / (2 R(s) A(s)), P(Q(s) + u_sup) / (2c)))``
    for ``s > 0`` and ``N = 1`` for ``s = 0``.

    Raises
    ------
    GridCountOverflow
        If the required ``N`` exceeds ``n_max``.
    """
    if x0_norm < 0 or u_sup < 0:
        raise ValidationError("norms must be nonnegative")
    s = float(x0_norm) + float(u_sup)
    if s == 0.0:
        return 1
    tau = pack.tau
    log_target = _log_accuracy(R, s)
    if not log_target > -math.inf:
        raise ValidationError(f"accuracy target R({s:g}) is not positive")
    A = pack.A(s)
    log_accuracy = (math.log(pack.B(s)) + _log_expm1(tau * A) - math.log(2.0 * A) - log_target)
    stability = pack.P(pack.Q(s) + u_sup) / (2.0 * pack.c)
    log_value = math.log(tau) + max(log_accuracy, math.log(stability) if stability > 0 else -math.inf)
    if not log_value < math.log(n_max):
        required = math.exp(log_value) if log_value < 709.0 else math.inf
        raise GridCountOverflow(math.floor(required) + 1 if math.isfinite(required) else required, n_max)
    value = math.exp(log_value)
    return int(math.floor(value)) + 1


def _log_expm1(v):
    return math.log(math.expm1(v)) if v < 700.0 else v + math.log1p(-math.exp(-v))


def _log_accuracy(R, s):
    """``log R(s)``, using the design's log form when it has one."""
    log_fn = getattr(R, "log_R", None)
    if log_fn is not None:
        return float(log_fn(s))
    value = float(R(s))
    return math.log(value) if value > 0 else -math.inf


def apriori_bound(pack, s, N):
    """``tau B(s) / (2 N A(s)) (e^{tau A(s)} - 1)``."""
    A = pack.A(s)
    return pack.tau * pack.B(s) / (2.0 * N * A) * math.expm1(pack.tau * A)


def _window(hist, t):
    if isinstance(hist, InputWindow):
        return hist
    if isinstance(hist, InputHistory):
        return hist.window(t)
    raise ValidationError("expected an InputHistory or InputWindow")


def predict(sys, pack, R, x0, hist, t, n_max=N_MAX_DEFAULT, force_N=None, backend=None):
    """Predicted state ``tau`` seconds ahead from ``x0`` and the window ``[t - tau, t)``.

    Parameters
    ----------
    R : callable
        Accuracy function.
    hist : InputHistory or InputWindow
        An ``InputWindow`` is used as is (``t`` is then ignored).
    force_N : int, optional
        Override the grid count (diagnostics and adversarial runs).
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    window = _window(hist, t)
    if abs(window.tau - pack.tau) > 1e-12 * pack.tau:
        raise ValidationError("window length differs from the delay of the bounds pack")
    x_norm = float(np.linalg.norm(x0))
    u_sup = window.norm
    s = x_norm + u_sup
    N = int(force_N) if force_N is not None else grid_count(pack, R, x_norm, u_sup, n_max)
    z = euler_trajectory(sys, x0, window, N, store=False, backend=backend)[0]
    target = float(R(s))
    return PredictorOutput(
        z=z,
        N=N,
        h=window.tau / N,
        apriori_bound=apriori_bound(pack, s, N),
        accuracy_target=target,
        state_bound=min(target + pack.cc.a_tau(s), pack.Q(s)),
        s=s,
    )


def euler_run(sys, x0, window, N, backend=None):
    """Euler trajectory packaged for :func:`lemma_oracles`."""
    states = euler_trajectory(sys, x0, window, N, store=True, backend=backend)
    return EulerRun(states=states, window=window, N=int(N), h=window.tau / int(N))


@dataclass
class OracleReport:
    """Worst slack (right-hand side minus left-hand side) per inequality along a run."""

    w_slack: float
    error_slack: float
    state_slack: float
    w_violations: int
    error_violations: int
    state_violations: int
    steps: int

    @property
    def passed(self):
        return self.w_violations == 0 and self.error_violations == 0 and self.state_violations == 0

    def to_dict(self):
        return {k: (float(v) if isinstance(v, float) else v) for k, v in self.__dict__.items()} | {
            "passed": self.passed
        }


def _w_forcing(cc, window, N, h):
    """``J_i = int_{ih}^{(i+1)h} e^{2c((i+1)h - s)} p(|u(s)|) ds`` by Simpson per cell."""
    tau, c = window.tau, cc.c
    edges = tau * (np.arange(N + 1, dtype=float) / N)
    a, b = edges[:-1], edges[1:]
    ua = np.linalg.norm(window.value(a, "right"), axis=-1)
    um = np.linalg.norm(window.value(0.5 * (a + b), "right"), axis=-1)
    ub = np.linalg.norm(window.value(b, "left"), axis=-1)
    pa, pm, pb = (_batched_scalar(cc.p, v) for v in (ua, um, ub))
    dt = b - a
    return dt / 6.0 * (np.exp(2 * c * dt) * pa + 4.0 * np.exp(c * dt) * pm + pb)


def lemma_oracles(sys, pack, run: EulerRun, reference, budget=0.0):
    """Check the W growth bound, the global error bound and the state bound along ``run``.

    Parameters
    ----------
    reference : ndarray
        Oracle states at the grid points ``ih``, shape ``(N + 1, n)``.
    budget : float
        Oracle error allowance added to the error bound.

    Raises
    ------
    ValidationError
        If the step size is too large for the bounds to apply.
    """
    cc = pack.cc
    window, N, h = run.window, run.N, run.h
    x = run.states
    reference = np.asarray(reference, dtype=float).reshape(x.shape)
    x0 = x[0]
    u_sup = window.norm
    s = float(np.linalg.norm(x0)) + u_sup
    if s > 0:
        h_max = 2.0 * pack.c / pack.P(pack.Q(s) + u_sup)
        if h > h_max * (1 + 1e-12):
            raise ValidationError(f"step {h:.6g} exceeds the admissible {h_max:.6g}")
    i = np.arange(N + 1, dtype=float)
    eps = np.finfo(float).eps

    W = _batched(cc.W, x)
    J = _w_forcing(cc, window, N, h)
    I = np.concatenate([[0.0], lfilter([1.0], [1.0, -math.exp(2 * cc.c * h)], J)])
    w_rhs = np.exp(2 * cc.c * h * i) * float(W[0]) + I
    w_gap = w_rhs - W
    w_tol = 1e-12 * np.maximum(1.0, np.abs(w_rhs))

    err = np.linalg.norm(x - reference, axis=1)
    if s > 0:
        A = pack.A(s)
        e_rhs = 0.5 * h * h * pack.B(s) * np.expm1(i * h * A) / math.expm1(h * A)
    else:
        e_rhs = np.zeros(N + 1)
    # rounding in the recursion grows at most linearly in the step count
    round_tol = 4.0 * eps * (i + 1) * max(1.0, float(np.max(np.abs(x))))
    e_gap = e_rhs + budget + round_tol - err

    Q = pack.Q(s)
    q_gap = Q - np.linalg.norm(x, axis=1)

    return OracleReport(
        w_slack=float(np.min(w_gap)),
        error_slack=float(np.min(e_gap)),
        state_slack=float(np.min(q_gap)),
        w_violations=int(np.sum(w_gap < -w_tol)),
        error_violations=int(np.sum(e_gap < 0)),
        state_violations=int(np.sum(q_gap < -1e-12 * Q)),
        steps=N,
    )
