"""Hybrid sampled-data closed loop with predictor feedback.

At every sampling time ``T_i`` the controller state is reset to the predicted
state ``z_N``; in between it follows ``z' = f(z, k(z))`` and the applied input
is ``u = k(z)``. The plant ``x'(t) = f(x(t), u(t - tau))`` reads the delayed
input from an :class:`InputHistory`.

Time grid
---------
All integration happens on one global grid. Its breakpoints are the points
``T_i + j tau`` (including the horizon end) that fall in ``[-tau, t_end]``,
each gap being split into equal steps no longer than ``1 / plant_steps_per_unit``.
Because the breakpoint set is invariant under shifts by ``tau``, the plant's
RK4 steps line up with the controller's: stage inputs read stored nodes and
stored midpoints (cubic Hermite values of ``z``), never interpolated ones.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import NonFiniteStateError, ValidationError
from .euler_predictor import N_MAX_DEFAULT, predict
from .input_history import InputHistory, PiecewiseLinearSignal
from .lyapunov_design import _batched
from .linear_design import linear_predict
from .system_model import AffinePolyForm, LinearSystem, NonlinearSystem, linear_as_nonlinear

_SNAP = 1e-9
FIT_FRACTION = 0.6
FIT_FLOOR = 1e-14
ENVELOPE_SLACK = 0.1


@dataclass(frozen=True)
class SamplingSchedule:
    """Sampling instants ``T_0 = 0 < T_1 < ...`` with gaps at most ``r``."""

    partition: np.ndarray
    r: float
    kind: str = "uniform"

    def __post_init__(self):
        T = np.asarray(self.partition, dtype=float)
        if T.size == 0 or T[0] != 0.0:
            raise ValidationError("partition must start at T_0 = 0")
        gaps = np.diff(T)
        if np.any(gaps <= 0):
            raise ValidationError("partition must be strictly increasing")
        if np.any(gaps > self.r * (1 + 1e-12)):
            raise ValidationError("partition gap exceeds r")
        object.__setattr__(self, "partition", T)

    @property
    def horizon(self):
        return float(self.partition[-1])


def make_schedule(kind, r, horizon, seed=0):
    """Uniform, jittered (gaps in ``[r/2, r]``) or seeded-random (gaps in ``(0, r]``) partition."""
    if not r > 0:
        raise ValidationError("r must be positive")
    if not horizon > 0:
        raise ValidationError("horizon must be positive")
    if kind == "uniform":
        count = int(math.ceil(horizon / r - 1e-9))
        return SamplingSchedule(r * np.arange(count + 1, dtype=float), r, kind)
    rng = np.random.default_rng(seed)
    times = [0.0]
    while times[-1] < horizon:
        if kind == "jittered":
            gap = rng.uniform(0.5 * r, r)
        elif kind == "seeded-random":
            gap = r * (1.0 - rng.random())
        else:
            raise ValidationError(f"unknown schedule kind {kind!r}")
        times.append(times[-1] + gap)
    return SamplingSchedule(np.array(times), r, kind)


@dataclass
class Trajectory:
    """Logged closed-loop run on the global grid.

    ``u`` holds the right-continuous applied input; ``u_signal`` is the full
    input record from ``-tau`` on, including jumps and midpoints.
    """

    t: np.ndarray
    x: np.ndarray
    z: np.ndarray
    u: np.ndarray
    is_sample: np.ndarray
    N_used: np.ndarray
    tau: float
    u_signal: PiecewiseLinearSignal
    samples: list = field(default_factory=list)
    sample_times: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def m_values(self):
        """``m(t) = |x(t)| + sup_{[t - tau, t)} |u|`` on the log grid."""
        return np.linalg.norm(self.x, axis=1) + self.u_signal.sup_norms(self.t, self.tau)

    def state_at(self, s):
        return np.array([np.interp(s, self.t, self.x[:, j]) for j in range(self.x.shape[1])])

    def to_csv(self):
        n, m = self.x.shape[1], self.u.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x_{j + 1}" for j in range(n)] + [f"z_{j + 1}" for j in range(n)]
                   + [f"u_{j + 1}" for j in range(m)] + ["is_sample_instant", "N_used"])
        for k in range(len(self.t)):
            w.writerow([repr(float(self.t[k]))]
                       + [repr(float(v)) for v in self.x[k]]
                       + [repr(float(v)) for v in self.z[k]]
                       + [repr(float(v)) for v in self.u[k]]
                       + [int(self.is_sample[k]), int(self.N_used[k])])
        return buf.getvalue()

    @classmethod
    def from_arrays(cls, t, x, u, tau, z=None):
        """Wrap plain arrays (for instance synthetic signals) as a trajectory."""
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float).reshape(len(t), -1)
        u = np.asarray(u, dtype=float).reshape(len(t), -1)
        pre_t = np.array([t[0] - tau])
        sig = PiecewiseLinearSignal(np.concatenate([pre_t, t]), np.vstack([u[:1], u]))
        return cls(t=t, x=x, z=x.copy() if z is None else np.asarray(z, dtype=float), u=u,
                   is_sample=np.zeros(len(t), bool), N_used=np.zeros(len(t), int),
                   tau=float(tau), u_signal=sig)


# -- grid construction ---------------------------------------------------

def _breakpoints(T, tau, t_end):
    anchors = np.append(T[T < t_end - _SNAP], t_end)
    k_lo = np.floor((-tau - anchors) / tau) - 1
    k_hi = np.ceil((t_end - anchors) / tau) + 1
    vals, prio = [], []
    for a, lo, hi in zip(anchors, k_lo, k_hi):
        ks = np.arange(int(lo), int(hi) + 1)
        v = a + ks * tau
        keep = (v >= -tau - _SNAP) & (v <= t_end + _SNAP)
        vals.append(v[keep])
        prio.append((ks[keep] != 0).astype(int))
    vals = np.concatenate(vals + [[-tau, t_end]])
    prio = np.concatenate(prio + [[0, 0]])
    order = np.lexsort((prio, vals))
    vals, prio = vals[order], prio[order]
    out = []
    i = 0
    while i < len(vals):
        j = i
        while j + 1 < len(vals) and vals[j + 1] - vals[i] <= _SNAP:
            j += 1
        cluster = slice(i, j + 1)
        exact = np.nonzero(prio[cluster] == 0)[0]
        out.append(vals[cluster][exact[0]] if len(exact) else vals[i])
        i = j + 1
    pts = np.array(out)
    pts[0], pts[-1] = -tau, t_end
    return pts[(pts >= -tau) & (pts <= t_end)]


def _subdivide(points, steps_per_unit):
    parts = [points[:1]]
    for a, b in zip(points[:-1], points[1:]):
        n = max(1, int(math.ceil((b - a) * steps_per_unit - 1e-9)))
        inner = a + (b - a) * (np.arange(1, n, dtype=float) / n)
        parts.append(inner)
        parts.append([b])
    return np.concatenate(parts)


def default_steps_per_unit(tau, r):
    return max(1000, int(math.ceil(1000.0 / min(tau, r) - 1e-9)))


# -- building blocks -------------------------------------------------------

class _Loop:
    """Shared machinery of the nonlinear and linear loops."""

    def __init__(self, sys: NonlinearSystem, tau, sched, t_end, steps_per_unit, backend):
        if not t_end >= tau:
            raise ValidationError("t_end must be at least tau")
        if sched.partition[-1] < t_end - _SNAP and sched.partition[-1] + sched.r < t_end:
            raise ValidationError("sampling schedule does not cover the horizon")
        self.sys = sys
        self.tau = float(tau)
        self.t_end = float(t_end)
        self.backend = backend
        self.spu = int(steps_per_unit) if steps_per_unit else default_steps_per_unit(tau, sched.r)
        if self.spu < 1:
            raise ValidationError("plant_steps_per_unit must be positive")
        T = sched.partition
        self.T = np.append(T[T < self.t_end - _SNAP], self.t_end)
        self.grid = _subdivide(_breakpoints(T, self.tau, self.t_end), self.spu)
        self.dt = 1.0 / self.spu
        self.hist = InputHistory(self.tau, sys.m, dt_rec=self.dt * (1 + 1e-9),
                                 retention=2 * self.tau + 2 * sched.r)
        self.log_u_t, self.log_u_v = [], []
        form = sys.affine_form
        K = sys.feedback_gain
        self.closed_form = None
        if form is not None and K is not None:
            self.closed_form = AffinePolyForm(form.A + form.B @ K, np.zeros((sys.n, 1)), form.powers, form.coeffs)

    def _index(self, t):
        i = int(np.searchsorted(self.grid, t - _SNAP))
        if abs(self.grid[i] - t) > _SNAP:
            raise RuntimeError("time not on grid")  # pragma: no cover - construction guarantees it
        return i

    def _feedback(self, Z):
        if self.sys.feedback_gain is not None:
            return Z @ self.sys.feedback_gain.T
        return np.array([np.atleast_1d(self.sys.k(z)) for z in Z], dtype=float).reshape(len(Z), self.sys.m)

    def _closed_rhs(self, Z):
        if self.closed_form is not None:
            cf = self.closed_form
            out = Z @ cf.A.T
            for p, c in zip(cf.powers, cf.coeffs):
                out = out + c * Z**p
            return out
        U = self._feedback(Z)
        return np.array([self.sys.f(z, u) for z, u in zip(Z, U)], dtype=float)

    def preload(self, u0):
        i1 = self._index(0.0)
        g = self.grid[: i1 + 1]
        mids = 0.5 * (g[:-1] + g[1:])
        ts = np.empty(2 * len(g) - 1)
        ts[0::2], ts[1::2] = g, mids
        vals = np.array([np.atleast_1d(np.asarray(u0(s), dtype=float)) for s in ts]).reshape(len(ts), self.sys.m)
        self.hist.record(ts[0], ts[-1], list(zip(ts, vals)))
        self.log_u_t.append(ts)
        self.log_u_v.append(vals)

    def controller(self, z0, ia, ib):
        grid = self.grid[ia: ib + 1]
        if self.closed_form is not None:
            Z, fail = kernels.rk4_affine_grid(self.closed_form, z0, grid, np.array([0.0, 1.0]),
                                              np.zeros((2, 1)), 0.0, 1, backend=self.backend)
        else:
            Z, fail = _rk4_generic(lambda t, z: self.sys.f(z, self.sys.k(z)), z0, grid)
        if fail >= 0:
            raise NonFiniteStateError(f"controller state non-finite at t={grid[fail + 1]:.6g}",
                                      step=fail, time=grid[fail + 1])
        F = self._closed_rhs(Z)
        dt = np.diff(grid)[:, None]
        Zm = 0.5 * (Z[:-1] + Z[1:]) + dt / 8.0 * (F[:-1] - F[1:])
        U, Um = self._feedback(Z), self._feedback(Zm)
        ts = np.empty(2 * len(grid) - 1)
        ts[0::2], ts[1::2] = grid, 0.5 * (grid[:-1] + grid[1:])
        vals = np.empty((len(ts), self.sys.m))
        vals[0::2], vals[1::2] = U, Um
        self.hist.record(ts[0], ts[-1], list(zip(ts, vals)))
        self.log_u_t.append(ts)
        self.log_u_v.append(vals)
        return Z, U

    def plant(self, x0, ia, ib):
        grid = self.grid[ia: ib + 1]
        tn, un = self.hist.nodes()
        ts = tn + self.tau
        j = np.clip(np.searchsorted(self.grid, ts), 1, len(self.grid) - 1)
        near = np.where(np.abs(self.grid[j - 1] - ts) <= np.abs(self.grid[j] - ts), j - 1, j)
        snap = np.abs(self.grid[near] - ts) <= _SNAP
        ts = np.where(snap, self.grid[near], ts)
        if self.sys.affine_form is not None:
            X, fail = kernels.rk4_affine_grid(self.sys.affine_form, x0, grid, ts, un, 0.0, 1, backend=self.backend)
        else:
            sig = PiecewiseLinearSignal(ts, un)
            X, fail = _rk4_generic(lambda t, x, side="right": self.sys.f(x, sig.value(t, side)), x0, grid,
                                   sided=True)
        if fail >= 0:
            raise NonFiniteStateError(f"plant state non-finite at t={grid[fail + 1]:.6g}",
                                      step=fail, time=grid[fail + 1])
        return X

    def run(self, x0, predictor):
        n = self.sys.n
        x = np.atleast_1d(np.asarray(x0, dtype=float))
        if x.shape != (n,):
            raise ValidationError(f"x0 must have length {n}")
        rows_t, rows_x, rows_z, rows_u, rows_s, rows_n = [], [], [], [], [], []
        records = []
        for Ta, Tb in zip(self.T[:-1], self.T[1:]):
            ia, ib = self._index(Ta), self._index(Tb)
            z0, N, record = predictor(x, Ta, self.hist)
            record["time"] = float(Ta)
            record["x"] = [float(v) for v in x]
            records.append(record)
            Z, U = self.controller(z0, ia, ib)
            X = self.plant(x, ia, ib)
            k = ib - ia
            rows_t.append(self.grid[ia:ib])
            rows_x.append(X[:k])
            rows_z.append(Z[:k])
            rows_u.append(U[:k])
            flag = np.zeros(k, bool)
            flag[0] = True
            rows_s.append(flag)
            rows_n.append(np.full(k, N, dtype=np.int64))
            x = X[-1].copy()
            last = (Z[-1], U[-1], N)
        rows_t.append([self.t_end])
        rows_x.append(x[None, :])
        rows_z.append(last[0][None, :])
        rows_u.append(last[1][None, :])
        rows_s.append(np.zeros(1, bool))
        rows_n.append(np.array([last[2]], dtype=np.int64))
        u_sig = PiecewiseLinearSignal(np.concatenate(self.log_u_t), np.vstack(self.log_u_v))
        return Trajectory(
            t=np.concatenate(rows_t), x=np.vstack(rows_x), z=np.vstack(rows_z), u=np.vstack(rows_u),
            is_sample=np.concatenate(rows_s), N_used=np.concatenate(rows_n), tau=self.tau,
            u_signal=u_sig, samples=records, sample_times=self.T[:-1].copy(),
        )


def _rk4_generic(rhs, x0, grid, sided=False):
    x = np.array(x0, dtype=float)
    out = np.empty((len(grid), len(x)))
    out[0] = x
    for i in range(len(grid) - 1):
        t, dt = grid[i], grid[i + 1] - grid[i]
        if sided:
            k1 = np.asarray(rhs(t, x, "right"))
            k2 = np.asarray(rhs(t + 0.5 * dt, x + 0.5 * dt * k1, "right"))
            k3 = np.asarray(rhs(t + 0.5 * dt, x + 0.5 * dt * k2, "right"))
            k4 = np.asarray(rhs(grid[i + 1], x + dt * k3, "left"))
        else:
            k1 = np.asarray(rhs(t, x))
            k2 = np.asarray(rhs(t + 0.5 * dt, x + 0.5 * dt * k1))
            k3 = np.asarray(rhs(t + 0.5 * dt, x + 0.5 * dt * k2))
            k4 = np.asarray(rhs(grid[i + 1], x + dt * k3))
        x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            return out, i
        out[i + 1] = x
    return out, -1


def _as_u0(u0, m):
    if isinstance(u0, InputHistory):
        sig = u0.signal()
        return lambda s: sig.value(min(s, sig.end), "left" if s >= sig.end else "right")
    if callable(u0):
        return u0
    value = np.zeros(m) if u0 is None else np.atleast_1d(np.asarray(u0, dtype=float))
    if value.shape != (m,):
        raise ValidationError(f"u0 must have length {m}")
    return lambda s: value


def simulate_nonlinear(sys, pack, design, sched, tau, x0, u0=None, t_end=30.0, plant_steps_per_unit=None,
                       n_max=N_MAX_DEFAULT, force_N=None, backend=None) -> Trajectory:
    """Closed loop with the Euler predictor and accuracy-driven grid counts.

    Parameters
    ----------
    design : callable
        Accuracy function ``R`` (a :class:`~predfb.lyapunov_design.DerivedDesign` works).
    u0 : None, array_like, callable or InputHistory
        Initial input on ``[-tau, 0)``; ``None`` means zero.
    force_N : int, optional
        Use this grid count at every sample instead of the accuracy-driven one.
    """
    if abs(pack.tau - tau) > 1e-12 * tau:
        raise ValidationError("bounds pack was built for a different delay")
    loop = _Loop(sys, tau, sched, t_end, plant_steps_per_unit, backend)
    loop.preload(_as_u0(u0, sys.m))

    def predictor(x, t, hist):
        out = predict(sys, pack, design, x, hist, t, n_max=n_max, force_N=force_N, backend=backend)
        return out.z, out.N, out.to_record()

    return loop.run(x0, predictor)


def simulate_linear(lin: LinearSystem, N, sched, x0, u0=None, t_end=30.0, plant_steps_per_unit=None,
                    backend=None) -> Trajectory:
    """Closed loop for ``x'(t) = A x(t) + B u(t - tau)`` with a fixed grid count ``N``."""
    if int(N) < 1:
        raise ValidationError("N must be at least 1")
    sys = linear_as_nonlinear(lin)
    loop = _Loop(sys, lin.tau, sched, t_end, plant_steps_per_unit, backend)
    loop.preload(_as_u0(u0, sys.m))

    def predictor(x, t, hist):
        z = linear_predict(lin, x, hist, t, int(N), backend=backend)
        return z, int(N), {"z": [float(v) for v in z], "N": int(N), "h": lin.tau / int(N)}

    return loop.run(x0, predictor)


# -- analysis --------------------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    """Least-squares exponential fit ``m(t) ~ prefactor * exp(-rate * t)``."""

    rate: float
    prefactor: float
    slack: float
    envelope_ok: bool
    points: int
    t_start: float

    def to_dict(self):
        return {"rate": self.rate, "prefactor": self.prefactor, "envelope_slack": self.slack,
                "envelope_ok": self.envelope_ok, "points": self.points, "fit_start": self.t_start}


def fit_decay(t, m, fraction=FIT_FRACTION):
    """Fit ``log m`` on the last ``fraction`` of the time span, ignoring ``m < 1e-14``."""
    t = np.asarray(t, dtype=float)
    m = np.asarray(m, dtype=float)
    t0 = t[0] + (1.0 - fraction) * (t[-1] - t[0])
    sel = (t >= t0) & (m >= FIT_FLOOR)
    if sel.sum() < 2:
        # the signal already sits below the floor: decay is complete
        return DecayFit(math.inf, 0.0, 0.0, True, int(sel.sum()), float(t0))
    tt, lm = t[sel], np.log(m[sel])
    slope, intercept = np.polyfit(tt, lm, 1)
    rate = float(-slope)
    if abs(rate) < 1e-12 * max(1.0, abs(intercept)):
        rate = 0.0
    pref = float(math.exp(intercept))
    ratio = m[sel] / (pref * np.exp(-rate * tt))
    slack = float(np.max(ratio) - 1.0)
    return DecayFit(rate, pref, slack, slack <= ENVELOPE_SLACK, int(sel.sum()), float(t0))


def decay_fit(traj: Trajectory, tau=None) -> DecayFit:
    """Fit the decay of ``m(t) = |x(t)| + sup_{[t - tau, t)} |u|``."""
    tau = traj.tau if tau is None else float(tau)
    span = traj.t[-1] - traj.t[0]
    if span < 5 * tau * (1 - 1e-12):
        raise ValidationError(f"trajectory spans {span:g}, at least 5 tau = {5 * tau:g} required")
    m = np.linalg.norm(traj.x, axis=1) + traj.u_signal.sup_norms(traj.t, tau)
    return fit_decay(traj.t, m)


def claim_checks(traj: Trajectory, design, fc, tol=1e-6):
    """Empirical ultimate-bound, local-decay and boundedness checks on a nonlinear run."""
    V = _batched(fc.V, traj.x)
    level = design.ultimate_level + tol
    below = V <= level
    report = {"ultimate_level": float(design.ultimate_level)}
    if below.any():
        first = int(np.argmax(below))
        stays = bool(below[first:].all())
        report["entry_time"] = float(traj.t[first])
        report["ultimate_bound"] = stays
        if not stays:
            report["exit_time"] = float(traj.t[first + int(np.argmin(below[first:]))])
    else:
        report["entry_time"] = None
        report["ultimate_bound"] = False

    Tj = None
    for T in traj.sample_times:
        if T + traj.tau > traj.t[-1]:
            break
        if float(_batched(fc.V, traj.state_at(T + traj.tau)[None, :])[0]) <= design.delta:
            Tj = float(T)
            break
    report["T_j"] = Tj
    if Tj is None:
        report["local_decay"] = False
    else:
        sel = traj.t >= Tj
        fx = fit_decay(traj.t[sel], np.linalg.norm(traj.x[sel], axis=1), fraction=1.0)
        fu = fit_decay(traj.t[sel], np.linalg.norm(traj.u[sel], axis=1), fraction=1.0)
        report["state_rate"] = fx.rate
        report["input_rate"] = fu.rate
        report["local_decay"] = bool(fx.rate > 0 and fu.rate > 0)
    m = np.linalg.norm(traj.x, axis=1) + traj.u_signal.sup_norms(traj.t, traj.tau)
    report["sup_m"] = float(np.max(m))
    report["bounded"] = bool(np.isfinite(report["sup_m"]))
    report["passed"] = bool(report["ultimate_bound"] and report["local_decay"] and report["bounded"])
    return report
