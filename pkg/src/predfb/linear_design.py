"""Linear-plant design: ISS gain, minimal grid count, Euler error bound and predictor."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from . import kernels
from ._linalg import spectral_norm
from .errors import NonFiniteStateError, NumericalError, ValidationError
from .input_history import InputHistory, InputWindow
from .system_model import AffinePolyForm, LinearSystem

__all__ = [
    "LinearGainReport",
    "SweepResult",
    "f_of_p",
    "f_sweep",
    "default_p_grid",
    "iss_gain_gamma",
    "linear_error_bound",
    "linear_predict",
    "min_grid_count",
    "min_grid_lhs",
    "spectral_norm",
]

LYAP_MAX_N = 20
MU_FRACTION = 0.9


@dataclass(frozen=True)
class LinearGainReport:
    """Quadratic ISS certificate ``P`` with decay rate ``mu`` and gain ``gamma``."""

    P_mat: np.ndarray
    mu: float
    gamma: float
    margin: float
    infimum: float

    def residuals(self, lin: LinearSystem):
        """``(max eig of P Acl + Acl^T P + 2 mu P, min eig of P - I, gamma - infimum)``."""
        Acl = lin.A + lin.B @ lin.K
        P = self.P_mat
        lhs = P @ Acl + Acl.T @ P + 2 * self.mu * P
        return (
            float(np.max(np.linalg.eigvalsh(0.5 * (lhs + lhs.T)))),
            float(np.min(np.linalg.eigvalsh(P - np.eye(len(P))))),
            float(self.gamma - self.infimum),
        )

    def to_dict(self):
        return {
            "P": self.P_mat.tolist(),
            "mu": self.mu,
            "gamma": self.gamma,
            "margin": self.margin,
            "gamma_infimum": self.infimum,
        }


def _lyap(M):
    """Solve ``M^T X + X M = -I``."""
    X = solve_continuous_lyapunov(M.T, -np.eye(M.shape[0]))
    return 0.5 * (X + X.T)


def iss_gain_gamma(lin: LinearSystem, margin=1.05) -> LinearGainReport:
    """ISS certificate for ``x' = (A + BK) x + B d``.

    ``mu`` is 0.9 times the stability margin of ``A + BK``; ``P`` solves the
    shifted Lyapunov equation and is scaled so that ``P >= I``; ``gamma`` is
    ``margin`` times the infimum ``sqrt(|B^T P B|) / mu``.
    """
    if not margin > 1:
        raise ValidationError("gamma margin must exceed 1 (the inequality is strict)")
    n = lin.n
    if n > LYAP_MAX_N:
        raise ValidationError(f"dense Lyapunov solve limited to n <= {LYAP_MAX_N}, got {n}")
    Acl = lin.A + lin.B @ lin.K
    eig = np.linalg.eigvals(Acl)
    worst = eig[np.argmax(eig.real)]
    if worst.real >= 0:
        raise ValidationError(f"A + BK is not Hurwitz: eigenvalue {worst:.6g}")
    mu = MU_FRACTION * float(-worst.real)
    P0 = _lyap(Acl + mu * np.eye(n))
    P = P0 / float(np.min(np.linalg.eigvalsh(P0)))
    infimum = math.sqrt(spectral_norm(lin.B.T @ P @ lin.B)) / mu
    return LinearGainReport(P_mat=P, mu=mu, gamma=margin * infimum, margin=float(margin), infimum=infimum)


def min_grid_lhs(lin: LinearSystem, r, gamma):
    """Left-hand side of the grid-count criterion; ``N*`` is the smallest ``N`` exceeding half of it."""
    a, b, k, tau = spectral_norm(lin.A), spectral_norm(lin.B), spectral_norm(lin.K), lin.tau
    try:
        g = math.exp(a * tau)
    except OverflowError as exc:
        raise NumericalError("grid-count criterion overflows") from exc
    try:
        growth = math.exp(a * r)
    except OverflowError as exc:
        raise NumericalError("grid-count criterion overflows") from exc
    return tau * k * growth * (a * gamma * g + b * (a * tau * g + 1.0) * (1.0 + gamma * k)) * (g - 1.0)


def min_grid_count(lin: LinearSystem, r, gamma):
    """Smallest integer ``N*`` with ``LHS < 2 N*``."""
    if not r > 0:
        raise ValidationError("r must be positive")
    if not gamma > 0:
        raise ValidationError("gamma must be positive")
    lhs = min_grid_lhs(lin, r, gamma)
    if not math.isfinite(lhs):
        raise NumericalError("grid-count criterion overflows")
    return int(math.floor(lhs / 2.0)) + 1


def f_of_p(p, r=1.0):
    """Half the grid-count criterion for the scalar example with ``gamma = 1/(p-1)``."""
    p = np.asarray(p, dtype=float)
    e = math.e
    return p * math.exp(r) * (e + (e + 1.0) * (2.0 * p - 1.0)) * (e - 1.0) / (2.0 * (p - 1.0))


def default_p_grid(step=0.01, p_max=10.0):
    """``1 + step, 1 + 2 step, ..., p_max`` rounded to the step's decimals."""
    count = int(round((p_max - 1.0) / step))
    decimals = max(0, -int(math.floor(math.log10(step))))
    return np.round(1.0 + step * np.arange(1, count + 1), decimals)


@dataclass(frozen=True)
class SweepResult:
    table: np.ndarray
    argmin_p: float
    min_f: float

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["p", "f"])
        for p, f in self.table:
            w.writerow([repr(float(p)), repr(float(f))])
        return buf.getvalue()


def f_sweep(r, p_grid=None) -> SweepResult:
    """Tabulate ``f(p)`` and return the grid minimiser."""
    grid = default_p_grid() if p_grid is None else np.asarray(p_grid, dtype=float)
    if grid.size == 0:
        raise ValidationError("empty p grid")
    if np.any(grid <= 1.0):
        raise ValidationError("all p must exceed 1")
    vals = f_of_p(grid, r)
    j = int(np.argmin(vals))
    return SweepResult(table=np.column_stack([grid, vals]), argmin_p=float(grid[j]), min_f=float(vals[j]))


def linear_predict(lin: LinearSystem, x_Ti, hist, t, N, backend=None):
    """``z_{j+1} = (I + hA) z_j + B int_{jh}^{(j+1)h} u(t - tau + s) ds``, ``z_0 = x_Ti``."""
    N = int(N)
    if N < 1:
        raise ValidationError("N must be at least 1")
    if not isinstance(hist, (InputWindow, InputHistory)):
        raise ValidationError("expected an InputHistory or InputWindow")
    window = hist if isinstance(hist, InputWindow) else hist.window(t)
    form = AffinePolyForm(lin.A, lin.B)
    x = np.atleast_1d(np.asarray(x_Ti, dtype=float))
    if x.shape != (lin.n,):
        raise ValidationError(f"state must have length {lin.n}")
    edges = window.tau * (np.arange(N + 1, dtype=float) / N)
    U = window.step_integrals(edges)
    out, fail = kernels.euler_affine(form, x, window.tau / N, U, False, backend)
    if fail >= 0:
        raise NonFiniteStateError(f"linear predictor diverged at step {fail}", step=fail)
    return out[0]


def linear_error_bound(a, b, tau, N, x0_norm, u_sup):
    """Global Euler error bound for ``x' = Ax + Bu`` with ``a = |A|``, ``b = |B|``."""
    if N < 1:
        raise ValidationError("N must be at least 1")
    h = tau / N
    g = math.exp(a * tau)
    return 0.5 * h * a * (g - 1.0) * g * x0_norm + 0.5 * h * b * (a * tau * g + 1.0) * (g - 1.0) * u_sup
