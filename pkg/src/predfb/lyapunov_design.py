"""Certificates, the bound functions P, Q, A, B and the nonlinear constant-selection pipeline.

The user supplies the certificates (completeness function W with its
constants, Lyapunov function V with comparison functions); everything else is
derived here. The end product is the accuracy function ``R`` that drives the
predictor's grid count.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import BracketError, ValidationError

log = logging.getLogger(__name__)

INVERSE_RTOL = 1e-12
DELTA_RTOL = 1e-10
RTILDE_MARGIN = 0.9


class MonotoneHandle:
    """Nondecreasing scalar function with a domain limit and a bisection inverse.

    Beyond ``domain_max`` the function is continued along the secant through
    ``(0.99 * domain_max, domain_max)``; the first such query logs a warning.
    """

    def __init__(self, fn, name="handle", domain_max=math.inf, inverse=None):
        if isinstance(fn, MonotoneHandle):
            fn = fn._fn
        self._fn = fn
        self.name = name
        self.domain_max = float(domain_max)
        self._inverse = inverse
        self._warned = False

    def __call__(self, s):
        s = float(s)
        if s > self.domain_max:
            if not self._warned:
                log.warning("%s evaluated at %g beyond its domain limit %g; extending linearly",
                            self.name, s, self.domain_max)
                self._warned = True
            b = self.domain_max
            a = 0.99 * b
            fb = float(self._fn(b))
            slope = (fb - float(self._fn(a))) / (b - a)
            return fb + slope * (s - b)
        return float(self._fn(s))

    def inverse(self, y):
        """Smallest-bracket solution of ``self(s) = y`` to relative tolerance 1e-12."""
        y = float(y)
        if self._inverse is not None:
            return float(self._inverse(y))
        if y <= self(0.0):
            return 0.0
        lo, hi = 0.0, 1.0
        f_lo = self(lo)
        while self(hi) < y:
            f_hi = self(hi)
            if f_hi < f_lo:
                raise BracketError(self.name, f"decreases between {lo:g} and {hi:g}")
            lo, f_lo = hi, f_hi
            hi *= 2.0
            if hi > 1e300:
                raise BracketError(self.name, f"cannot bracket the value {y:g}")
        for _ in range(400):
            if hi - lo <= INVERSE_RTOL * hi:
                break
            mid = 0.5 * (lo + hi)
            if self(mid) < y:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)


def _handle(fn, name):
    return fn if isinstance(fn, MonotoneHandle) else MonotoneHandle(fn, name)


def _batched(fn, X):
    """Evaluate ``fn`` on rows of ``X``; uses a single vectorised call when it works."""
    X = np.asarray(X, dtype=float)
    try:
        out = np.asarray(fn(X), dtype=float)
        if out.shape == (X.shape[0],):
            return out
    except Exception:  # noqa: BLE001 - fall back to per-row evaluation
        pass
    return np.array([float(fn(x)) for x in X])


def _batched_scalar(fn, s):
    s = np.asarray(s, dtype=float)
    try:
        out = np.asarray(fn(s), dtype=float)
        if out.shape == s.shape:
            return out
    except Exception:  # noqa: BLE001
        pass
    return np.array([float(fn(v)) for v in s.ravel()]).reshape(s.shape)


@dataclass(frozen=True)
class CompletenessCertificate:
    """Completeness data: ``gradW . f <= c W + p(|u|)`` plus horizon bounds.

    Attributes
    ----------
    W, gradW : callable
        Completeness function (values >= 1) and its gradient.
    H : callable
        Nondecreasing envelope of the Hessian norm of ``W`` over the ball of
        radius ``s (1 + tau L(s))``.
    c : float
    p : callable
        Class-K-infinity gain with ``p(0) = 0``.
    sublevel_radius : callable
        Upper bound on ``max{|x| : W(x) <= T}``.
    W_env : callable
        Upper envelope of ``max_{|y| <= s} W(y)``.
    a_tau, a_r : callable
        Horizon bounds ``|x(t)| <= a(|x0| + ||u||)`` for ``t`` up to ``tau``
        (resp. ``r``).
    M_tau : float
        Slope of ``a_tau`` on ``[0, 1]``.
    """

    W: Callable
    gradW: Callable
    H: Callable
    c: float
    p: Callable
    sublevel_radius: Callable
    W_env: Callable | None
    a_tau: Callable
    a_r: Callable
    M_tau: float

    def __post_init__(self):
        if not self.c > 0:
            raise ValidationError("completeness constant c must be positive")
        if not self.M_tau > 0:
            raise ValidationError("M_tau must be positive")

    def validate(self, sys, samples=2000, radius=10.0, seed=0):
        """Sampling checks of the certificate against ``sys``; returns a list of failures."""
        failures = []
        n, m = sys.n, sys.m
        if float(self.W(np.zeros(n))) < 1.0:
            failures.append("W(0) < 1")
        if abs(float(self.p(0.0))) > 1e-12:
            failures.append("p(0) != 0")
        grid = np.linspace(0.0, radius, 201)
        pv = _batched_scalar(self.p, grid)
        if np.any(np.diff(pv) <= 0):
            failures.append("p not strictly increasing on the sampled grid")
        rng = np.random.default_rng(seed)
        worst = -math.inf
        for _ in range(samples):
            x = rng.uniform(-radius, radius, n)
            u = rng.uniform(-radius, radius, m)
            lhs = float(np.dot(self.gradW(x), sys.f(x, u)))
            rhs = self.c * float(self.W(x)) + float(self.p(float(np.linalg.norm(u))))
            worst = max(worst, lhs - rhs - 1e-9 * max(1.0, abs(rhs)))
        if worst > 0:
            failures.append(f"gradW.f <= cW + p(|u|) violated by {worst:.3g}")
        return failures


@dataclass(frozen=True)
class FeedbackCertificate:
    """Lyapunov data for the delay-free closed loop ``x' = f(x, k(x))``."""

    V: Callable
    gradV: Callable
    rho: Callable
    eps: float
    K_quad: float
    mu: float
    a1: Callable
    a2: Callable
    a3: Callable
    a4: Callable
    k1: float
    k2: float
    k3: float
    k4: float
    M: Callable

    def __post_init__(self):
        for name in ("eps", "K_quad", "mu", "k1", "k2", "k3", "k4"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        for name in ("rho", "a1", "a2", "a3", "a4", "M"):
            object.__setattr__(self, name, _handle(getattr(self, name), name))

    def validate(self, sys, samples=2000, radius=10.0, seed=0):
        """Sampling checks of the decrease, sandwich, gradient and matching conditions."""
        failures = []
        rng = np.random.default_rng(seed)
        n = sys.n
        tol = 1e-9

        def bad(label, lhs, rhs):
            if lhs > rhs + tol * max(1.0, abs(rhs)):
                failures.append(f"{label}: {lhs:.6g} > {rhs:.6g}")

        for s in np.linspace(0.0, self.eps, 21):
            for fn, kk, power in ((self.a1, self.k1, 2), (self.a2, self.k2, 2),
                                  (self.a3, self.k3, 1), (self.a4, self.k4, 1)):
                if abs(fn(s) - kk * s**power) > tol * max(1.0, kk * s**power):
                    failures.append(f"{fn.name}({s:g}) differs from its small-signal form")
        radii = np.concatenate([rng.uniform(0, self.eps, samples // 2),
                                rng.uniform(0, radius, samples - samples // 2)])
        for rad in radii:
            d = rng.standard_normal(n)
            x = rad * d / max(np.linalg.norm(d), 1e-300)
            z = rng.uniform(-radius, radius, n)
            nx = float(np.linalg.norm(x))
            V = float(self.V(x))
            gV = np.asarray(self.gradV(x), dtype=float)
            fk = np.asarray(sys.f(x, sys.k(x)), dtype=float)
            bad("decrease", float(gV @ fk), -self.rho(V))
            bad("lower sandwich", self.a1(nx), V)
            bad("upper sandwich", V, self.a2(nx))
            bad("gradient bound", float(np.linalg.norm(gV)), self.a3(nx))
            bad("feedback bound", float(np.linalg.norm(sys.k(x))), self.a4(nx))
            diff = np.linalg.norm(np.asarray(sys.f(x, sys.k(z))) - fk)
            bad("input matching", float(diff), self.M(nx + float(np.linalg.norm(z))) * float(np.linalg.norm(z - x)))
            if nx <= self.eps:
                bad("local lower quadratic", nx * nx, V)
                bad("local upper quadratic", V, self.K_quad * nx * nx)
                bad("local gradient", float(np.linalg.norm(gV)), 2 * self.K_quad * nx)
                bad("local decrease", float(gV @ fk), -self.mu * nx * nx)
            if len(failures) > 20:
                break
        return failures


@dataclass(frozen=True)
class BoundsPack:
    """The nondecreasing functions P, Q, A, B for a fixed delay ``tau``."""

    P: Callable
    Q: Callable
    A: Callable
    B: Callable
    tau: float
    c: float
    L: Callable
    cc: CompletenessCertificate = field(repr=False)


def build_bounds_pack(cc: CompletenessCertificate, L, tau) -> BoundsPack:
    """Compose the bound functions from a completeness certificate and a growth envelope.

    ``P(s) = s^2 L(s)^2 H(s)``,
    ``Q(s) = 1 + sublevel_radius(e^{2c tau} W_env(s) + (e^{2c tau} - 1) p(s) / (2c))``,
    ``A(s) = L(Q(s) + a_tau(s) + s)`` and
    ``B(s) = A(s) (a_tau(s) + s) L(a_tau(s) + s)``.
    """
    if cc.W_env is None:
        raise ValidationError("completeness certificate lacks the W envelope W_env")
    if not tau > 0:
        raise ValidationError("tau must be positive")
    c = float(cc.c)
    grow = math.exp(2 * c * tau)
    gain = math.expm1(2 * c * tau) / (2 * c)

    def P(s):
        return s * s * L(s) ** 2 * cc.H(s)

    def Q(s):
        return 1.0 + cc.sublevel_radius(grow * cc.W_env(s) + gain * cc.p(s))

    def A(s):
        return L(Q(s) + cc.a_tau(s) + s)

    def B(s):
        w = cc.a_tau(s) + s
        return A(s) * w * L(w)

    return BoundsPack(P=P, Q=Q, A=A, B=B, tau=float(tau), c=c, L=L, cc=cc)


@dataclass(frozen=True)
class DerivedDesign:
    """Constants and functions produced by :func:`derive_design`."""

    D_r: Callable
    log_D_r: Callable
    log_R: Callable
    q: Callable
    phi: float
    Ltilde: float
    delta: float
    gamma: float
    Rtilde: float
    R: Callable
    r: float
    tau: float
    k_small: float
    ultimate_level: float
    fc: FeedbackCertificate = field(repr=False)

    def __call__(self, s):
        return self.R(s)

    def log(self, s):
        """``log R(s)``; finite for every ``s > 0`` even where ``R`` underflows."""
        return self.log_R(s)

    def small_signal_threshold(self, floor=1e-8):
        """Largest ``s`` (on a log grid from ``floor``) below which the small-signal slope bound holds."""
        grid = np.logspace(math.log10(floor), 1, 91)
        ok = np.array([self.R(s) / s >= RTILDE_MARGIN * self.k_small for s in grid])
        if not ok[0]:
            return 0.0
        bad = np.nonzero(~ok)[0]
        return float(grid[-1] if len(bad) == 0 else grid[bad[0] - 1])

    def report(self, grid=None):
        """JSON-ready design report: every constant plus ``R`` on a log grid."""
        grid = np.logspace(-3, 1, 41) if grid is None else np.asarray(grid, dtype=float)
        return {
            "delta": self.delta,
            "gamma": self.gamma,
            "phi": self.phi,
            "Ltilde": self.Ltilde,
            "Rtilde": self.Rtilde,
            "r": self.r,
            "tau": self.tau,
            "ultimate_level": self.ultimate_level,
            "small_signal_slope": self.k_small,
            "small_signal_threshold": self.small_signal_threshold(),
            "R_table": [[float(s), float(self.R(s)), float(self.log_R(s))] for s in grid],
        }


def _largest_delta(fc, eps):
    a1, a2 = fc.a1, fc.a2

    def g(d):
        return a1.inverse(a2(2.0 * a1.inverse(d)))

    hi = a1(eps)
    if g(hi) <= eps:
        return hi
    lo = 0.0
    while hi - lo > DELTA_RTOL * hi:
        mid = 0.5 * (lo + hi)
        if g(mid) <= eps:
            lo = mid
        else:
            hi = mid
    return lo


def derive_design(fc: FeedbackCertificate, cc: CompletenessCertificate, pack: BoundsPack, L, r, tau) -> DerivedDesign:
    """Run the constant-selection pipeline and return the accuracy function ``R``."""
    if not r > 0 or not tau > 0:
        raise ValidationError("r and tau must be positive")
    a1, a2, a3, a4, M, rho = fc.a1, fc.a2, fc.a3, fc.a4, fc.M, fc.rho
    k1, k2, k3, k4, mu = fc.k1, fc.k2, fc.k3, fc.k4, fc.mu

    def log_D_r(s):
        w = cc.a_r(s) + s
        return math.log(a3(w) * M(w)) + r * L(w)

    def D_r(s):
        # overflows to inf for large s; log_D_r stays finite
        v = log_D_r(s)
        return math.exp(v) if v < 709.0 else math.inf

    def q(s):
        y = a1.inverse(a2(s))
        return a4(y) + y

    delta = _largest_delta(fc, fc.eps)
    if not delta > 0:
        raise ValidationError("no positive delta satisfies the neighbourhood constraint")
    root = a1.inverse(delta)
    gamma = min(root, 0.5 * rho(0.5 * delta))
    y = a1.inverse(a2(2.0 * root))
    Ltilde = L((1.0 + k4) * y + root)
    phi = k3 * M(y + root) * math.exp(r * Ltilde)
    first = math.sqrt(k1 / k2) / k4
    second = mu * k1 * math.sqrt(k1) / (
        math.sqrt(2.0) * k2 * phi * (math.sqrt(k1) + k4 * math.sqrt(k2)) + mu * k1 * k4 * math.sqrt(k2)
    )
    Rtilde = RTILDE_MARGIN * min(first, second)

    def log_R(s):
        s = float(s)
        if s <= 0.0:
            return -math.inf
        b1 = math.log(gamma) - max(0.0, log_D_r(cc.a_tau(s) + q(pack.Q(s))))
        b3 = 0.5 * a2.inverse(a1(a4.inverse(0.5 * s)))
        return min(b1, math.log(Rtilde * s), math.log(b3) if b3 > 0 else -math.inf)

    def R(s):
        return math.exp(log_R(s)) if s > 0 else 0.0

    k_small = min(Rtilde, math.sqrt(k1 / k2) / (4.0 * k4))
    ultimate = rho.inverse(2.0 * gamma)
    return DerivedDesign(D_r=D_r, log_D_r=log_D_r, log_R=log_R, q=q, phi=phi, Ltilde=Ltilde, delta=delta, gamma=gamma,
                         Rtilde=Rtilde, R=R, r=float(r), tau=float(tau), k_small=k_small,
                         ultimate_level=ultimate, fc=fc)


def accuracy_R(design: DerivedDesign, s):
    """Evaluate the accuracy function at ``s >= 0``."""
    if s < 0:
        raise ValidationError("accuracy function is defined for s >= 0")
    return design.R(s)
