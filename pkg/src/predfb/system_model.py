"""Plant and feedback abstractions plus sampling checks of the growth envelope."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._linalg import spectral_norm
from .errors import ValidationError

ZERO_TOL = 1e-12
RATIO_TOL = 1e-9


@dataclass(frozen=True)
class AffinePolyForm:
    """Structured description of ``f(x, u) = A x + sum_t c_t * x**p_t + B u``.

    Powers act componentwise. Systems carrying this form run through the
    compiled kernels; anything else falls back to generic Python loops.
    """

    A: np.ndarray
    B: np.ndarray
    powers: tuple = ()
    coeffs: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        coeffs = np.asarray(self.coeffs, dtype=float).reshape(len(self.powers), A.shape[0])
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        powers = tuple(int(p) for p in self.powers)
        if any(p < 0 for p in powers):
            raise ValidationError("polynomial powers must be nonnegative integers")
        object.__setattr__(self, "powers", powers)
        object.__setattr__(self, "coeffs", coeffs)

    def drift(self, x):
        x = np.asarray(x, dtype=float)
        g = self.A @ x
        for p, c in zip(self.powers, self.coeffs):
            g = g + c * x**p
        return g

    def __call__(self, x, u):
        return self.drift(x) + self.B @ np.asarray(u, dtype=float)


@dataclass(frozen=True)
class NonlinearSystem:
    """Plant ``x' = f(x, u)`` with feedback ``k`` and growth envelope ``L``.

    ``f`` takes and returns 1-D arrays; ``L`` is a scalar function with
    ``L(s) >= 1``. ``affine_form`` and ``feedback_gain`` are optional
    structural hints that enable the compiled fast paths: the former must
    describe ``f`` exactly, the latter is the matrix ``K`` when ``k(x) = K x``.
    """

    n: int
    m: int
    f: Callable
    k: Callable
    L: Callable
    name: str = "custom"
    affine_form: AffinePolyForm | None = None
    feedback_gain: np.ndarray | None = None

    def __post_init__(self):
        if int(self.n) < 1 or int(self.m) < 1:
            raise ValidationError("state and input dimensions must be positive")
        f0 = np.asarray(self.f(np.zeros(self.n), np.zeros(self.m)), dtype=float)
        if f0.shape != (self.n,):
            raise ValidationError(f"f must return a vector of length {self.n}, got shape {f0.shape}")
        if np.max(np.abs(f0), initial=0.0) > ZERO_TOL:
            raise ValidationError(f"f(0, 0) must vanish, got {f0}")
        k0 = np.asarray(self.k(np.zeros(self.n)), dtype=float)
        if k0.shape != (self.m,):
            raise ValidationError(f"k must return a vector of length {self.m}, got shape {k0.shape}")
        if np.max(np.abs(k0), initial=0.0) > ZERO_TOL:
            raise ValidationError(f"k(0) must vanish, got {k0}")
        for s in np.concatenate([[0.0], np.logspace(-3, 3, 61)]):
            if not self.L(float(s)) >= 1.0:
                raise ValidationError(f"growth envelope L({s:g}) = {self.L(float(s))} < 1")
        if self.feedback_gain is not None:
            object.__setattr__(
                self, "feedback_gain",
                np.atleast_2d(np.asarray(self.feedback_gain, dtype=float)),
            )


@dataclass(frozen=True)
class LinearSystem:
    """``x'(t) = A x(t) + B u(t - tau)`` with feedback matrix ``K``."""

    A: np.ndarray
    B: np.ndarray
    K: np.ndarray
    tau: float

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValidationError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise ValidationError(f"B must have {n} rows, got {B.shape}")
        if K.shape != (B.shape[1], n):
            raise ValidationError(f"K must be {B.shape[1]}x{n}, got {K.shape}")
        if not self.tau > 0:
            raise ValidationError("delay tau must be positive")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]


def eval_dynamics(sys: NonlinearSystem, x, u):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (sys.n,) or u.shape != (sys.m,):
        raise ValidationError(
            f"expected x of shape ({sys.n},) and u of shape ({sys.m},), got {x.shape} and {u.shape}"
        )
    return np.asarray(sys.f(x, u), dtype=float)


@dataclass
class GrowthReport:
    """Worst observed ratios LHS/RHS for the Lipschitz and growth inequalities."""

    lipschitz_ratio: float
    growth_ratio: float
    samples: int
    worst_lipschitz: tuple | None = None
    worst_growth: tuple | None = None

    @property
    def passed(self):
        return self.lipschitz_ratio <= 1 + RATIO_TOL and self.growth_ratio <= 1 + RATIO_TOL


def _ball(rng, count, dim, radius):
    d = rng.standard_normal((count, dim))
    d /= np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-300)
    return d * (radius * rng.random((count, 1)) ** (1.0 / dim))


def check_growth_envelope(sys: NonlinearSystem, sample_count: int, radius: float, seed: int = 0):
    """Falsification check of the local-Lipschitz and linear-growth envelopes.

    Samples ``x, y, u`` uniformly in the ball of the given radius, plus the
    origin and the axis unit vectors, and reports the largest ratios of
    left- to right-hand side. The report passes when both stay below
    ``1 + 1e-9``.
    """
    if sample_count < 1:
        raise ValidationError("sample_count must be at least 1")
    rng = np.random.default_rng(seed)
    n, m = sys.n, sys.m
    xs = list(_ball(rng, sample_count, n, radius))
    ys = list(_ball(rng, sample_count, n, radius))
    us = list(_ball(rng, sample_count, m, radius))
    special_x = [np.zeros(n)] + [np.eye(n)[i] for i in range(n)]
    special_u = [np.zeros(m)] + [np.eye(m)[i] for i in range(m)]
    for a in special_x:
        for b in special_x:
            for c in special_u:
                xs.append(a)
                ys.append(b)
                us.append(c)

    worst_lip, worst_growth = 0.0, 0.0
    arg_lip = arg_growth = None
    for x, y, u in zip(xs, ys, us):
        fx = np.asarray(sys.f(x, u), dtype=float)
        fy = np.asarray(sys.f(y, u), dtype=float)
        nx, ny, nu = np.linalg.norm(x), np.linalg.norm(y), np.linalg.norm(u)
        dxy = np.linalg.norm(x - y)
        lhs = np.linalg.norm(fx - fy)
        rhs = sys.L(nx + ny + nu) * dxy
        ratio = lhs / rhs if rhs > 0 else (0.0 if lhs <= ZERO_TOL else math.inf)
        if ratio > worst_lip:
            worst_lip, arg_lip = ratio, (x, y, u)
        lhs = np.linalg.norm(fx)
        rhs = (nx + nu) * sys.L(nx + nu)
        ratio = lhs / rhs if rhs > 0 else (0.0 if lhs <= ZERO_TOL else math.inf)
        if ratio > worst_growth:
            worst_growth, arg_growth = ratio, (x, u)
    return GrowthReport(worst_lip, worst_growth, len(xs), arg_lip, arg_growth)


def linear_as_nonlinear(lin: LinearSystem) -> NonlinearSystem:
    """View ``(A, B, K)`` as a nonlinear system with constant envelope."""
    A, B, K = lin.A, lin.B, lin.K
    bound = max(1.0, spectral_norm(A) + spectral_norm(B))
    return NonlinearSystem(
        n=lin.n,
        m=lin.m,
        f=lambda x, u: A @ x + B @ u,
        k=lambda x: K @ x,
        L=lambda s: bound,
        name="linear",
        affine_form=AffinePolyForm(A, B),
        feedback_gain=K,
    )


def cubic_system(gain=2.0) -> NonlinearSystem:
    """Scalar plant ``x' = x - x^3 + u`` with ``k(x) = -gain * x``.

    The envelope ``L(s) = max(1, s^2 - 1)`` is the tightest quadratic one:
    ``|1 - (x^2 + xy + y^2)| <= max(1, (|x| + |y|)^2 - 1)`` and
    ``|x - x^3| <= |x| max(1, x^2 - 1)``.
    """
    form = AffinePolyForm(A=[[1.0]], B=[[1.0]], powers=(3,), coeffs=[[-1.0]])
    K = np.array([[-gain]])
    return NonlinearSystem(
        n=1,
        m=1,
        f=lambda x, u: x - x**3 + u,
        k=lambda x: K @ x,
        L=lambda s: max(1.0, s * s - 1.0),
        name="cubic",
        affine_form=form,
        feedback_gain=K,
    )


def zero_system(n=1, m=1) -> NonlinearSystem:
    return NonlinearSystem(
        n=n,
        m=m,
        f=lambda x, u: np.zeros(n),
        k=lambda x: np.zeros(m),
        L=lambda s: 1.0,
        name="zero",
        affine_form=AffinePolyForm(np.zeros((n, n)), np.zeros((n, m))),
        feedback_gain=np.zeros((m, n)),
    )


BUILTIN_SYSTEMS = {"cubic": cubic_system, "zero": zero_system}
