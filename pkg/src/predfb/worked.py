"""Ready-made systems and certificates used by the tests, the CLI and the docs."""

import math

import numpy as np

from .lyapunov_design import CompletenessCertificate, FeedbackCertificate, MonotoneHandle
from .system_model import LinearSystem, cubic_system


def completeness_constant(alpha, theta):
    """Smallest ``c`` with ``alpha (2 + theta - c)^2 <= 8c``."""
    b = alpha * (2.0 + theta) + 4.0
    c = (b - math.sqrt(b * b - alpha * alpha * (2.0 + theta) ** 2)) / alpha
    return c * (1.0 + 1e-12)


def cubic_certificates(tau, r, alpha=1.0, theta=0.5):
    """Certificates for ``x' = x - x^3 + u`` with ``k(x) = -2x``.

    Completeness: ``W = 1 + alpha x^2`` with ``p(s) = (alpha / theta) s^2``.
    Young's inequality ``2xu <= theta x^2 + u^2 / theta`` reduces the
    requirement to ``-2 alpha y^2 + alpha (2 + theta - c) y - c <= 0`` for
    ``y = x^2 >= 0``, which holds when ``alpha (2 + theta - c)^2 <= 8c``;
    ``c`` is the smallest such constant (``c = 1/2`` for the defaults).
    Along any solution ``d|x|/dt <= |x| + |u|``, which gives
    ``a_tau(s) = e^tau s``.

    A large ``alpha`` pulls ``Q(0)`` towards 1 and so keeps the accuracy
    function away from underflow at small signals, at the price of a larger
    ``P`` and ``Q(s)`` for signals of order one.

    Lyapunov: ``V = x^2`` decreases at rate ``2x^2 + 2x^4 >= 2V`` so
    ``rho(s) = 2s`` and ``mu = 2``; the comparison functions are the exact
    quadratic and linear ones with ``k1 = k2 = 1``, ``k3 = k4 = 2`` and the
    input-matching function ``M = 2``.

    Returns
    -------
    (CompletenessCertificate, FeedbackCertificate)
    """
    e_tau, e_r = math.exp(tau), math.exp(r)
    alpha, theta = float(alpha), float(theta)
    cc = CompletenessCertificate(
        W=lambda x: 1.0 + alpha * np.sum(np.square(x), axis=-1),
        gradW=lambda x: 2.0 * alpha * np.asarray(x, dtype=float),
        H=lambda s: 2.0 * alpha,
        c=completeness_constant(alpha, theta),
        p=lambda s: (alpha / theta) * np.square(s),
        sublevel_radius=lambda T: math.sqrt(max(T - 1.0, 0.0) / alpha),
        W_env=lambda s: 1.0 + alpha * s * s,
        a_tau=lambda s: e_tau * s,
        a_r=lambda s: e_r * s,
        M_tau=e_tau,
    )
    fc = FeedbackCertificate(
        V=lambda x: np.sum(np.square(x), axis=-1),
        gradV=lambda x: 2.0 * np.asarray(x, dtype=float),
        rho=MonotoneHandle(lambda s: 2.0 * s, "rho"),
        eps=1.0,
        K_quad=1.0,
        mu=2.0,
        a1=MonotoneHandle(lambda s: s * s, "a1"),
        a2=MonotoneHandle(lambda s: s * s, "a2"),
        a3=MonotoneHandle(lambda s: 2.0 * s, "a3"),
        a4=MonotoneHandle(lambda s: 2.0 * s, "a4"),
        k1=1.0,
        k2=1.0,
        k3=2.0,
        k4=2.0,
        M=MonotoneHandle(lambda s: 2.0, "M"),
    )
    return cc, fc


# certificate scaling that keeps R(s)/s at its small-signal limit down to s ~ 1e-5
SMALL_SIGNAL_CERT = {"alpha": 1000.0, "theta": 0.25}


def cubic_setup(tau=0.5, r=0.25, alpha=1.0, theta=0.5):
    """The cubic plant, its certificates, bounds pack and derived design."""
    from .lyapunov_design import build_bounds_pack, derive_design

    sys = cubic_system()
    cc, fc = cubic_certificates(tau, r, alpha, theta)
    pack = build_bounds_pack(cc, sys.L, tau)
    design = derive_design(fc, cc, pack, sys.L, r, tau)
    return sys, cc, fc, pack, design


def scalar_unstable(p=1.93, tau=1.0):
    """Scalar plant ``x'(t) = x(t) + u(t - tau)`` with ``u = -p x``."""
    return LinearSystem(A=[[1.0]], B=[[1.0]], K=[[-float(p)]], tau=tau)


def scalar_unstable_gamma(p):
    """ISS gain used in the reproduction mode: the infimum ``1/(p-1)``."""
    return 1.0 / (float(p) - 1.0)
