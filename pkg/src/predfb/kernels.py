"""Backend selection for the hot loops.

The compiled extension ``predfb._kernels`` is used when it imports; otherwise
the pure-Python twins in ``predfb._pykernels`` take over. Setting the
environment variable ``PREDFB_PURE_PYTHON=1`` forces the fallback.
"""

import os

import numpy as np

from . import _pykernels

_compiled = None
if not os.environ.get("PREDFB_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # pragma: no cover - depends on the build
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"


def compiled_available():
    """True when the compiled extension imported."""
    return _compiled is not None


def _impl(backend):
    if backend is None:
        backend = BACKEND
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available in this build")
        return _compiled
    if backend == "python":
        return _pykernels
    raise ValueError(f"unknown kernel backend {backend!r}")


def _c2(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _prep_form(form):
    powers = np.ascontiguousarray(form.powers, dtype=np.int64)
    coeffs = _c2(form.coeffs).reshape(len(powers), form.A.shape[0])
    return _c2(form.A), _c2(form.B), powers, coeffs


def euler_affine(form, x0, h, U, store=True, backend=None):
    """Run ``x_{i+1} = x_i + h*g(x_i) + B U_i``; returns ``(states, fail_index)``."""
    A, B, powers, coeffs = _prep_form(form)
    U = _c2(U).reshape(-1, B.shape[1])
    return _impl(backend).euler_affine(
        _c2(x0).ravel(), float(h), U, A, B, powers, coeffs, bool(store)
    )


def rk4_affine_grid(form, x0, grid, tn, un, shift=0.0, every=1, backend=None):
    """RK4 on an explicit grid with piecewise-linear input nodes ``(tn, un)``."""
    A, B, powers, coeffs = _prep_form(form)
    tn = _c2(tn).ravel()
    un = _c2(un).reshape(len(tn), B.shape[1])
    return _impl(backend).rk4_affine_grid(
        _c2(x0).ravel(), _c2(grid).ravel(), A, B, powers, coeffs, tn, un,
        float(shift), int(every),
    )
