# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for affine-in-input polynomial systems.

The vector field handled here is

    f(x, u)_j = sum_l A[j, l] x_l + sum_t coeffs[t, j] * x_j ** powers[t] + sum_l B[j, l] u_l

which covers linear plants and the scalar cubic plant. Both routines mirror
``predfb._pykernels`` exactly (same operation order), so either backend gives
the same numbers up to the last bit on IEEE hardware.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport isfinite

cnp.import_array()


cdef inline double _ipow(double x, long p) noexcept nogil:
    # repeated multiplication, matched exactly by the Python twin
    cdef double r = 1.0
    cdef long k
    for k in range(p):
        r = r * x
    return r


cdef inline void _drift(const double[::1] x, const double[:, ::1] A,
                        const long[::1] powers, const double[:, ::1] coeffs,
                        double[::1] out) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t j, l, t
    cdef double acc
    for j in range(n):
        acc = 0.0
        for l in range(n):
            acc = acc + A[j, l] * x[l]
        for t in range(powers.shape[0]):
            acc = acc + coeffs[t, j] * _ipow(x[j], powers[t])
        out[j] = acc


cdef inline Py_ssize_t _locate(const double[::1] tn, double s, bint left) noexcept nogil:
    # index k of the cell [tn[k], tn[k+1]] holding s; left selects the left limit at nodes
    cdef Py_ssize_t lo = 0
    cdef Py_ssize_t hi = tn.shape[0]
    cdef Py_ssize_t mid
    if left:
        while lo < hi:
            mid = (lo + hi) // 2
            if tn[mid] < s:
                lo = mid + 1
            else:
                hi = mid
        return lo - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if tn[mid] <= s:
            lo = mid + 1
        else:
            hi = mid
    return lo - 1


cdef inline void _input(const double[::1] tn, const double[:, ::1] un, double s,
                        bint left, double[::1] out) noexcept nogil:
    cdef Py_ssize_t K = tn.shape[0]
    cdef Py_ssize_t m = un.shape[1]
    cdef Py_ssize_t k = _locate(tn, s, left)
    cdef Py_ssize_t l
    cdef double w, span
    if k < 0:
        for l in range(m):
            out[l] = un[0, l]
        return
    if k >= K - 1:
        for l in range(m):
            out[l] = un[K - 1, l]
        return
    span = tn[k + 1] - tn[k]
    if span <= 0.0:
        w = 0.0 if left else 1.0
    else:
        w = (s - tn[k]) / span
    for l in range(m):
        out[l] = un[k, l] + w * (un[k + 1, l] - un[k, l])


def euler_affine(double[::1] x0, double h, double[:, ::1] U, double[:, ::1] A,
                 double[:, ::1] B, long[::1] powers, double[:, ::1] coeffs,
                 bint store):
    """Explicit Euler recursion x_{i+1} = x_i + h*g(x_i) + B @ U[i].

    Returns ``(states, fail)``; ``states`` has N+1 rows when ``store`` is set,
    otherwise only the final state. ``fail`` is the first step index producing
    a non-finite state, or -1.
    """
    cdef Py_ssize_t n = x0.shape[0]
    cdef Py_ssize_t m = B.shape[1]
    cdef Py_ssize_t N = U.shape[0]
    cdef Py_ssize_t i, j, l
    cdef Py_ssize_t fail = -1
    cdef double acc
    out_np = np.empty((N + 1 if store else 1, n), dtype=np.float64)
    cdef double[:, ::1] out = out_np
    cdef double[::1] x = np.array(x0, dtype=np.float64)
    cdef double[::1] g = np.empty(n, dtype=np.float64)
    with nogil:
        if store:
            for j in range(n):
                out[0, j] = x[j]
        for i in range(N):
            _drift(x, A, powers, coeffs, g)
            for j in range(n):
                acc = 0.0
                for l in range(m):
                    acc = acc + B[j, l] * U[i, l]
                x[j] = x[j] + h * g[j] + acc
            for j in range(n):
                if not isfinite(x[j]):
                    fail = i
                    break
            if fail >= 0:
                break
            if store:
                for j in range(n):
                    out[i + 1, j] = x[j]
        if not store:
            for j in range(n):
                out[0, j] = x[j]
    return out_np, fail


def rk4_affine_grid(double[::1] x0, double[::1] grid, double[:, ::1] A,
                    double[:, ::1] B, long[::1] powers, double[:, ::1] coeffs,
                    double[::1] tn, double[:, ::1] un, double shift,
                    Py_ssize_t every):
    """Classical RK4 over an explicit time grid with a piecewise-linear input.

    The input is read at ``s - shift``; stage times at the start of a step take
    right limits and those at the end take left limits, so jumps placed on grid
    points do not leak into neighbouring steps. States are kept every
    ``every`` steps plus the final one.
    """
    cdef Py_ssize_t n = x0.shape[0]
    cdef Py_ssize_t m = B.shape[1]
    cdef Py_ssize_t steps = grid.shape[0] - 1
    cdef Py_ssize_t n_out = steps // every + (1 if steps % every else 0) + 1
    cdef Py_ssize_t i, j, l, row
    cdef Py_ssize_t fail = -1
    cdef double t, dt, acc
    out_np = np.empty((n_out, n), dtype=np.float64)
    cdef double[:, ::1] out = out_np
    cdef double[::1] x = np.array(x0, dtype=np.float64)
    cdef double[::1] y = np.empty(n, dtype=np.float64)
    cdef double[::1] k1 = np.empty(n, dtype=np.float64)
    cdef double[::1] k2 = np.empty(n, dtype=np.float64)
    cdef double[::1] k3 = np.empty(n, dtype=np.float64)
    cdef double[::1] k4 = np.empty(n, dtype=np.float64)
    cdef double[::1] ua = np.empty(m, dtype=np.float64)
    cdef double[::1] um = np.empty(m, dtype=np.float64)
    cdef double[::1] ub = np.empty(m, dtype=np.float64)
    with nogil:
        for j in range(n):
            out[0, j] = x[j]
        row = 1
        for i in range(steps):
            t = grid[i]
            dt = grid[i + 1] - t
            _input(tn, un, t - shift, False, ua)
            _input(tn, un, t + 0.5 * dt - shift, False, um)
            _input(tn, un, grid[i + 1] - shift, True, ub)

            _drift(x, A, powers, coeffs, k1)
            for j in range(n):
                acc = 0.0
                for l in range(m):
                    acc = acc + B[j, l] * ua[l]
                k1[j] = k1[j] + acc
                y[j] = x[j] + 0.5 * dt * k1[j]
            _drift(y, A, powers, coeffs, k2)
            for j in range(n):
                acc = 0.0
                for l in range(m):
                    acc = acc + B[j, l] * um[l]
                k2[j] = k2[j] + acc
                y[j] = x[j] + 0.5 * dt * k2[j]
            _drift(y, A, powers, coeffs, k3)
            for j in range(n):
                acc = 0.0
                for l in range(m):
                    acc = acc + B[j, l] * um[l]
                k3[j] = k3[j] + acc
                y[j] = x[j] + dt * k3[j]
            _drift(y, A, powers, coeffs, k4)
            for j in range(n):
                acc = 0.0
                for l in range(m):
                    acc = acc + B[j, l] * ub[l]
                k4[j] = k4[j] + acc
                x[j] = x[j] + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            for j in range(n):
                if not isfinite(x[j]):
                    fail = i
                    break
            if fail >= 0:
                break
            if (i + 1) % every == 0 or i + 1 == steps:
                for j in range(n):
                    out[row, j] = x[j]
                row = row + 1
    return out_np, fail
