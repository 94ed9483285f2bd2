"""Pure-Python twins of the compiled kernels in ``_kernels.pyx``.

Operation order matches the Cython code so the two backends agree bit for bit.
These are slow; they exist so the package works without a C compiler.
"""

import bisect
import math

import numpy as np


def _ipow(x, p):
    r = 1.0
    for _ in range(p):
        r = r * x
    return r


def _drift(x, A, powers, coeffs):
    n = len(x)
    out = [0.0] * n
    for j in range(n):
        acc = 0.0
        row = A[j]
        for l in range(n):
            acc = acc + row[l] * x[l]
        for t in range(len(powers)):
            acc = acc + coeffs[t][j] * _ipow(x[j], powers[t])
        out[j] = acc
    return out


def _input(tn, un, s, left):
    K = len(tn)
    k = (bisect.bisect_left(tn, s) if left else bisect.bisect_right(tn, s)) - 1
    if k < 0:
        return list(un[0])
    if k >= K - 1:
        return list(un[K - 1])
    span = tn[k + 1] - tn[k]
    if span <= 0.0:
        w = 0.0 if left else 1.0
    else:
        w = (s - tn[k]) / span
    a, b = un[k], un[k + 1]
    return [a[l] + w * (b[l] - a[l]) for l in range(len(a))]


def _matvec(B, v):
    out = []
    for row in B:
        acc = 0.0
        for l in range(len(v)):
            acc = acc + row[l] * v[l]
        out.append(acc)
    return out


def euler_affine(x0, h, U, A, B, powers, coeffs, store):
    x = [float(v) for v in x0]
    n = len(x)
    A = np.asarray(A).tolist()
    B = np.asarray(B).tolist()
    powers = np.asarray(powers).tolist()
    coeffs = np.asarray(coeffs).reshape(len(powers), n).tolist()
    U = np.asarray(U).tolist()
    N = len(U)
    rows = [list(x)] if store else None
    fail = -1
    for i in range(N):
        g = _drift(x, A, powers, coeffs)
        bu = _matvec(B, U[i])
        x = [x[j] + h * g[j] + bu[j] for j in range(n)]
        if not all(math.isfinite(v) for v in x):
            fail = i
            break
        if store:
            rows.append(x)
    if store:
        out = np.array(rows, dtype=np.float64).reshape(-1, n)
        if fail >= 0:
            out = np.vstack([out, np.empty((N + 1 - out.shape[0], n))])
        return out, fail
    return np.array([x], dtype=np.float64), fail


def rk4_affine_grid(x0, grid, A, B, powers, coeffs, tn, un, shift, every):
    x = [float(v) for v in x0]
    n = len(x)
    A = np.asarray(A).tolist()
    B = np.asarray(B).tolist()
    powers = np.asarray(powers).tolist()
    coeffs = np.asarray(coeffs).reshape(len(powers), n).tolist()
    tn = np.asarray(tn).tolist()
    un = np.asarray(un).tolist()
    grid = np.asarray(grid).tolist()
    steps = len(grid) - 1
    rows = [list(x)]
    fail = -1
    for i in range(steps):
        t = grid[i]
        dt = grid[i + 1] - t
        ua = _matvec(B, _input(tn, un, t - shift, False))
        um = _matvec(B, _input(tn, un, t + 0.5 * dt - shift, False))
        ub = _matvec(B, _input(tn, un, grid[i + 1] - shift, True))

        k1 = _drift(x, A, powers, coeffs)
        k1 = [k1[j] + ua[j] for j in range(n)]
        y = [x[j] + 0.5 * dt * k1[j] for j in range(n)]
        k2 = _drift(y, A, powers, coeffs)
        k2 = [k2[j] + um[j] for j in range(n)]
        y = [x[j] + 0.5 * dt * k2[j] for j in range(n)]
        k3 = _drift(y, A, powers, coeffs)
        k3 = [k3[j] + um[j] for j in range(n)]
        y = [x[j] + dt * k3[j] for j in range(n)]
        k4 = _drift(y, A, powers, coeffs)
        k4 = [k4[j] + ub[j] for j in range(n)]
        x = [x[j] + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) for j in range(n)]
        if not all(math.isfinite(v) for v in x):
            fail = i
            break
        if (i + 1) % every == 0 or i + 1 == steps:
            rows.append(x)
    n_out = steps // every + (1 if steps % every else 0) + 1
    out = np.empty((n_out, n), dtype=np.float64)
    out[: len(rows)] = np.array(rows, dtype=np.float64).reshape(-1, n)
    return out, fail
