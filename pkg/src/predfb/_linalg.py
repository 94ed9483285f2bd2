"""Small dense linear-algebra helpers shared by several modules."""

import numpy as np

from .errors import ConvergenceError, ValidationError


def spectral_norm(Amat, rtol=1e-12, max_iter=100_000):
    """Largest singular value of ``Amat`` by power iteration on ``A^T A``.

    The start vector is fixed (seeded), so repeated calls return the same
    value. Raises ``ConvergenceError`` if the Rayleigh quotient has not
    settled to ``rtol`` after ``max_iter`` iterations.
    """
    A = np.atleast_2d(np.asarray(Amat, dtype=float))
    if not np.all(np.isfinite(A)):
        raise ValidationError("spectral_norm: matrix has non-finite entries")
    if A.size == 0 or not np.any(A):
        return 0.0
    # scale so A^T A neither underflows nor overflows
    scale = float(np.max(np.abs(A)))
    A = A / scale
    G = A.T @ A
    v = np.random.default_rng(20240229).standard_normal(G.shape[0])
    v /= np.linalg.norm(v)
    lam = float(v @ G @ v)
    for _ in range(max_iter):
        w = G @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # start vector in the null space of G; G != 0 so a basis vector works
            v = np.zeros_like(v)
            v[int(np.argmax(np.abs(G).sum(axis=0)))] = 1.0
            continue
        v = w / nw
        lam_new = float(v @ G @ v)
        if abs(lam_new - lam) <= rtol * abs(lam_new) * 1e-2:
            return scale * float(np.sqrt(lam_new))
        lam = lam_new
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations")
