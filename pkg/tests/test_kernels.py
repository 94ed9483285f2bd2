import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from predfb import kernels
from predfb.system_model import AffinePolyForm, cubic_system

pytestmark = pytest.mark.skipif(not kernels.compiled_available(), reason="compiled extension not built")

forms = st.sampled_from([
    cubic_system().affine_form,
    AffinePolyForm([[0.0, 1.0], [-2.0, -0.5]], [[0.0], [1.0]]),
    AffinePolyForm([[-1.0, 0.2], [0.0, 0.5]], [[1.0, 0.0], [0.3, 1.0]], powers=(2, 3), coeffs=[[0.1, -0.2], [-0.3, 0.0]]),
])


@given(forms, st.integers(1, 200), st.integers(0, 2**32 - 1), st.booleans())
def test_euler_backends_bit_identical(form, N, seed, store):
    rng = np.random.default_rng(seed)
    n, m = form.A.shape[0], form.B.shape[1]
    x0 = rng.uniform(-1, 1, n)
    U = rng.uniform(-0.1, 0.1, (N, m))
    a, fa = kernels.euler_affine(form, x0, 0.5 / N, U, store, backend="python")
    b, fb = kernels.euler_affine(form, x0, 0.5 / N, U, store, backend="compiled")
    assert fa == fb
    assert np.array_equal(a, b)


@given(forms, st.integers(1, 150), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_rk4_backends_bit_identical(form, steps, every, seed):
    rng = np.random.default_rng(seed)
    n, m = form.A.shape[0], form.B.shape[1]
    tn = np.sort(np.concatenate([[0.0, 1.0], rng.uniform(0, 1, 5)]))
    tn = np.insert(tn, 3, tn[3])  # one jump pair
    un = rng.uniform(-1, 1, (len(tn), m))
    grid = np.linspace(0.0, 1.0, steps + 1)
    x0 = rng.uniform(-1, 1, n)
    a, fa = kernels.rk4_affine_grid(form, x0, grid, tn, un, every=every, backend="python")
    b, fb = kernels.rk4_affine_grid(form, x0, grid, tn, un, every=every, backend="compiled")
    assert fa == fb
    assert np.array_equal(a, b)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.euler_affine(cubic_system().affine_form, [0.0], 0.1, np.zeros((1, 1)), backend="gpu")
