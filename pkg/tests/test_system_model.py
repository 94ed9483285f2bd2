import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from predfb.errors import ValidationError
from predfb.system_model import (
    AffinePolyForm,
    LinearSystem,
    NonlinearSystem,
    check_growth_envelope,
    cubic_system,
    eval_dynamics,
    linear_as_nonlinear,
    zero_system,
)

finite = st.floats(-5, 5, allow_nan=False)


def test_eval_at_origin_is_zero():
    for sys in (cubic_system(), zero_system(2, 3), linear_as_nonlinear(LinearSystem([[1.0]], [[2.0]], [[-1.0]], 1.0))):
        assert np.allclose(eval_dynamics(sys, np.zeros(sys.n), np.zeros(sys.m)), 0.0, atol=1e-12)


def test_double_integrator_at_rest_velocity_zero():
    lin = LinearSystem([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], [[-1.0, -2.0]], 1.0)
    out = eval_dynamics(linear_as_nonlinear(lin), np.array([1.0, 0.0]), np.array([0.0]))
    assert np.array_equal(out, [0.0, 0.0])


def test_cubic_arithmetic():
    sys = cubic_system()
    assert eval_dynamics(sys, np.array([2.0]), np.array([0.0]))[0] == -6.0
    assert sys.k(np.array([3.0]))[0] == -6.0


def test_linear_view_arithmetic():
    sys = linear_as_nonlinear(LinearSystem([[1.0]], [[1.0]], [[-2.0]], 1.0))
    assert sys.f(np.array([3.0]), np.array([1.0]))[0] == 4.0
    assert sys.k(np.array([3.0]))[0] == -6.0
    assert sys.L(0.0) == 2.0


def test_zero_linear_has_unit_envelope():
    sys = linear_as_nonlinear(LinearSystem([[0.0]], [[0.0]], [[0.0]], 1.0))
    assert sys.L(7.0) == 1.0
    assert sys.f(np.array([3.0]), np.array([2.0]))[0] == 0.0


def test_dimension_mismatch_rejected():
    with pytest.raises(ValidationError):
        eval_dynamics(cubic_system(), np.zeros(2), np.zeros(1))


def test_construction_rejects_nonzero_equilibrium():
    with pytest.raises(ValidationError):
        NonlinearSystem(1, 1, lambda x, u: x + 1.0, lambda x: x, lambda s: 1.0)
    with pytest.raises(ValidationError):
        NonlinearSystem(1, 1, lambda x, u: x, lambda x: x + 1.0, lambda s: 1.0)
    with pytest.raises(ValidationError):
        NonlinearSystem(1, 1, lambda x, u: x, lambda x: x, lambda s: 0.5)


def test_linear_shape_checks():
    with pytest.raises(ValidationError):
        LinearSystem([[1.0, 0.0]], [[1.0]], [[1.0]], 1.0)
    with pytest.raises(ValidationError):
        LinearSystem([[1.0]], [[1.0]], [[1.0]], 0.0)


def test_negative_power_rejected():
    with pytest.raises(ValidationError):
        AffinePolyForm([[0.0]], [[1.0]], powers=(-1,), coeffs=[[1.0]])


def test_zero_system_envelope_passes():
    assert check_growth_envelope(zero_system(), 500, 10.0).passed


def test_cubic_quadratic_envelope_passes_large_radius():
    base = cubic_system()
    loose = NonlinearSystem(1, 1, base.f, base.k, lambda s: 1.0 + s * s)
    assert check_growth_envelope(loose, 10_000, 10.0, seed=3).passed
    assert check_growth_envelope(base, 10_000, 10.0, seed=3).passed


def test_cubic_constant_envelope_fails():
    base = cubic_system()
    tight = NonlinearSystem(1, 1, base.f, base.k, lambda s: 1.0)
    rep = check_growth_envelope(tight, 2000, 10.0)
    assert not rep.passed
    assert rep.worst_lipschitz is not None


def test_envelope_check_deterministic():
    a = check_growth_envelope(cubic_system(), 300, 4.0, seed=9)
    b = check_growth_envelope(cubic_system(), 300, 4.0, seed=9)
    assert (a.lipschitz_ratio, a.growth_ratio) == (b.lipschitz_ratio, b.growth_ratio)


@pytest.mark.parametrize("seed", range(5))
def test_random_linear_systems_pass_envelope(seed):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(1, 5), rng.integers(1, 3)
    lin = LinearSystem(rng.normal(size=(n, n)), rng.normal(size=(n, m)), rng.normal(size=(m, n)), 1.0)
    assert check_growth_envelope(linear_as_nonlinear(lin), 400, 3.0, seed=seed).passed


@given(st.lists(finite, min_size=4, max_size=4), st.lists(finite, min_size=2, max_size=2),
       st.lists(finite, min_size=2, max_size=2), st.lists(finite, min_size=2, max_size=2))
def test_linear_view_matches_matrices(a, b, x, u):
    A, B = np.reshape(a, (2, 2)), np.reshape(b, (2, 1))
    lin = LinearSystem(A, B, np.zeros((1, 2)), 1.0)
    out = eval_dynamics(linear_as_nonlinear(lin), np.array(x), np.array(u[:1]))
    assert np.allclose(out, A @ np.array(x) + B @ np.array(u[:1]), rtol=1e-15, atol=1e-14)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_affine_form_describes_cubic(x, u):
    sys = cubic_system()
    assert sys.affine_form(np.array([x]), np.array([u]))[0] == pytest.approx(sys.f(np.array([x]), np.array([u]))[0],
                                                                            rel=1e-14, abs=1e-14)
