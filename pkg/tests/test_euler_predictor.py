import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from predfb.errors import GridCountOverflow, NonFiniteStateError, ValidationError
from predfb.euler_predictor import (
    apriori_bound,
    euler_run,
    euler_trajectory,
    grid_count,
    lemma_oracles,
    predict,
)
from predfb.input_history import InputHistory, InputWindow
from predfb.linear_design import linear_predict
from predfb.lyapunov_design import CompletenessCertificate, build_bounds_pack
from predfb.oracle import rk4_reference, rk4_states
from predfb.system_model import LinearSystem, NonlinearSystem, cubic_system, linear_as_nonlinear, zero_system
from predfb.verification import random_window
from predfb.worked import cubic_certificates, cubic_setup

from conftest import BACKENDS

TAU = 0.5


@pytest.fixture(scope="module")
def cubic():
    return cubic_setup(TAU, 0.25)


def _window(values, tau=TAU):
    v = np.asarray(values, dtype=float).reshape(-1, 1)
    return InputWindow(np.linspace(0.0, tau, len(v)), v, tau)


def _scalar(a=1.0, b=1.0, tau=1.0):
    return linear_as_nonlinear(LinearSystem([[a]], [[b]], [[0.0]], tau))


def _reference_grid_count(pack, R, x_norm, u_sup):
    # direct evaluation of the formula, no logarithms
    s = x_norm + u_sup
    if s == 0:
        return 1
    A, B, tau = pack.A(s), pack.B(s), pack.tau
    first = B * (math.exp(tau * A) - 1.0) / (2.0 * R(s) * A)
    second = pack.P(pack.Q(s) + u_sup) / (2.0 * pack.c)
    return 1 + math.floor(tau * max(first, second))


def test_zero_field_keeps_state():
    xs = euler_trajectory(zero_system(2), [1.5, -2.0], InputWindow([0, 1], [[3.0], [3.0]], 1.0), 17)
    assert np.array_equal(xs, np.tile([1.5, -2.0], (18, 1)))


@pytest.mark.parametrize("backend", BACKENDS)
def test_scalar_growth_product(backend):
    xs = euler_trajectory(_scalar(), [1.0], _window([0.0, 0.0], 1.0), 65, backend=backend)
    assert xs[-1, 0] == pytest.approx((1 + 1 / 65) ** 65, rel=1e-13)
    assert xs[-1, 0] == pytest.approx(2.6977, abs=1e-4)


def test_generic_path_matches_kernel_on_piecewise_linear_input():
    base = cubic_system()
    generic = NonlinearSystem(1, 1, base.f, base.k, base.L)
    w = _window([0.1, -0.3, 0.2, 0.05, 0.0])
    a = euler_trajectory(base, [0.7], w, 40)
    b = euler_trajectory(generic, [0.7], w, 40)
    assert np.allclose(a, b, rtol=1e-13, atol=1e-15)


def test_store_false_returns_final_state(cubic):
    w = _window([0.1, 0.2])
    full = euler_trajectory(cubic[0], [0.3], w, 33)
    last = euler_trajectory(cubic[0], [0.3], w, 33, store=False)
    assert np.array_equal(full[-1:], last)


def test_first_order_convergence():
    sys = cubic_system()
    w = _window([0.2, -0.1, 0.3, 0.0])
    ref = rk4_reference(sys, [0.6], w, 0.0, TAU, 200_000).state[0]
    errs = [abs(euler_trajectory(sys, [0.6], w, N, store=False)[0, 0] - ref) for N in (128, 256, 512, 1024)]
    for e0, e1 in zip(errs, errs[1:]):
        assert 0.45 <= e1 / e0 <= 0.55


def test_validation_errors():
    with pytest.raises(ValidationError):
        euler_trajectory(cubic_system(), [0.0], _window([0, 0]), 0)
    with pytest.raises(ValidationError):
        euler_trajectory(cubic_system(), [0.0, 1.0], _window([0, 0]), 4)


@pytest.mark.parametrize("backend", BACKENDS)
def test_non_finite_names_step(backend):
    with pytest.raises(NonFiniteStateError) as info:
        euler_trajectory(cubic_system(), [1e5], _window([0, 0], 10.0), 10, backend=backend)
    assert info.value.step is not None and info.value.step >= 0


def test_grid_count_zero_data(cubic):
    assert grid_count(cubic[3], cubic[4], 0.0, 0.0) == 1


@given(st.floats(1e-4, 0.6), st.floats(0, 1))
def test_grid_count_matches_direct_formula(s, w):
    _, _, _, pack, _ = cubic_setup(TAU, 0.25)
    R = lambda v: v
    x, u = w * s, (1 - w) * s
    N = grid_count(pack, R, x, u, n_max=10**9)
    assert N == _reference_grid_count(pack, R, x, u)
    assert N >= TAU * pack.P(pack.Q(s) + u) / (2 * pack.c)
    assert apriori_bound(pack, s, N) <= R(s) * (1 + 1e-12)


def test_grid_count_overflow_reports_requirement(cubic):
    pack, design = cubic[3], cubic[4]
    with pytest.raises(GridCountOverflow) as info:
        grid_count(pack, design, 0.5, 0.0)
    assert info.value.required > 1e30
    assert info.value.cap == 10**7


def test_grid_count_rejects_nonpositive_target(cubic):
    with pytest.raises(ValidationError):
        grid_count(cubic[3], lambda s: 0.0, 0.1, 0.0)
    with pytest.raises(ValidationError):
        grid_count(cubic[3], lambda s: s, -0.1, 0.0)


def test_predict_zero_data(cubic):
    sys, _, _, pack, design = cubic
    hist = InputHistory.constant(TAU, [0.0])
    out = predict(sys, pack, design, [0.0], hist, 0.0)
    assert out.N == 1 and out.z[0] == 0.0
    assert out.to_record() == {"z": [0.0], "N": 1, "h": TAU, "apriori_bound": 0.0, "accuracy_target": 0.0}


def test_predict_linear_matches_linear_predict():
    lin = LinearSystem([[0.3, 1.0], [-1.0, -0.2]], [[0.0], [1.0]], [[0.0, 0.0]], 1.0)
    sys = linear_as_nonlinear(lin)
    cc, _ = cubic_certificates(1.0, 1.0)
    pack = build_bounds_pack(cc, sys.L, 1.0)
    hist = InputHistory(1.0, 1, 0.01)
    hist.record(-1.0, 0.0, [(t, [math.cos(5 * t)]) for t in np.linspace(-1.0, 0.0, 101)])
    out = predict(sys, pack, lambda s: s, [0.2, -0.4], hist, 0.0, force_N=97)
    z = linear_predict(lin, [0.2, -0.4], hist, 0.0, 97)
    assert np.array_equal(out.z, z)


@settings(max_examples=25, deadline=None)
@given(st.floats(1e-3, 0.5), st.floats(0, 1), st.integers(0, 2**31))
def test_predictor_output_invariants(s, w, seed):
    sys, cc, _, pack, _ = cubic_setup(TAU, 0.25)
    rng = np.random.default_rng(seed)
    window = random_window(rng, TAU, 1, (1 - w) * s)
    out = predict(sys, pack, lambda v: v, [w * s], window, 0.0)
    assert out.h * out.N == pytest.approx(TAU, rel=1e-15)
    assert out.apriori_bound <= out.accuracy_target * (1 + 1e-12)
    assert abs(out.z[0]) <= out.state_bound
    assert out.state_bound == min(out.accuracy_target + cc.a_tau(out.s), pack.Q(out.s))


def test_predict_rejects_mismatched_window(cubic):
    sys, _, _, pack, design = cubic
    with pytest.raises(ValidationError):
        predict(sys, pack, design, [0.0], _window([0.0, 0.0], 1.0), 0.0)


def _stable_N(pack, s, u_sup):
    """Smallest grid count meeting the step-size hypothesis alone."""
    return 1 + math.floor(pack.tau * pack.P(pack.Q(s) + u_sup) / (2 * pack.c))


def _linear_certificate(tau, theta=0.5):
    # x' = a x + b u with |a|, |b| <= 1: 2x(ax + bu) <= (2 + theta) x^2 + u^2 / theta
    c = 2.0 + theta
    return CompletenessCertificate(
        W=lambda x: 1.0 + np.sum(np.square(x), axis=-1),
        gradW=lambda x: 2.0 * np.asarray(x, dtype=float),
        H=lambda s: 2.0,
        c=c,
        p=lambda s: np.square(s) / theta,
        sublevel_radius=lambda T: math.sqrt(max(T - 1.0, 0.0)),
        W_env=lambda s: 1.0 + s * s,
        a_tau=lambda s: math.exp(tau) * s,
        a_r=lambda s: math.exp(tau) * s,
        M_tau=math.exp(tau),
    )


def _oracle_on_grid(sys, x0, window, N, k=200):
    return rk4_states(sys, x0, window, 0.0, window.tau, N * k, every=k)


def test_lemma_oracles_zero_is_degenerate(cubic):
    pack = build_bounds_pack(cubic_certificates(TAU, TAU)[0], lambda s: 1.0, TAU)
    run = euler_run(zero_system(), [0.0], _window([0.0, 0.0]), 12)
    rep = lemma_oracles(zero_system(), pack, run, np.zeros((13, 1)))
    assert rep.passed
    assert rep.w_slack == 0.0 and rep.state_slack == pack.Q(0.0)
    assert 0.0 <= rep.error_slack < 1e-14


@pytest.mark.parametrize("x0", [-1.0, -0.4, 0.2, 0.7])
def test_lemma_oracles_cubic_constant_input(cubic, x0):
    sys, pack = cubic[0], cubic[3]
    w = _window([0.3, 0.3])
    s = abs(x0) + 0.3
    N = max(_stable_N(pack, s, 0.3), 64)
    run = euler_run(sys, [x0], w, N)
    rep = lemma_oracles(sys, pack, run, _oracle_on_grid(sys, [x0], w, N))
    assert rep.passed, rep.to_dict()
    assert s > 0


def test_lemma_oracles_scalar_linear(rng):
    sys = _scalar(1.0, 1.0, 1.0)
    cc = _linear_certificate(1.0)
    assert cc.validate(sys) == []
    pack = build_bounds_pack(cc, sys.L, 1.0)
    for _ in range(5):
        window = random_window(rng, 1.0, 1, rng.uniform(0, 1))
        x0 = [rng.uniform(-1, 1)]
        N = grid_count(pack, lambda v: 0.5, abs(x0[0]), window.norm)
        run = euler_run(sys, x0, window, N)
        rep = lemma_oracles(sys, pack, run, _oracle_on_grid(sys, x0, window, N, 50))
        assert rep.passed, rep.to_dict()


def test_lemma_oracles_detects_wrong_reference(cubic):
    sys, pack = cubic[0], cubic[3]
    w = _window([0.3, 0.3])
    N = _stable_N(pack, 0.8, 0.3)
    run = euler_run(sys, [0.5], w, N)
    ref = _oracle_on_grid(sys, [0.5], w, N, 20) + 0.5
    assert lemma_oracles(sys, pack, run, ref).error_violations > 0


def test_lemma_oracles_step_precondition(cubic):
    sys, pack = cubic[0], cubic[3]
    run = euler_run(sys, [1.0], _window([0.3, 0.3]), 1)
    with pytest.raises(ValidationError):
        lemma_oracles(sys, pack, run, np.zeros((2, 1)))
