import math

import numpy as np
import pytest

from predfb.errors import NonFiniteStateError, ValidationError
from predfb.input_history import PiecewiseLinearSignal
from predfb.oracle import order_ratio, rk4_reference, rk4_states
from predfb.system_model import LinearSystem, NonlinearSystem, cubic_system, linear_as_nonlinear, zero_system

from conftest import BACKENDS


def _scalar(a, b):
    return linear_as_nonlinear(LinearSystem([[a]], [[b]], [[0.0]], 1.0))


def test_decay_closed_form():
    res = rk4_reference(_scalar(-1.0, 0.0), [1.0], lambda s: [0.0], 0.0, 1.0, 1000)
    assert res.state[0] == pytest.approx(math.exp(-1.0), abs=1e-10)
    assert res.error_estimate >= 0


def test_zero_field_exact():
    res = rk4_reference(zero_system(2), [0.3, -2.0], lambda s: [0.0], 0.0, 5.0, 7)
    assert np.array_equal(res.state, [0.3, -2.0])


@pytest.mark.parametrize("c", [0.5, -2.0])
def test_constant_input_closed_form(c):
    sig = PiecewiseLinearSignal([0.0, 1.0], [[c], [c]])
    res = rk4_reference(_scalar(1.0, 1.0), [0.0], sig, 0.0, 1.0, 1000)
    assert res.state[0] == pytest.approx(c * (math.e - 1.0), abs=1e-10)


def test_generic_and_kernel_paths_agree():
    base = cubic_system()
    generic = NonlinearSystem(1, 1, base.f, base.k, base.L)
    sig = PiecewiseLinearSignal(np.linspace(0, 1, 9), np.sin(np.arange(9.0)))
    a = rk4_reference(base, [0.4], sig, 0.0, 1.0, 400).state
    b = rk4_reference(generic, [0.4], sig, 0.0, 1.0, 400).state
    assert a[0] == pytest.approx(b[0], rel=1e-13)


@pytest.mark.parametrize("system,x0", [
    (_scalar(-1.0, 0.0), [1.0]),
    (cubic_system(), [0.8]),
    (linear_as_nonlinear(LinearSystem([[0.0, 1.0], [-2.0, -0.3]], [[0.0], [1.0]], [[0.0, 0.0]], 1.0)), [1.0, 0.0]),
])
def test_fourth_order_per_doubling(system, x0):
    sampler = lambda s: [math.sin(2 * s)]
    ratio = order_ratio(system, x0, sampler, 0.0, 2.0, 40)
    assert 1 / 22 <= ratio <= 1 / 10


def test_states_every_and_final_row():
    out = rk4_states(_scalar(-1.0, 0.0), [1.0], lambda s: [0.0], 0.0, 1.0, 10, every=3)
    assert out.shape == (5, 1)
    full = rk4_states(_scalar(-1.0, 0.0), [1.0], lambda s: [0.0], 0.0, 1.0, 10)
    assert np.array_equal(out[:4, 0], full[[0, 3, 6, 9], 0])
    assert out[-1, 0] == full[-1, 0]


def test_validation_and_blow_up():
    with pytest.raises(ValidationError):
        rk4_reference(_scalar(1.0, 0.0), [1.0], lambda s: [0.0], 0.0, 1.0, 0)
    blow = NonlinearSystem(1, 1, lambda x, u: x**3, lambda x: 0 * x, lambda s: max(1.0, s * s))
    with pytest.raises(NonFiniteStateError), np.errstate(over="ignore", invalid="ignore"):
        rk4_reference(blow, [10.0], lambda s: [0.0], 0.0, 10.0, 10)


@pytest.mark.parametrize("backend", BACKENDS)
def test_kernel_blow_up_reports_step(backend):
    sys = cubic_system()
    sig = PiecewiseLinearSignal([0.0, 1.0], [[0.0], [0.0]])
    with pytest.raises(NonFiniteStateError) as info:
        rk4_states(sys, [-1e6], sig, 0.0, 1.0, 5, backend=backend)
    assert info.value.step is not None
