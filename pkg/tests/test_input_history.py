import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from predfb.errors import CoverageError, ValidationError
from predfb.input_history import InputHistory, InputWindow, PiecewiseLinearSignal


def test_constant_preload_value():
    hist = InputHistory.constant(1.0, [2.5])
    assert hist.value_at(-0.5)[0] == 2.5


def test_consecutive_records_are_additive():
    hist = InputHistory(1.0, 1, 0.1, retention=5.0)
    hist.record(-1.0, 0.0, [(t, [t]) for t in np.linspace(-1.0, 0.0, 11)])
    hist.record(0.0, 1.0, [(t, [1.0 - t]) for t in np.linspace(0.0, 1.0, 11)])
    total = hist.integral(-1.0, 1.0)[0]
    assert total == pytest.approx(hist.integral(-1.0, 0.0)[0] + hist.integral(0.0, 1.0)[0], rel=1e-12)


def test_gap_and_overlap_rejected():
    hist = InputHistory(1.0, 1, 0.1)
    hist.record(-1.0, 0.0, [(t, [0.0]) for t in np.linspace(-1.0, 0.0, 11)])
    with pytest.raises(ValidationError, match="gap"):
        hist.record(0.5, 1.0, [(0.5, [0.0]), (0.6, [0.0])])
    with pytest.raises(ValidationError, match="overlap"):
        hist.record(-0.5, 0.0, [(-0.5, [0.0]), (-0.4, [0.0])])


def test_coarse_samples_rejected():
    hist = InputHistory(1.0, 1, 0.1)
    with pytest.raises(ValidationError):
        hist.record(-1.0, 0.0, [(-1.0, [0.0]), (0.0, [0.0])])


def test_sup_norm_examples():
    assert InputHistory.constant(1.0, [0.0]).sup_norm_window(0.0) == 0.0
    assert InputHistory.constant(1.0, [-1.5]).sup_norm_window(0.0) == 1.5
    hist = InputHistory(1.0, 1, 0.5)
    hist.record(-1.0, -0.5, [(-1.0, [1.0]), (-0.5, [1.0])])
    hist.record(-0.5, 0.0, [(-0.5, [-3.0]), (0.0, [-3.0])])
    assert hist.sup_norm_window(0.0) == 3.0


def test_window_excludes_right_endpoint():
    hist = InputHistory(1.0, 1, 0.5)
    hist.record(-1.0, 0.0, [(-1.0, [1.0]), (-0.5, [1.0]), (0.0, [1.0])])
    hist.start_segment(0.0, [9.0])
    hist.append(0.5, [9.0])
    assert hist.sup_norm_window(0.0) == 1.0
    assert hist.window(0.0).norm == 1.0


def test_insufficient_coverage_raises():
    hist = InputHistory.constant(1.0, [1.0])
    with pytest.raises(CoverageError):
        hist.sup_norm_window(0.5)
    with pytest.raises(CoverageError):
        hist.integral(-2.0, 0.0)


def test_integral_examples():
    sig = PiecewiseLinearSignal([0.0, 2.0], [[3.0], [3.0]])
    assert sig.integral(0.5, 1.75)[0] == 1.25 * 3.0
    ramp = PiecewiseLinearSignal(np.linspace(0, 1, 7), np.linspace(0, 1, 7))
    assert ramp.integral(0.0, 1.0)[0] == pytest.approx(0.5, abs=1e-12)
    assert np.array_equal(ramp.integral(0.3, 0.3), [0.0])
    t = np.linspace(0.0, 1.0, 1001)
    sine = PiecewiseLinearSignal(t, np.sin(t))
    assert sine.integral(0.0, 1.0)[0] == pytest.approx(1.0 - math.cos(1.0), abs=1e-6)


def test_jump_pair_semantics():
    sig = PiecewiseLinearSignal([0.0, 1.0, 1.0, 2.0], [[0.0], [1.0], [5.0], [5.0]])
    assert sig.value(1.0, "left")[0] == 1.0
    assert sig.value(1.0, "right")[0] == 5.0
    assert sig.integral(0.0, 2.0)[0] == pytest.approx(0.5 + 5.0)
    with pytest.raises(ValidationError):
        PiecewiseLinearSignal([0.0, 1.0, 1.0, 1.0], [[0.0], [1.0], [2.0], [3.0]])


def test_window_rebasing():
    hist = InputHistory(0.5, 1, 0.05, retention=3.0)
    hist.record(-0.5, 1.0, [(t, [t]) for t in np.linspace(-0.5, 1.0, 31)])
    w = hist.window(0.8)
    assert isinstance(w, InputWindow)
    assert w.tau == 0.5
    assert w.value(0.0)[0] == pytest.approx(0.3)
    assert w.integral(0.0, 0.5)[0] == pytest.approx(hist.integral(0.3, 0.8)[0], rel=1e-12)


def test_eviction_does_not_change_window_answers():
    tau = 0.5
    keep = InputHistory(tau, 1, 0.01, retention=100.0)
    evict = InputHistory(tau, 1, 0.01, retention=tau)
    grid = np.linspace(-tau, 4.0, 451)
    for h in (keep, evict):
        h.record(-tau, 0.0, [(t, [math.sin(3 * t)]) for t in grid[:51]])
    for k in range(50, 450, 25):
        seg = [(t, [math.sin(3 * t)]) for t in grid[k:k + 26]]
        for h in (keep, evict):
            h.record(seg[0][0], seg[-1][0], seg)
        t_now = evict.end
        assert evict.sup_norm_window(t_now) == keep.sup_norm_window(t_now)
        # prefix sums start from different origins: equal up to rounding
        assert evict.integral(t_now - tau, t_now)[0] == pytest.approx(keep.integral(t_now - tau, t_now)[0],
                                                                       rel=1e-12, abs=1e-14)
        assert np.array_equal(evict.window(t_now).values, keep.window(t_now).values)
    assert evict.start > keep.start


def test_csv_round_trip_keeps_jumps():
    hist = InputHistory(1.0, 2, 0.5, retention=4.0)
    hist.record(-1.0, 0.0, [(-1.0, [0.0, 1.0]), (-0.5, [1.0, 1.0]), (0.0, [2.0, 1.0])])
    hist.start_segment(0.0, [7.0, -1.0])
    hist.append(0.5, [6.0, -1.0])
    text = hist.to_csv()
    assert text.splitlines()[0] == "time,u_1,u_2"
    back = InputHistory.from_csv(text, 1.0)
    assert back.to_csv() == text
    assert back.value_at(0.0, "left")[0] == 2.0
    assert back.value_at(0.0, "right")[0] == 7.0


signals = st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=30)


@given(signals, st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_integral_additivity(vals, fa, fb, fc):
    t = np.linspace(0.0, 1.0, len(vals))
    sig = PiecewiseLinearSignal(t, vals)
    a, b, c = sorted([fa, fb, fc])
    lhs = sig.integral(a, c)[0]
    rhs = sig.integral(a, b)[0] + sig.integral(b, c)[0]
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12 * max(1.0, max(map(abs, vals))))


@given(signals, st.floats(0, 1), st.floats(0, 1))
def test_integral_bounded_by_sup(vals, fa, fb):
    t = np.linspace(0.0, 1.0, len(vals))
    sig = PiecewiseLinearSignal(t, vals)
    a, b = sorted([fa, fb])
    assert abs(sig.integral(a, b)[0]) <= (b - a) * sig.sup_norm(a, b) * (1 + 1e-12) + 1e-300


@given(signals, st.integers(2, 5))
def test_sup_norm_invariant_under_refinement(vals, factor):
    t = np.linspace(0.0, 1.0, len(vals))
    coarse = PiecewiseLinearSignal(t, vals)
    tf = np.linspace(0.0, 1.0, (len(vals) - 1) * factor + 1)
    fine = PiecewiseLinearSignal(tf, coarse.value(tf))
    for a, b in ((0.0, 1.0), (0.1, 0.7), (0.33, 0.34)):
        assert fine.sup_norm(a, b) == pytest.approx(coarse.sup_norm(a, b), rel=1e-12, abs=1e-14)


@given(signals, st.lists(st.floats(0, 1), min_size=1, max_size=10), st.floats(0.01, 1.0))
def test_vectorised_sup_norms_match_scalar(vals, queries, width):
    t = np.linspace(0.0, 1.0, len(vals))
    sig = PiecewiseLinearSignal(t, vals)
    q = np.array(queries)
    out = sig.sup_norms(q, width)
    ref = [sig.sup_norm(max(s - width, 0.0), s) for s in q]
    assert np.allclose(out, ref, rtol=0, atol=0)


@given(signals, st.integers(1, 40))
def test_step_integrals_match_single_integrals(vals, cells):
    t = np.linspace(0.0, 1.0, len(vals))
    sig = PiecewiseLinearSignal(t, vals)
    edges = np.linspace(0.0, 1.0, cells + 1)
    many = sig.step_integrals(edges)[:, 0]
    one = [sig.integral(edges[i], edges[i + 1])[0] for i in range(cells)]
    assert np.allclose(many, one, rtol=1e-12, atol=1e-12)


def test_sup_norm_of_tiny_values_does_not_underflow():
    sig = PiecewiseLinearSignal(np.linspace(0.0, 1.0, 3), [[0.0, 0.0], [0.0, 0.0], [3e-280, 4e-280]])
    assert sig.sup_norm(0.0, 1.0) == pytest.approx(5e-280, rel=1e-12)
    assert sig.sup_norms(np.array([1.0]), 1.0)[0] == pytest.approx(5e-280, rel=1e-12)
