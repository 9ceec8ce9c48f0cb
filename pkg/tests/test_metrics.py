import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nnfoc.control import SimTrace
from nnfoc.errors import DomainError
from nnfoc.metrics import LoopMetrics, compute_metrics, relative_change, segment_overshoots

DT = 1.0 / 30000.0


def trace(ref, w):
    ref, w = np.asarray(ref, float), np.asarray(w, float)
    z = np.zeros(len(ref))
    return SimTrace(DT, ref, w, z, z, z, z, z, z)


def test_perfect_tracking():
    m = compute_metrics(trace(np.full(1000, 0.5), np.full(1000, 0.5)))
    assert (m.max_deviation, m.avg_deviation, m.max_overshoot) == (0.0, 0.0, 0.0)


def test_peak_after_window():
    n = 3000
    w = np.minimum(np.linspace(0, 3, n), 1.0)
    w[900:1000] = 1.24  # after the 10 ms window
    m = compute_metrics(trace(np.ones(n), w))
    assert m.max_overshoot == pytest.approx(0.24)


def test_hand_listed_deviations():
    ref = np.zeros(5)
    w = np.array([0.1, -0.3, 0.2, 0.0, 0.4])
    m = compute_metrics(trace(ref, w))
    assert m.max_deviation == pytest.approx(0.4)
    assert m.avg_deviation == pytest.approx(0.2)


def test_downward_step_overshoot_counts_undershoot():
    n = 2000
    ref = np.full(n, 0.2)
    w = np.full(n, 0.2)
    w[0] = 0.8  # approaching from above
    w[600:700] = 0.15
    m = compute_metrics(trace(ref, w))
    assert m.max_overshoot == pytest.approx(0.05)


def test_window_excludes_transient():
    n = 2000
    w = np.ones(n)
    w[:100] = 1.5  # inside the first 10 ms (300 steps)
    assert compute_metrics(trace(np.ones(n), w)).max_overshoot == 0.0


def test_no_constant_segment_gives_undefined():
    ramp = np.linspace(0, 1, 500)
    m = compute_metrics(trace(ramp, ramp))
    assert m.max_overshoot is None
    assert "null" in m.to_json()


def test_empty_trace():
    with pytest.raises(DomainError):
        compute_metrics(trace([], []))


def test_relative_change():
    assert relative_change(0.5, 1.0) == -0.5
    assert relative_change(None, 1.0) is None
    assert relative_change(1.0, 0.0) is None


@given(arrays(np.float64, st.integers(1, 400), elements=st.floats(-1, 1)))
def test_avg_not_above_max(w):
    m = compute_metrics(trace(np.full(len(w), 0.3), w))
    assert m.avg_deviation <= m.max_deviation + 1e-15
    assert m.max_overshoot is None or m.max_overshoot >= 0


@given(arrays(np.float64, 200, elements=st.floats(-1, 1)), st.randoms())
def test_average_is_order_insensitive(w, r):
    ref = np.zeros(len(w))
    perm = list(range(len(w)))
    r.shuffle(perm)
    a = compute_metrics(trace(ref, w)).avg_deviation
    b = compute_metrics(trace(ref, w[perm])).avg_deviation
    assert a == b


def test_segment_overshoots_lists_each_segment():
    ref = np.r_[np.full(600, 0.5), np.full(600, 0.8)]
    out = segment_overshoots(ref, ref, DT)
    assert [s for s, _ in out] == [0, 600]
