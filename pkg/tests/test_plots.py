import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import short_profile
from nnfoc.control import run_closed_loop
from nnfoc.errors import DomainError
from nnfoc.plots import decimate, plot_comparison, plot_trace


@pytest.fixture(scope="module")
def trace(plant):
    from nnfoc.control import LoopConfig

    return run_closed_loop(short_profile(), LoopConfig.default(plant), plant)


@given(st.integers(1, 20000), st.integers(0, 10**6))
def test_decimation_keeps_extremes(n, seed):
    y = np.random.default_rng(seed).normal(size=n)
    x = np.arange(n, dtype=float)
    dx, dy = decimate(x, y, 400)
    assert len(dx) <= max(n if n <= 400 else 400, 1)
    assert dy.max() == y.max() and dy.min() == y.min()
    assert np.all(np.diff(dx) > 0)


def test_plot_is_deterministic(tmp_path, trace):
    a = plot_trace(trace, tmp_path / "a.svg", title="x & y")
    b = plot_trace(trace, tmp_path / "b.svg", title="x & y")
    assert a.read_bytes() == b.read_bytes()
    text = a.read_text()
    assert text.count("<polyline") == 4 and "x &amp; y" in text


def test_window_and_adjusted(tmp_path, trace):
    p = plot_trace(trace, tmp_path / "w.svg", adjusted=trace.iq_pi * 0.5, window=(0.1, 0.3))
    assert "0.100 s" in p.read_text()
    with pytest.raises(DomainError):
        plot_trace(trace, tmp_path / "e.svg", window=(5.0, 6.0))


def test_comparison(tmp_path, trace):
    p = plot_comparison({"PI": trace, "again": trace}, tmp_path / "c.svg", title="cmp")
    assert p.read_text().count("<polyline") == 3
    with pytest.raises(DomainError):
        plot_comparison({}, tmp_path / "n.svg")
