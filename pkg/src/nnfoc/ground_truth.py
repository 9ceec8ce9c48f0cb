"""Ground-truth manufacture from PI-only traces.

Steady intervals are maximal runs where the reference is constant and the
measured speed stays within ``band`` of it. Inside each interval the PI
current ``x = iq_pi`` is replaced by an adjusted signal ``x_adj``:

* threshold: ``sign(x) * min(|x|, C)`` with ``C = factor * |x|`` at the
  last in-band step (of the interval, or of the whole reference segment);
* rectify: an exponential from the interval's first value to its last,
  rescaled so it meets both endpoints exactly.

Outside intervals ``x_adj = x``. The stored target is ``x_adj - x``: the
correction that, added to the PI output, reproduces ``x_adj``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .control import SimTrace
from .dataset import Dataset
from .errors import ConfigError, NoSteadyIntervals


@dataclass(frozen=True)
class SteadyInterval:
    start_step: int
    end_step: int  # exclusive
    reference_value: float

    def __post_init__(self):
        if not self.start_step < self.end_step:
            raise ValueError(f"empty interval [{self.start_step}, {self.end_step})")

    def __len__(self) -> int:
        return self.end_step - self.start_step


def saturate_threshold(x, c):
    """Clamp the magnitude of ``x`` to ``c`` keeping its sign."""
    if not c > 0:
        raise ConfigError(f"threshold must be > 0, got {c}")
    if np.ndim(x) == 0:
        return math.copysign(min(abs(x), c), x)
    return np.sign(x) * np.minimum(np.abs(x), c)


def exp_rectify(x_initial, x_final, t, tau):
    """``x_final + (x_initial - x_final) * exp(-t/tau)``."""
    if not tau > 0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    if np.ndim(t) == 0:
        if t < 0:
            raise ConfigError(f"t must be >= 0, got {t}")
        return x_final + (x_initial - x_final) * math.exp(-t / tau)
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise ConfigError("t must be >= 0")
    return x_final + (x_initial - x_final) * np.exp(-t / tau)


def _runs(mask: np.ndarray):
    """Half-open [start, end) runs of True in a boolean array."""
    m = np.concatenate(([False], mask, [False])).astype(np.int8)
    d = np.diff(m)
    return np.flatnonzero(d == 1), np.flatnonzero(d == -1)


def segment_bounds(ref: np.ndarray):
    """Half-open runs of exactly constant reference."""
    n = len(ref)
    if n == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    ch = np.flatnonzero(ref[1:] != ref[:-1]) + 1
    return np.concatenate(([0], ch)), np.concatenate((ch, [n]))


def detect_steady_intervals(trace: SimTrace, band: float, min_len: int) -> list:
    if not band > 0:
        raise ConfigError(f"band must be > 0, got {band}")
    ref, w = trace.omega_ref, trace.omega_meas
    out = []
    for s, e in zip(*segment_bounds(ref)):
        if e - s < min_len:
            continue
        starts, ends = _runs(np.abs(w[s:e] - ref[s]) <= band)
        for a, b in zip(starts, ends):
            if b - a >= max(min_len, 1):
                out.append(SteadyInterval(int(s + a), int(s + b), float(ref[s])))
    return out


@dataclass
class GTMethod:
    kind: str = "threshold"  # threshold | rectify
    band: float = 0.05
    min_len: int = 10
    factor: float = 1.1
    c_scope: str = "interval"  # interval | segment
    tau: float = 5e-3

    def __post_init__(self):
        if self.kind not in ("threshold", "rectify"):
            raise ConfigError(f"unknown ground-truth method {self.kind!r}")
        if self.c_scope not in ("interval", "segment"):
            raise ConfigError(f"unknown c_scope {self.c_scope!r}")
        if not (self.band > 0 and self.tau > 0 and self.factor > 0) or self.min_len < 1:
            raise ConfigError(f"invalid ground-truth parameters {self}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GroundTruth:
    x: np.ndarray
    x_adj: np.ndarray
    intervals: list
    inputs: np.ndarray = field(repr=False)

    @property
    def delta(self) -> np.ndarray:
        return self.x_adj - self.x

    def dataset(self) -> Dataset:
        return Dataset(self.inputs, self.delta)


def _rectified(xi: float, xf: float, n: int, dt: float, tau: float) -> np.ndarray:
    if n == 1:
        return np.array([xi])
    e = np.exp(-np.arange(n) * dt / tau)
    tail = e[-1]
    out = xf + (xi - xf) * (e - tail) / (1.0 - tail)
    out[0], out[-1] = xi, xf  # exact endpoints despite rounding
    return out


def make_ground_truth(trace: SimTrace, method: GTMethod) -> GroundTruth:
    intervals = detect_steady_intervals(trace, method.band, method.min_len)
    if not intervals:
        raise NoSteadyIntervals(
            f"no steady intervals with band={method.band}, min_len={method.min_len}; "
            "widen the band or shorten min_len"
        )
    x = np.asarray(trace.iq_pi, dtype=np.float64)
    adj = x.copy()
    if method.kind == "threshold":
        last_in_segment = {}
        if method.c_scope == "segment":
            starts, _ = segment_bounds(trace.omega_ref)
            for iv in intervals:
                seg = int(np.searchsorted(starts, iv.start_step, side="right"))
                last_in_segment[seg] = iv.end_step - 1
        for iv in intervals:
            a, b = iv.start_step, iv.end_step
            if method.c_scope == "segment":
                seg = int(np.searchsorted(starts, a, side="right"))
                anchor = last_in_segment[seg]
            else:
                anchor = b - 1
            c = method.factor * abs(x[anchor])
            if c > 0:
                adj[a:b] = saturate_threshold(x[a:b], c)
            else:
                adj[a:b] = 0.0
    else:
        for iv in intervals:
            a, b = iv.start_step, iv.end_step
            adj[a:b] = _rectified(x[a], x[b - 1], b - a, trace.sample_time, method.tau)
    # Snap onto values x + delta can represent (moves adj by at most half an
    # ulp of x) so that iq_pi + delta reproduces adj bit for bit.
    adj = x + (adj - x)
    inputs = np.column_stack([trace.omega_ref, trace.omega_meas, x])
    return GroundTruth(x, adj, intervals, inputs)
