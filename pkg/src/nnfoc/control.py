"""PI-based field-oriented control cascade with optional network correction.

The speed loop turns the per-unit speed error into a quadrature-current
reference ``iq_pi``; an optional augmentor adds ``delta_iq`` to it
(``iq_adj = iq_pi + delta_iq``, clamped to the current limit); two current
loops with cross-coupling and back-EMF feed-forward produce the d-q voltages.
The direct-axis reference is always 0 (MTPA for a surface-magnet machine).

The whole loop runs in one numba kernel. Augmentors are lowered to a flat
"program" (see :mod:`nnfoc.kernels`) so network inference happens inside
the kernel as well; a PI-only run is the same kernel with an empty program.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numba
import numpy as np

from . import kernels
from .errors import ConfigError, ControllerFault, SimulationDiverged
from .plant import SAMPLE_TIME, MotorParams, _rk4, _saturate
from .profiles import ReferenceProfile

TRACE_COLUMNS = ("step", "t", "omega_ref", "omega_meas", "iq_pi", "delta_iq", "iq_adj", "id", "vd", "vq")


@dataclass(frozen=True)
class PIGains:
    kp: float
    ki: float
    out_min: float
    out_max: float

    def __post_init__(self):
        if not (self.kp >= 0 and self.ki >= 0):
            raise ConfigError(f"PI gains must be >= 0 (kp={self.kp}, ki={self.ki})")
        if not self.out_min < self.out_max:
            raise ConfigError(f"out_min must be < out_max ({self.out_min} >= {self.out_max})")

    def as_array(self) -> np.ndarray:
        return np.array([self.kp, self.ki, self.out_min, self.out_max], dtype=np.float64)


@numba.njit(cache=True)
def _pi_update(integ, err, dt, kp, ki, lo, hi):
    """Backward-Euler PI with conditional integration.

    The integrator absorbs ``ki*err*dt`` before the output is formed, unless
    the resulting output would saturate in the direction the error pushes;
    then integration is skipped for this step.
    """
    cand = integ + ki * err * dt
    u = kp * err + cand
    if (u > hi and err > 0.0) or (u < lo and err < 0.0):
        cand = integ
        u = kp * err + integ
    sat = False
    if u > hi:
        u = hi
        sat = True
    elif u < lo:
        u = lo
        sat = True
    return u, cand, sat


class PIController:
    def __init__(self, gains: PIGains, integrator: float = 0.0):
        self.gains = gains
        self.integrator = float(integrator)
        self.last_saturated = False

    def reset(self) -> None:
        self.integrator = 0.0
        self.last_saturated = False

    def step(self, error: float, dt: float) -> float:
        if not dt > 0:
            raise ConfigError(f"dt must be > 0, got {dt}")
        if not math.isfinite(error):
            raise ControllerFault(f"non-finite error input {error}")
        g = self.gains
        u, self.integrator, self.last_saturated = _pi_update(
            self.integrator, float(error), float(dt), g.kp, g.ki, g.out_min, g.out_max
        )
        return u


def default_gains(
    params: MotorParams,
    zeta: float = 0.6,
    omega_n: float = 30.0,
    current_bandwidth_hz: float = 800.0,
    speed_limit: Optional[float] = 8.0,
):
    """Speed and current gains from pole placement.

    The speed loop sees the plant as ``d(omega_pu)/dt = K*i_q - (B/J)*omega_pu``
    with ``K = kt/(J*omega_base)``; the PI places the closed-loop poles at
    natural frequency ``omega_n`` and damping ``zeta``. With the default
    output limit above ``max_current`` the integrator keeps winding while
    the command clamp is active, so large steps overshoot. Current loops
    cancel the electrical pole (kp = L*wc, ki = R*wc). ``speed_limit=None``
    uses ``max_current``.
    """
    k = params.torque_constant / (params.inertia * params.omega_base)
    a = params.friction / params.inertia
    kp_s = max(0.0, (2.0 * zeta * omega_n - a) / k)
    ki_s = omega_n**2 / k
    wc = 2.0 * math.pi * current_bandwidth_hz
    v = params.nominal_voltage
    lim = params.max_current if speed_limit is None else speed_limit
    speed = PIGains(kp_s, ki_s, -lim, lim)
    i_d = PIGains(params.d_inductance * wc, params.stator_resistance * wc, -v, v)
    i_q = PIGains(params.q_inductance * wc, params.stator_resistance * wc, -v, v)
    return speed, i_d, i_q


@dataclass
class LoopConfig:
    speed_gains: PIGains
    id_gains: PIGains
    iq_gains: PIGains
    sample_time: float = SAMPLE_TIME
    augmentor: Optional[object] = None
    augment_scale: Optional[float] = None
    load_torque: float = 0.0

    def __post_init__(self):
        if not self.sample_time > 0:
            raise ConfigError("sample_time must be > 0")
        if self.augment_scale is not None and not self.augment_scale > 0:
            raise ConfigError("augment_scale must be > 0")

    @classmethod
    def default(cls, params: MotorParams, **kw) -> "LoopConfig":
        speed, i_d, i_q = default_gains(params)
        return cls(speed, i_d, i_q, **kw)

    def with_augmentor(self, augmentor, augment_scale=None) -> "LoopConfig":
        return replace(self, augmentor=augmentor, augment_scale=augment_scale)

    def effective_scale(self) -> float:
        if self.augment_scale is not None:
            return float(self.augment_scale)
        if self.augmentor is None:
            return 0.0
        return float(self.augmentor.target_scale)


@dataclass
class SimTrace:
    """Per-step closed-loop record. Time is stored as the integer step index;
    ``t`` is derived as ``step * sample_time``."""

    sample_time: float
    omega_ref: np.ndarray
    omega_meas: np.ndarray
    iq_pi: np.ndarray
    delta_iq: np.ndarray
    iq_adj: np.ndarray
    id: np.ndarray
    vd: np.ndarray
    vq: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.omega_ref)

    @property
    def step(self) -> np.ndarray:
        return np.arange(len(self), dtype=np.int64)

    @property
    def t(self) -> np.ndarray:
        return self.step * self.sample_time

    def head(self, n: int) -> "SimTrace":
        return SimTrace(
            self.sample_time,
            *(getattr(self, c)[:n] for c in TRACE_COLUMNS[2:]),
            meta=dict(self.meta),
        )

    def to_csv(self, path=None, stride: int = 1) -> str:
        """CSV text (every ``stride``-th step), optionally written to ``path``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        cols = [getattr(self, c) for c in TRACE_COLUMNS[2:]]
        t = self.t
        for k in range(0, len(self), stride):
            w.writerow([k, repr(float(t[k]))] + [repr(float(c[k])) for c in cols])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path, sample_time: float = SAMPLE_TIME) -> "SimTrace":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != TRACE_COLUMNS:
                raise ConfigError(f"unexpected trace header {header}")
            rows = np.array([[float(x) for x in r] for r in reader], dtype=np.float64)
        if len(rows) == 0:
            return cls(sample_time, *(np.zeros(0) for _ in TRACE_COLUMNS[2:]))
        return cls(sample_time, *(rows[:, i].copy() for i in range(2, len(TRACE_COLUMNS))))


@numba.njit(cache=True)
def _closed_loop(ref, P, g_speed, g_id, g_iq, dt, load, prog_i, prog_f, prog_q, mode, scale, out):
    """Run the cascade over ``ref``; fills ``out`` (n x 8) and returns the
    number of completed rows (n on success, the failing index otherwise)."""
    n = ref.shape[0]
    x = np.zeros(4)
    int_w = 0.0
    int_d = 0.0
    int_q = 0.0
    wbase = P[9]
    poles = P[6]
    imax = P[7]
    vbus = P[8]
    ld = P[1]
    lq = P[2]
    psi = P[3]
    inp = np.zeros(3)
    for k in range(n):
        w_pu = x[2] / wbase
        e_w = ref[k] - w_pu
        iq_pi, int_w, _ = _pi_update(int_w, e_w, dt, g_speed[0], g_speed[1], g_speed[2], g_speed[3])
        delta = 0.0
        if mode != 0:
            inp[0] = ref[k]
            inp[1] = w_pu
            inp[2] = iq_pi
            delta = scale * kernels.run_program(inp, prog_i, prog_f, prog_q, mode)
        iq_adj = iq_pi + delta
        if iq_adj > imax:
            iq_adj = imax
        elif iq_adj < -imax:
            iq_adj = -imax
        we = poles * x[2]
        ud, int_d, _ = _pi_update(int_d, 0.0 - x[0], dt, g_id[0], g_id[1], g_id[2], g_id[3])
        uq, int_q, _ = _pi_update(int_q, iq_adj - x[1], dt, g_iq[0], g_iq[1], g_iq[2], g_iq[3])
        vd = ud - we * lq * x[1]
        vq = uq + we * (ld * x[0] + psi)
        vd, vq, _ = _saturate(vd, vq, vbus)
        out[k, 0] = ref[k]
        out[k, 1] = w_pu
        out[k, 2] = iq_pi
        out[k, 3] = delta
        out[k, 4] = iq_adj
        out[k, 5] = x[0]
        out[k, 6] = vd
        out[k, 7] = vq
        x = _rk4(x, vd, vq, load, dt, P, True)
        if not (np.isfinite(x[0]) and np.isfinite(x[1]) and np.isfinite(x[2]) and np.isfinite(delta)):
            return k
    return n


def run_closed_loop(
    profile: ReferenceProfile | np.ndarray,
    cfg: LoopConfig,
    plant: MotorParams,
    duration: float | None = None,
) -> SimTrace:
    """Simulate ``duration`` seconds (default: the profile's duration).

    ``profile`` may also be a pre-sampled reference array (one value per step).
    """
    dt = cfg.sample_time
    if isinstance(profile, ReferenceProfile):
        if duration is None:
            duration = profile.duration
        if duration > profile.duration + 1e-12:
            raise ConfigError(f"profile covers {profile.duration} s, asked for {duration} s")
        ref = profile.sample(dt)[: int(round(duration / dt)) + 1]
    else:
        ref = np.asarray(profile, dtype=np.float64)
        if duration is not None:
            ref = ref[: int(round(duration / dt)) + 1]
    ref = np.ascontiguousarray(ref, dtype=np.float64)

    if cfg.augmentor is None:
        prog = kernels.EMPTY_PROGRAM
    else:
        prog = cfg.augmentor.program()
    scale = cfg.effective_scale()
    out = np.zeros((len(ref), 8))
    done = _closed_loop(
        ref,
        plant.as_array(),
        cfg.speed_gains.as_array(),
        cfg.id_gains.as_array(),
        cfg.iq_gains.as_array(),
        float(dt),
        float(cfg.load_torque),
        prog.ints,
        prog.floats,
        prog.qints,
        prog.mode,
        scale,
        out,
    )
    trace = SimTrace(dt, *(out[:, i].copy() for i in range(8)))
    if done < len(ref):
        raise SimulationDiverged(done, f"closed loop diverged at step {done}", trace=trace.head(done))
    return trace
