"""PMSM plant in the rotor (d-q) frame with an ideal voltage-source inverter.

State vector layout used by the compiled kernels: ``[i_d, i_q, omega_mech, theta_elec]``.
Parameters are packed into a flat float64 array (see :meth:`MotorParams.as_array`)
so the closed loop can run inside numba without Python objects.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numba
import numpy as np

from .errors import ConfigError, DomainError, SimulationDiverged

TWO_PI = 2.0 * math.pi
SAMPLE_TIME = 1.0 / 30000.0  # 30 kHz PWM period, 3.3333e-5 s
MAX_DT = 1e-4

# indices into the packed parameter array
P_R, P_LD, P_LQ, P_PSI, P_J, P_B, P_POLES, P_IMAX, P_VBUS, P_WBASE = range(10)


def rpm_to_rad_s(rpm: float) -> float:
    return rpm * TWO_PI / 60.0


@dataclass(frozen=True)
class MotorParams:
    """Plant constants.

    Nameplate values follow a BR2804-1700KV drone motor. The electrical and
    mechanical constants are not published for that motor; the flux linkage
    is chosen so the no-load speed at the nominal voltage is close to
    ``max_speed``, and inertia/friction describe a small rotor carrying a
    light propeller-like load.
    """

    nominal_voltage: float = 11.1
    max_current: float = 5.0
    pole_pairs: int = 7
    max_speed: float = 19000.0  # rpm
    stator_resistance: float = 0.11
    d_inductance: float = 18e-6
    q_inductance: float = 18e-6
    flux_linkage: float = 11.1 / (7 * 19000.0 * TWO_PI / 60.0)
    inertia: float = 5e-6
    friction: float = 2e-6

    def __post_init__(self):
        if int(self.pole_pairs) != self.pole_pairs or self.pole_pairs < 1:
            raise ConfigError(f"pole_pairs must be an integer >= 1, got {self.pole_pairs}")
        for f in fields(self):
            value = getattr(self, f.name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"{f.name} must be finite and > 0, got {value}")

    @property
    def omega_base(self) -> float:
        """Mechanical speed (rad/s) corresponding to 1.0 per-unit."""
        return rpm_to_rad_s(self.max_speed)

    @property
    def torque_constant(self) -> float:
        """N*m per amp of i_q for a surface-magnet machine (amplitude-invariant)."""
        return 1.5 * self.pole_pairs * self.flux_linkage

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.stator_resistance,
                self.d_inductance,
                self.q_inductance,
                self.flux_linkage,
                self.inertia,
                self.friction,
                float(self.pole_pairs),
                self.max_current,
                self.nominal_voltage,
                self.omega_base,
            ],
            dtype=np.float64,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MotorParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown plant parameters: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class MotorState:
    i_d: float = 0.0
    i_q: float = 0.0
    omega_mech: float = 0.0
    theta_elec: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.i_d, self.i_q, self.omega_mech, self.theta_elec], dtype=np.float64)

    @classmethod
    def from_array(cls, x) -> "MotorState":
        return cls(float(x[0]), float(x[1]), float(x[2]), float(x[3]))


@dataclass(frozen=True)
class DqVoltage:
    v_d: float
    v_q: float

    @property
    def magnitude(self) -> float:
        return math.hypot(self.v_d, self.v_q)


def _check_finite(*values):
    for v in values:
        if not math.isfinite(v):
            raise DomainError(f"non-finite input: {values}")


def park_transform(alpha: float, beta: float, theta: float) -> tuple[float, float]:
    """Stationary (alpha, beta) -> rotating (d, q) at electrical angle theta."""
    _check_finite(alpha, beta, theta)
    c, s = math.cos(theta), math.sin(theta)
    return alpha * c + beta * s, -alpha * s + beta * c


def inverse_park(d: float, q: float, theta: float) -> tuple[float, float]:
    _check_finite(d, q, theta)
    c, s = math.cos(theta), math.sin(theta)
    return d * c - q * s, d * s + q * c


@numba.njit(cache=True)
def _saturate(vd, vq, dc_bus):
    mag = math.sqrt(vd * vd + vq * vq)
    if mag > dc_bus:
        k = dc_bus / mag
        return vd * k, vq * k, True
    return vd, vq, False


def saturate_voltage(v: DqVoltage, dc_bus: float) -> DqVoltage:
    """Clamp the voltage vector magnitude to ``dc_bus`` keeping its angle."""
    if not dc_bus > 0:
        raise DomainError(f"dc_bus must be > 0, got {dc_bus}")
    vd, vq, _ = _saturate(float(v.v_d), float(v.v_q), float(dc_bus))
    return DqVoltage(vd, vq)


@numba.njit(cache=True)
def _derivs(x, vd, vq, load, P):
    i_d = x[0]
    i_q = x[1]
    w = x[2]
    we = P[P_POLES] * w
    psi = P[P_PSI]
    ld = P[P_LD]
    lq = P[P_LQ]
    out = np.empty(4)
    out[0] = (vd - P[P_R] * i_d + we * lq * i_q) / ld
    out[1] = (vq - P[P_R] * i_q - we * (ld * i_d + psi)) / lq
    torque = 1.5 * P[P_POLES] * (psi * i_q + (ld - lq) * i_d * i_q)
    out[2] = (torque - P[P_B] * w - load) / P[P_J]
    out[3] = we
    return out


@numba.njit(cache=True)
def _rk4(x, vd, vq, load, dt, P, limit_current):
    k1 = _derivs(x, vd, vq, load, P)
    k2 = _derivs(x + 0.5 * dt * k1, vd, vq, load, P)
    k3 = _derivs(x + 0.5 * dt * k2, vd, vq, load, P)
    k4 = _derivs(x + dt * k3, vd, vq, load, P)
    nx = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    # theta is only ever used through sin/cos; wrapping keeps it exact over long runs
    nx[3] = nx[3] % (2.0 * math.pi)
    if limit_current:
        imax = P[P_IMAX]
        nx[0] = min(max(nx[0], -imax), imax)
        nx[1] = min(max(nx[1], -imax), imax)
    return nx


def electrical_torque(state: MotorState, params: MotorParams) -> float:
    p = params
    return 1.5 * p.pole_pairs * (
        p.flux_linkage * state.i_q + (p.d_inductance - p.q_inductance) * state.i_d * state.i_q
    )


def step_motor(
    state: MotorState,
    v: DqVoltage,
    load_torque: float,
    dt: float,
    params: MotorParams,
    *,
    limit_current: bool = True,
    step_index: int = 0,
) -> MotorState:
    """Advance the plant by one RK4 step of length ``dt``.

    With ``limit_current`` the inverter's over-current protection clamps
    both current components to ``max_current`` after integration.
    """
    if not (0 < dt <= MAX_DT):
        raise ConfigError(f"dt must lie in (0, {MAX_DT}], got {dt}")
    x = state.as_array()
    if not np.all(np.isfinite(x)):
        raise SimulationDiverged(step_index, f"non-finite state at step {step_index}: {state}")
    nx = _rk4(x, float(v.v_d), float(v.v_q), float(load_torque), float(dt), params.as_array(), limit_current)
    if not np.all(np.isfinite(nx)):
        raise SimulationDiverged(step_index, f"state became non-finite at step {step_index}")
    return MotorState.from_array(nx)
