import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nnfoc.errors import ConfigError, DomainError, SimulationDiverged
from nnfoc.plant import (
    SAMPLE_TIME,
    DqVoltage,
    MotorParams,
    MotorState,
    electrical_torque,
    inverse_park,
    park_transform,
    saturate_voltage,
    step_motor,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)
angles = st.floats(-50.0, 50.0, allow_nan=False)


def test_default_plant_nameplate():
    p = MotorParams()
    assert (p.nominal_voltage, p.max_current, p.pole_pairs, p.max_speed) == (11.1, 5.0, 7, 19000.0)
    # no-load speed at nominal voltage sits at the rated speed
    we = p.pole_pairs * p.omega_base
    assert we * p.flux_linkage == pytest.approx(p.nominal_voltage)


@pytest.mark.parametrize("field", ["stator_resistance", "inertia", "friction", "flux_linkage"])
def test_params_must_be_positive(field):
    with pytest.raises(ConfigError):
        MotorParams(**{field: 0.0})


def test_fractional_pole_pairs_rejected():
    with pytest.raises(ConfigError):
        MotorParams(pole_pairs=0)


def test_park_examples():
    assert park_transform(1.0, 0.0, 0.0) == (1.0, 0.0)
    d, q = park_transform(1.0, 0.0, math.pi / 2)
    assert d == pytest.approx(0.0, abs=1e-15) and q == pytest.approx(-1.0, abs=1e-15)
    a, b = inverse_park(*park_transform(0.3, -0.4, 1.1), 1.1)
    assert abs(a - 0.3) <= 1e-12 and abs(b + 0.4) <= 1e-12


@given(finite, finite, angles)
def test_park_round_trip(a, b, th):
    x, y = inverse_park(*park_transform(a, b, th), th)
    assert abs(x - a) <= 1e-12 * max(1.0, abs(a), abs(b))
    assert abs(y - b) <= 1e-12 * max(1.0, abs(a), abs(b))


@pytest.mark.parametrize("bad", [(math.nan, 0.0, 0.0), (0.0, math.inf, 0.0), (0.0, 0.0, math.nan)])
def test_park_rejects_non_finite(bad):
    with pytest.raises(DomainError):
        park_transform(*bad)


def test_saturate_examples():
    assert saturate_voltage(DqVoltage(3, 4), 10) == DqVoltage(3, 4)
    v = saturate_voltage(DqVoltage(6, 8), 5)
    assert v.v_d == pytest.approx(3) and v.v_q == pytest.approx(4)
    assert saturate_voltage(DqVoltage(0, 0), 5) == DqVoltage(0, 0)
    with pytest.raises(DomainError):
        saturate_voltage(DqVoltage(1, 1), 0.0)


@given(finite, finite, st.floats(0.1, 100.0))
def test_saturate_bounds_magnitude_and_keeps_angle(vd, vq, bus):
    v = saturate_voltage(DqVoltage(vd, vq), bus)
    assert v.magnitude <= bus * (1 + 1e-12)
    if math.hypot(vd, vq) > 1e-9:
        assert vd * v.v_q - vq * v.v_d == pytest.approx(0.0, abs=1e-9 * max(1.0, abs(vd), abs(vq)) * bus)


def test_rest_is_equilibrium(plant):
    s = MotorState()
    for _ in range(50):
        s = step_motor(s, DqVoltage(0, 0), 0.0, SAMPLE_TIME, plant)
    assert s == MotorState()


def test_constant_vq_accelerates(plant):
    s = MotorState()
    prev = s.omega_mech
    for _ in range(100):
        s = step_motor(s, DqVoltage(0.0, 1.0), 0.0, SAMPLE_TIME, plant)
        assert s.omega_mech > prev
        prev = s.omega_mech


@pytest.mark.parametrize("dt", [0.0, -1e-5, 2e-4])
def test_dt_out_of_range(plant, dt):
    with pytest.raises(ConfigError):
        step_motor(MotorState(), DqVoltage(0, 0), 0.0, dt, plant)


def test_non_finite_state_reports_step(plant):
    with pytest.raises(SimulationDiverged) as ei:
        step_motor(MotorState(math.nan, 0, 0, 0), DqVoltage(0, 0), 0.0, SAMPLE_TIME, plant, step_index=17)
    assert ei.value.step == 17


def test_power_balance_without_friction():
    # friction must be > 0; 1e-18 puts its power far below the tolerance
    p = MotorParams(friction=1e-18)
    v = DqVoltage(0.0, 2.0)
    dt = 1e-6
    power = lambda st: electrical_torque(st, p) * st.omega_mech
    s = MotorState(0.0, 0.0, 300.0, 0.0)
    for _ in range(300):
        n = step_motor(s, v, 0.0, dt, p, limit_current=False)
        mid = step_motor(s, v, 0.0, dt / 2, p, limit_current=False)
        d_kinetic = 0.5 * p.inertia * (n.omega_mech**2 - s.omega_mech**2)
        work = dt / 6 * (power(s) + 4 * power(mid) + power(n))  # Simpson
        assert d_kinetic == pytest.approx(work, rel=1e-6, abs=1e-15)
        s = n


@given(
    st.floats(-5, 5), st.floats(-5, 5), st.floats(-2000, 2000), st.floats(0, 6.28),
    st.floats(-11.1, 11.1), st.floats(-11.1, 11.1),
)
def test_step_is_deterministic_and_bounded(i_d, i_q, w, th, vd, vq):
    p = MotorParams()
    v = saturate_voltage(DqVoltage(vd, vq), p.nominal_voltage)
    s = MotorState(i_d, i_q, w, th)
    a = step_motor(s, v, 0.0, SAMPLE_TIME, p)
    b = step_motor(s, v, 0.0, SAMPLE_TIME, p)
    assert a == b
    assert abs(a.i_d) <= p.max_current and abs(a.i_q) <= p.max_current
    assert 0.0 <= a.theta_elec < 2 * math.pi


@given(st.floats(-2000, 2000), st.floats(0, 6.28))
def test_passive_decay(w0, th):
    p = MotorParams()
    s = MotorState(0.0, 0.0, w0, th)
    prev = abs(w0)
    for _ in range(300):
        s = step_motor(s, DqVoltage(0, 0), 0.0, SAMPLE_TIME, p)
        assert abs(s.omega_mech) <= prev
        prev = abs(s.omega_mech)


def test_theta_wraps_over_long_runs(plant):
    s = MotorState(0.0, 0.0, 1500.0, 6.2)
    for _ in range(1000):
        s = step_motor(s, DqVoltage(0.0, 8.0), 0.0, SAMPLE_TIME, plant)
        assert 0.0 <= s.theta_elec < 2 * math.pi


def test_params_dict_round_trip():
    p = MotorParams(inertia=7e-6)
    assert MotorParams.from_dict(p.to_dict()) == p
    with pytest.raises(ConfigError):
        MotorParams.from_dict({"bogus": 1.0})
