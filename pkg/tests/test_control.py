import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import short_profile
from nnfoc.control import (
    TRACE_COLUMNS,
    LoopConfig,
    PIController,
    PIGains,
    SimTrace,
    default_gains,
    run_closed_loop,
)
from nnfoc.errors import ConfigError, ControllerFault, SimulationDiverged
from nnfoc.plant import SAMPLE_TIME
from nnfoc.profiles import case2_profile, constant_profile
from nnfoc.tinyfc import ZeroAugmentor


def test_pure_proportional():
    assert PIController(PIGains(1.0, 0.0, -10, 10)).step(0.5, 0.1) == 0.5


def test_backward_euler_accumulation():
    c = PIController(PIGains(0.0, 10.0, -10, 10))
    assert c.step(1.0, 0.1) == pytest.approx(1.0)
    assert c.step(1.0, 0.1) == pytest.approx(2.0)


def test_anti_windup_freezes_integrator():
    c = PIController(PIGains(100.0, 5.0, -5.0, 5.0), integrator=0.3)
    assert c.step(1.0, 0.1) == 5.0
    assert c.integrator == 0.3
    assert c.last_saturated


def test_integrator_unwinds_when_error_reverses():
    c = PIController(PIGains(100.0, 5.0, -5.0, 5.0), integrator=0.3)
    c.step(-0.001, 0.1)
    assert c.integrator < 0.3


@pytest.mark.parametrize("kw", [dict(kp=-1, ki=0), dict(kp=0, ki=-1)])
def test_negative_gains_rejected(kw):
    with pytest.raises(ConfigError):
        PIGains(**kw, out_min=-1, out_max=1)


def test_empty_output_range_rejected():
    with pytest.raises(ConfigError):
        PIGains(1, 1, 1.0, 1.0)


def test_bad_inputs():
    c = PIController(PIGains(1, 1, -1, 1))
    with pytest.raises(ControllerFault):
        c.step(math.nan, 0.1)
    with pytest.raises(ConfigError):
        c.step(0.1, 0.0)


@given(
    st.floats(0, 100), st.floats(0, 1000), st.floats(0.1, 10),
    st.lists(st.floats(-10, 10), min_size=1, max_size=40),
)
def test_output_always_within_limits(kp, ki, lim, errors):
    c = PIController(PIGains(kp, ki, -lim, lim))
    for e in errors:
        u = c.step(e, 1e-3)
        assert -lim <= u <= lim
        assert math.isfinite(c.integrator)


def test_default_gains_are_positive(plant):
    for g in default_gains(plant):
        assert g.kp > 0 and g.ki > 0


def test_zero_reference_stays_at_rest(plant, loop):
    tr = run_closed_loop(constant_profile(0.0, 0.05), loop, plant)
    assert not tr.omega_meas.any() and not tr.iq_pi.any()


def test_case_length(plant, loop):
    tr = run_closed_loop(case2_profile(3), loop, plant)
    assert len(tr) == 300001
    assert tr.t[-1] == 300000 * SAMPLE_TIME


def test_zero_augmentor_is_bit_identical(plant, loop):
    prof = short_profile()
    a = run_closed_loop(prof, loop, plant)
    b = run_closed_loop(prof, loop.with_augmentor(ZeroAugmentor()), plant)
    for c in TRACE_COLUMNS[2:]:
        assert np.array_equal(getattr(a, c), getattr(b, c)), c


def test_commanded_current_respects_limit(plant, loop):
    class Pushy(ZeroAugmentor):
        target_scale = 50.0

        def program(self):
            from nnfoc import kernels

            pb = kernels.ProgramBuilder()
            pb.alloc(3)
            pb.emit(kernels.OP_NORM, 3, pb.const([0.0, 0.0, -1.0]), pb.const([1.0, 1.0, 1.0]))
            return _constant_program(pb)

    tr = run_closed_loop(short_profile(), loop.with_augmentor(Pushy()), plant)
    assert np.max(np.abs(tr.iq_adj)) <= plant.max_current
    assert np.any(np.abs(tr.iq_adj) == plant.max_current)


def _constant_program(pb):
    """Float program whose output is tanh(2) regardless of input."""
    from nnfoc import kernels

    out = pb.alloc(1)
    pb.emit(
        kernels.OP_DENSE, 1, 0, 3, out, 1, pb.const([0.0, 0.0, 0.0]), pb.const([2.0]),
        kernels.ACTIVATIONS["tanh"], -1,
    )
    pb.emit(kernels.OP_OUT, out)
    return pb.build(1)


def test_steady_state_tracking(plant, loop):
    tr = run_closed_loop(constant_profile(0.5, 2.0), loop, plant)
    err = np.abs(tr.omega_ref - tr.omega_meas)
    assert err[-1] < 1e-3
    assert np.all(err[-3000:] < 1e-3)


def test_id_is_regulated_to_zero(plant, loop):
    tr = run_closed_loop(short_profile(), loop, plant)
    # transients during voltage saturation are allowed; on average id stays near 0
    assert np.mean(np.abs(tr.id)) < 0.01
    assert abs(tr.id[-1]) < 1e-3


def test_divergence_carries_prefix(plant):
    cfg = LoopConfig.default(plant, load_torque=1e308)
    with pytest.raises(SimulationDiverged) as ei:
        run_closed_loop(constant_profile(0.5, 0.01), cfg, plant)
    assert ei.value.trace is not None
    assert len(ei.value.trace) == ei.value.step


def test_trace_csv_round_trip(plant, loop, tmp_path):
    tr = run_closed_loop(constant_profile(0.3, 0.01), loop, plant)
    text = tr.to_csv(tmp_path / "t.csv")
    assert text.splitlines()[0] == "step,t,omega_ref,omega_meas,iq_pi,delta_iq,iq_adj,id,vd,vq"
    back = SimTrace.from_csv(tmp_path / "t.csv")
    for c in TRACE_COLUMNS[2:]:
        assert np.array_equal(getattr(back, c), getattr(tr, c))


def test_timestamps_are_step_multiples(plant, loop):
    tr = run_closed_loop(constant_profile(0.3, 0.01), loop, plant)
    assert np.array_equal(tr.step, np.arange(len(tr)))
    assert np.array_equal(tr.t, np.arange(len(tr)) * SAMPLE_TIME)


def test_profile_must_cover_duration(plant, loop):
    with pytest.raises(ConfigError):
        run_closed_loop(constant_profile(0.3, 0.01), loop, plant, duration=0.02)


def test_augment_scale_validated(plant):
    with pytest.raises(ConfigError):
        LoopConfig.default(plant, augment_scale=0.0)
