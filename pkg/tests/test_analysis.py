import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gwshm.analysis import estimate_group_velocity, morlet_envelope, moving_average, time_of_flight
from gwshm.errors import DegenerateEnvelope, ValidationError
from gwshm.synth import ExcitationPulse, Waveform, hanning_pulse, time_grid

FS = 10e6


def test_unit_tone_has_unit_envelope():
    t = time_grid()
    w = Waveform(np.sin(2 * np.pi * 150e3 * t))
    env = morlet_envelope(w, 150e3).magnitude
    np.testing.assert_allclose(env[400:1100], 1.0, atol=1e-2)


def test_envelope_peak_at_pulse_centre():
    p = ExcitationPulse()
    t = time_grid()
    w = hanning_pulse(p, t - 30e-6)
    peak = t[np.argmax(morlet_envelope(w, 150e3).magnitude)]
    assert peak == pytest.approx(30e-6 + p.duration / 2, abs=2 / FS)


def test_envelope_rejects_bad_frequency():
    with pytest.raises(ValidationError):
        morlet_envelope(Waveform(np.ones(10)), 6e6)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 800))
def test_tof_recovers_integer_shift(shift):
    p = ExcitationPulse()
    t = time_grid()
    tx = hanning_pulse(p, t)
    rx = Waveform(np.roll(tx.samples, shift))
    tof = time_of_flight(morlet_envelope(tx, 150e3), morlet_envelope(rx, 150e3))
    assert tof == pytest.approx(shift / FS, abs=1.5 / FS)


def test_tof_rejects_zero_envelope():
    t = time_grid()
    tx = hanning_pulse(ExcitationPulse(), t)
    with pytest.raises(DegenerateEnvelope):
        time_of_flight(morlet_envelope(tx, 150e3), morlet_envelope(Waveform(np.zeros(t.size)), 150e3))


def test_group_velocity_loop_closure(layout, synth, healthy):
    p = ExcitationPulse()
    t = time_grid()
    _, cg = synth.s0(20.0)
    rx = synth.resynthesize((1, 2), healthy, 20.0)
    est = estimate_group_velocity(layout, (1, 2), hanning_pulse(p, t), rx, 150e3)
    assert est == pytest.approx(cg, rel=0.02)


def test_nonpositive_tof_rejected(layout):
    t = time_grid()
    w = hanning_pulse(ExcitationPulse(), t)
    with pytest.raises(DegenerateEnvelope):
        estimate_group_velocity(layout, (1, 2), w, w, 150e3)


def test_moving_average_values():
    w = Waveform(np.array([1.0, 2.0, 3.0, 4.0, 5.0]))
    out = moving_average(w, 3).samples
    # edge windows shrink to the available samples
    np.testing.assert_allclose(out, [1.5, 2.0, 3.0, 4.0, 4.5])


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.integers(1, 7).map(lambda k: 2 * k - 1), st.integers(8, 60))
def test_moving_average_preserves_constants_and_length(c, kernel, n):
    out = moving_average(Waveform(np.full(n, c)), kernel).samples
    assert out.size == n
    np.testing.assert_allclose(out, c, atol=1e-12)


def test_moving_average_kernel_one_is_identity(rng):
    x = rng.normal(size=50)
    np.testing.assert_array_equal(moving_average(Waveform(x), 1).samples, x)


@pytest.mark.parametrize("kernel", [0, 2, -1])
def test_moving_average_rejects_bad_kernel(kernel):
    with pytest.raises(ValidationError):
        moving_average(Waveform(np.ones(5)), kernel)
