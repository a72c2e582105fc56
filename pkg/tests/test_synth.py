import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import correlate, welch

from gwshm.analysis import morlet_envelope
from gwshm.errors import DamageOutsidePlate, ValidationError
from gwshm.synth import (CLASS_NAMES, CLASS_ORDER, DEFAULT_DAMAGE_PARAMS, DamageKind, DamageSpec,
                         ExcitationPulse, SensorLayout, Waveform, add_noise, amplitude_factor,
                         derive_seed, fractional_delay, generate_dataset, hanning_pulse,
                         kind_from_label, one_hot, pink_noise, propagate_path, realized_snr_db,
                         temperature_shift, time_grid)

FS = 10e6


def test_time_grid_length():
    assert time_grid().size == 1500


def test_pulse_edges_and_peak():
    p = ExcitationPulse()
    t = np.linspace(0, p.duration, 200_001)
    v = hanning_pulse(p, t).samples
    assert v[0] == 0.0
    assert 0.9 <= np.max(np.abs(v)) <= 1.0
    assert t[np.argmax(p.envelope(t))] == pytest.approx(2.5 / p.center_frequency, abs=1e-9)
    assert np.all(p(np.array([-1e-6, p.duration + 1e-6])) == 0)


def test_pulse_matches_closed_form():
    f = 150e3
    t = time_grid()
    ref = np.where(t <= 5 / f, 0.5 * (1 - np.cos(2 * np.pi * f * t / 5)) * np.sin(2 * np.pi * f * t), 0)
    np.testing.assert_allclose(hanning_pulse(ExcitationPulse(), t).samples, ref, atol=1e-12)


def test_pulse_amplitude_scales():
    t = time_grid()
    a = hanning_pulse(ExcitationPulse(amplitude=2.5), t).samples
    b = hanning_pulse(ExcitationPulse(), t).samples
    np.testing.assert_allclose(a, 2.5 * b)


def test_non_uniform_grid_rejected():
    with pytest.raises(ValidationError):
        hanning_pulse(ExcitationPulse(), np.array([0.0, 1e-7, 3e-7, 4e-7]))


def test_layout_geometry(layout):
    assert layout.plate_size == (530.0, 530.0)
    assert layout.distance_mm(1, 2) == pytest.approx(150.0)
    assert layout.distance_mm(2, 5) == pytest.approx(300.0)
    assert [SensorLayout.path_name(p) for p in layout.paths] == [
        "P12", "P15", "P24", "P25", "P26", "P53", "P56"]
    assert layout.parse_path("p15") == (1, 5)


@pytest.mark.parametrize("data", [
    dict(plate_size=[10, 10], sensors=[{"id": 1, "x": 1, "y": 1}, {"id": 1, "x": 2, "y": 2}], paths=[]),
    dict(plate_size=[10, 10], sensors=[{"id": 1, "x": 11, "y": 1}], paths=[]),
    dict(plate_size=[10, 10], sensors=[{"id": 1, "x": 1, "y": 1}], paths=[[1, 2]]),
    dict(plate_size=[10, 10], sensors=[{"id": 1, "x": 1, "y": 1}, {"id": 2, "x": 1, "y": 1}], paths=[[1, 2]]),
])
def test_layout_validation(data):
    with pytest.raises(ValidationError):
        SensorLayout.from_dict(data)


def test_labels_are_one_hot_bijection():
    codes = {one_hot(k) for k in CLASS_ORDER}
    assert codes == {(1, 0, 0, 0), (0, 1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1)}
    for k in CLASS_ORDER:
        assert kind_from_label(one_hot(k)) is k
    assert CLASS_NAMES[kind_from_label((1, 0, 0, 0))] == "baseline"


def test_damage_spec_invariants():
    with pytest.raises(ValidationError):
        DamageSpec(DamageKind.NONE, scatter_amplitude=0.1)
    with pytest.raises(ValidationError):
        DamageSpec(DamageKind.RIVET_HOLE, global_phase_leak=0.1)
    d = DamageSpec.default("notch", (1.0, 2.0))
    assert (d.scatter_amplitude, d.extra_phase, d.global_phase_leak) == DEFAULT_DAMAGE_PARAMS[DamageKind.NOTCH]
    assert d.label == (0, 0, 0, 1)


def test_waveform_rejects_nonfinite():
    with pytest.raises(ValidationError):
        Waveform(np.array([0.0, np.nan]))


def test_healthy_is_direct_arrival_only(synth, layout, healthy):
    cp, cg = synth.s0(0.0)
    w = propagate_path(layout, (1, 2), healthy, ExcitationPulse(), cg, cp)
    d = layout.distance_m(1, 2)
    t = time_grid()
    p = ExcitationPulse()
    ref = p.envelope(t - d / cg) * np.sin(2 * np.pi * p.center_frequency * (t - d / cp)) / math.sqrt(d)
    np.testing.assert_allclose(w.samples, ref, atol=1e-12)


def test_direct_arrival_lag_matches_group_delay(synth, layout, healthy):
    # matched-filter oracle: correlate the received record with the transmitted pulse
    cp, cg = synth.s0(0.0)
    p = ExcitationPulse()
    for path in [(1, 2), (2, 5), (1, 5)]:
        w = propagate_path(layout, path, healthy, p, cg, cp)
        tx = hanning_pulse(p, time_grid()).samples
        env = np.abs(correlate(w.samples, tx, mode="full"))
        # carrier phase moves the correlation peak by less than half a period
        lag = np.argmax(env) - (tx.size - 1)
        expected = layout.distance_m(*path) / cg * FS
        assert abs(lag - expected) <= 0.5 * FS / p.center_frequency


def test_collinear_damage_echo_coincides_with_direct(layout, synth):
    cp, cg = synth.s0(0.0)
    p = ExcitationPulse()
    spec = DamageSpec(DamageKind.RIVET_HOLE, (265.0, 190.0), 0.3, 0.0)
    w = propagate_path(layout, (1, 5), spec, p, cg, cp)
    base = propagate_path(layout, (1, 5), DamageSpec(), p, cg, cp)
    # on the segment the echo path length equals d, so the echo is a scaled copy of the direct wave
    np.testing.assert_allclose(w.samples, base.samples * (1 + 0.3), atol=1e-12)


def test_reciprocity(layout, synth, notch):
    cp, cg = synth.s0(0.0)
    a = propagate_path(layout, (1, 5), notch, ExcitationPulse(), cg, cp)
    b = propagate_path(layout, (5, 1), notch, ExcitationPulse(), cg, cp)
    np.testing.assert_array_equal(a.samples, b.samples)


def test_notch_leaks_into_every_path(layout, synth, notch, healthy):
    cp, cg = synth.s0(0.0)
    spec = DamageSpec(DamageKind.NOTCH, notch.position, 0.0, 0.0, 0.15)
    a = propagate_path(layout, (5, 6), spec, ExcitationPulse(), cg, cp).samples
    b = propagate_path(layout, (5, 6), healthy, ExcitationPulse(), cg, cp).samples
    assert np.max(np.abs(a - b)) > 0.05 * np.max(np.abs(b))


def test_damage_outside_plate(layout, synth):
    cp, cg = synth.s0(0.0)
    with pytest.raises(DamageOutsidePlate):
        propagate_path(layout, (1, 2), DamageSpec("notch", (600.0, 10.0), 0.3), ExcitationPulse(), cg, cp)


def test_amplitude_factor():
    assert amplitude_factor(100.0) == 1 + 100 / 3550
    assert amplitude_factor(100.0) == pytest.approx(1.02817, abs=5e-6)


def test_temperature_shift_identity_at_reference(synth, healthy):
    w0 = synth.reference((1, 2), healthy)
    _, cg0 = synth.s0(0.0)
    out = temperature_shift(w0, 0.0, 0.15, cg0, cg0)
    np.testing.assert_array_equal(out.samples, w0.samples)


def test_fractional_delay_integer_is_exact(rng):
    x = rng.normal(size=64)
    np.testing.assert_array_equal(fractional_delay(x, 5.0)[5:], x[:-5])
    np.testing.assert_array_equal(fractional_delay(x, 5.0)[:5], 0)
    np.testing.assert_array_equal(fractional_delay(x, -3.0)[:-3], x[3:])


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 20.0))
def test_fractional_delay_of_band_limited_tone(delay):
    n = np.arange(400)
    f = 0.05  # cycles per sample, well inside the passband
    y = fractional_delay(np.sin(2 * np.pi * f * n), delay)
    ref = np.sin(2 * np.pi * f * (n - delay))
    core = slice(60, 340)
    np.testing.assert_allclose(y[core], ref[core], atol=2e-3)


def test_shift_moves_envelope_peak(synth, healthy, layout):
    path = (2, 5)
    w0 = synth.reference(path, healthy)
    d = layout.distance_m(*path)
    _, cg0 = synth.s0(0.0)
    _, cg100 = synth.s0(100.0)
    wT = synth.shifted(path, healthy, 100.0, w0)
    dt = d / cg100 - d / cg0
    e0 = np.argmax(morlet_envelope(w0, 150e3).magnitude)
    eT = np.argmax(morlet_envelope(wT, 150e3).magnitude)
    assert dt > 0
    assert abs((eT - e0) - dt * FS) <= 1


def test_shift_model_correlates_with_resynthesis(synth, healthy, notch):
    for damage in (healthy, notch):
        a = synth.shifted((1, 5), damage, 50.0).samples
        b = synth.resynthesize((1, 5), damage, 50.0).samples
        assert np.corrcoef(a, b)[0, 1] > 0.99


def test_noise_zero_power_limit(synth, healthy):
    w = synth.reference((1, 2), healthy)
    np.testing.assert_array_equal(add_noise(w, math.inf, 3).samples, w.samples)


def test_noise_deterministic(synth, healthy):
    w = synth.reference((1, 2), healthy)
    np.testing.assert_array_equal(add_noise(w, 4.5, 9).samples, add_noise(w, 4.5, 9).samples)
    assert not np.array_equal(add_noise(w, 4.5, 9).samples, add_noise(w, 4.5, 10).samples)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 30.0), st.integers(0, 2**32))
def test_realized_snr_exact(snr, seed):
    t = time_grid()
    clean = hanning_pulse(ExcitationPulse(), t - 20e-6)
    noisy = add_noise(clean, snr, seed)
    assert realized_snr_db(clean.samples, noisy.samples) == pytest.approx(snr, abs=0.1)


def test_realized_snr_ordering(synth, healthy):
    w = synth.reference((1, 5), healthy)
    snrs = [10.0, 4.5, 2.0]
    got = [realized_snr_db(w.samples, add_noise(w, s, 5).samples) for s in snrs]
    assert got[0] > got[1] > got[2]
    assert 4.4 <= got[1] <= 4.6


def test_pink_noise_spectrum_falls(rng):
    x = pink_noise(2**16, rng)
    f, pxx = welch(x, nperseg=4096)
    lo = pxx[(f > 1e-3) & (f < 4e-3)].mean()
    hi = pxx[(f > 0.1) & (f < 0.4)].mean()
    assert lo > 10 * hi


def test_derive_seed_is_order_free():
    a = derive_seed(42, 1, 2, 3)
    assert derive_seed(42, 1, 2, 3) == a
    assert derive_seed(42, 1, 3, 2) != a
    assert derive_seed(43, 1, 2, 3) != a


def test_dataset_shape_and_labels(synth, layout):
    damages = [DamageSpec.default(k, layout.damage_position) for k in CLASS_ORDER]
    recs = generate_dataset(synth, damages, [0.0, 50.0], [4.5], 2, 7, paths=[(1, 2), (5, 6)])
    assert len(recs) == 2 * 4 * 2 * 1 * 2
    assert all(len(w) == 1500 for w in recs)
    assert {w.class_label for w in recs} == {one_hot(k) for k in CLASS_ORDER}
    assert len({w.seed for w in recs}) == len(recs)


def test_dataset_single_record(synth, healthy):
    assert len(generate_dataset(synth, [healthy], [0.0], [4.5], 1, 0, paths=[(1, 2)])) == 1


def test_dataset_record_independent_of_request(synth, layout, healthy, notch):
    # a record depends on its own (path, damage, T, snr, rep) key, not on what else was generated
    full = generate_dataset(synth, [healthy, notch], [0.0, 10.0], [4.5], 2, 11)
    part = generate_dataset(synth, [healthy], [0.0, 10.0], [4.5], 2, 11, paths=[(1, 2)])
    np.testing.assert_array_equal(full[0].samples, part[0].samples)
    np.testing.assert_array_equal(full[3].samples, part[3].samples)


def test_dataset_rejects_zero_reps(synth, healthy):
    with pytest.raises(ValidationError):
        generate_dataset(synth, [healthy], [0.0], [4.5], 0, 0)
