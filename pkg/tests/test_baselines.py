import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gwshm.baselines import (ModeWindow, ccd, ccd_sdc, correlation_coefficient, di1, di2,
                             magnitude_spectrum, mode_window, path_class, physics_feature_sdc,
                             physics_features)
from gwshm.errors import (ValidationError, WindowOutsideRecord, ZeroEnergyBand, ZeroEnergyWindow,
                          ZeroVarianceWindow)
from gwshm.synth import Waveform, add_noise

US = 1e-6


@pytest.fixture(scope="module")
def cg0(synth):
    return synth.s0(0.0)[1]


@pytest.fixture(scope="module")
def ref(synth, healthy):
    return synth.reference((1, 5), healthy)


@pytest.fixture(scope="module")
def win(layout, cg0):
    return mode_window(layout, (1, 5), cg0)


@pytest.mark.parametrize("path,cls,t0,t1", [
    ((1, 2), "vertical", 28.0, 61.3),
    ((5, 6), "vertical", 28.0, 61.3),
    ((2, 5), "horizontal", 55.9, 89.3),
])
def test_tabulated_windows(layout, synth, path, cls, t0, t1):
    _, cg = synth.s0(20.0)
    w = mode_window(layout, path, cg)
    assert w.path_class == cls
    assert w.t0 / US == pytest.approx(t0, abs=1.0)
    assert w.t1 / US == pytest.approx(t1, abs=1.0)
    assert w.width == pytest.approx(5 / 150e3)


def test_diagonal_window(layout, synth):
    _, cg = synth.s0(20.0)
    w = mode_window(layout, (2, 4), cg)
    assert path_class(layout, (2, 4)) == "diagonal"
    assert w.t0 / US == pytest.approx(62.5, abs=1.0)


def test_window_outside_record(layout):
    with pytest.raises(WindowOutsideRecord):
        mode_window(layout, (1, 5), 100.0, duration=150e-6)
    with pytest.raises(ValidationError):
        mode_window(layout, (1, 5), 0.0)


def test_identical_signals_give_exact_zero(ref, win, synth, healthy):
    noisy = add_noise(ref, 4.5, 3)
    for w in (ref, noisy):
        assert di1(w, w, win) == 0.0
        assert di2(w, w) == 0.0
        assert ccd(w, w, win) == 0.0


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 100.0))
def test_di1_amplitude_invariant(ref, win, c):
    m = add_noise(ref, 4.5, 1)
    assert di1(ref, m.with_samples(c * m.samples), win) == pytest.approx(di1(ref, m, win), abs=1e-12)


def test_di1_orthogonal_is_one(win):
    n = 1500
    t = np.arange(n) / 10e6
    a = Waveform(np.sin(2 * np.pi * 150e3 * t))
    # quadrature carrier over an integer number of periods inside the window
    w = ModeWindow("diagonal", 0.0, 15 / 150e3)
    b = Waveform(np.cos(2 * np.pi * 150e3 * t))
    assert di1(a, b, w) == pytest.approx(1.0, abs=1e-9)


def test_di1_zero_energy(win):
    z = Waveform(np.zeros(1500))
    with pytest.raises(ZeroEnergyWindow):
        di1(z, z, win)


def test_magnitude_spectrum_parseval(rng):
    x = rng.normal(size=1500)
    w = Waveform(x)
    f, s = magnitude_spectrum(w)
    dt = 1 / w.sample_rate
    # one-sided Parseval with S = FFT * dt
    energy = (s[0] ** 2 + 2 * np.sum(s[1:-1] ** 2) + s[-1] ** 2) / (1500 * dt)
    assert energy == pytest.approx(np.sum(x**2) * dt, rel=1e-10)
    assert f[1] == pytest.approx(w.sample_rate / 1500)


def test_di2_band_validation(ref):
    with pytest.raises(ValidationError):
        di2(ref, ref, 200e3, 100e3)
    z = Waveform(np.zeros(1500))
    with pytest.raises(ZeroEnergyBand):
        di2(z, z)


def test_di2_grows_with_difference(ref):
    a = di2(ref, add_noise(ref, 10.0, 1))
    b = di2(ref, add_noise(ref, 2.0, 1))
    assert 0 < a < b


def test_correlation_coefficient_matches_numpy(ref, win, rng):
    m = add_noise(ref, 4.5, 8)
    i0, i1 = int(round(win.t0 * 10e6)), int(round(win.t1 * 10e6))
    expected = np.corrcoef(ref.samples[i0:i1], m.samples[i0:i1])[0, 1]
    assert correlation_coefficient(ref, m, win) == pytest.approx(expected, rel=1e-12)


def test_ccd_phase_shift_increases(ref, win):
    shifted = ref.with_samples(np.roll(ref.samples, 17))
    assert ccd(ref, shifted, win) > 0.1


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_ccd_range(ref, win, seed):
    m = add_noise(ref, 2.0, seed)
    assert 0.0 <= ccd(ref, m, win) <= 2.0


def test_zero_variance_window(win):
    c = Waveform(np.ones(1500))
    with pytest.raises(ZeroVarianceWindow):
        correlation_coefficient(c, c, win)


def test_grid_mismatch(ref, win):
    with pytest.raises(ValidationError):
        di1(ref, Waveform(ref.samples[:1000]), win)


def test_sdc_tables(layout, synth, healthy, notch, cg0):
    paths = [(1, 5), (1, 2)]
    refs = {p: synth.reference(p, healthy) for p in paths}
    wins = {p: mode_window(layout, p, cg0) for p in paths}
    base = {p: [add_noise(synth.shifted(p, healthy, T), 4.5, i) for i, T in enumerate(range(0, 100, 5))]
            for p in paths}
    same = physics_feature_sdc(refs, base, base, wins, seed=1, k_max=3, n_mc=2000)
    assert same.method == "physics_gmm_kl"
    assert same.paths == paths
    np.testing.assert_allclose(same.values, 0.0, atol=0.02)
    again = physics_feature_sdc(refs, base, base, wins, seed=1, k_max=3, n_mc=2000)
    np.testing.assert_array_equal(same.values, again.values)
    assert physics_features(refs[(1, 5)], base[(1, 5)], wins[(1, 5)]).shape == (20, 2)
    c = ccd_sdc(refs, {p: [refs[p]] for p in paths}, wins)
    assert c.method == "ccd" and np.all(c.values == 0.0)
    mon = {p: [add_noise(synth.shifted(p, notch, 30.0), 4.5, 5)] for p in paths}
    assert np.all(ccd_sdc(refs, mon, wins).values > 0)
