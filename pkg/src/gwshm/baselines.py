"""Comparison methods: GMM over the physics features (DI1, DI2), and windowed CCD."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .analysis import moving_average
from .errors import (ValidationError, WindowOutsideRecord, ZeroEnergyBand, ZeroEnergyWindow,
                     ZeroVarianceWindow)
from .gmm import fit_selected, kl_divergence
from .localization import SdcEntry, SdcTable
from .synth import ExcitationPulse, SensorLayout, Waveform


@dataclass(frozen=True)
class ModeWindow:
    path_class: str  # vertical, horizontal or diagonal
    t0: float  # s
    t1: float  # s

    @property
    def width(self) -> float:
        return self.t1 - self.t0


def path_class(layout: SensorLayout, path: tuple[int, int]) -> str:
    (x0, y0), (x1, y1) = layout.position(path[0]), layout.position(path[1])
    if x0 == x1:
        return "vertical"
    if y0 == y1:
        return "horizontal"
    return "diagonal"


def mode_window(layout: SensorLayout, path: tuple[int, int], c_g: float,
                pulse: ExcitationPulse | None = None, duration: float | None = None) -> ModeWindow:
    """Arrival t0 = d/c_g and exit t1 = t0 + pulse width, clipped to the record."""
    if not c_g > 0:
        raise ValidationError("group velocity must be positive")
    pulse = pulse or ExcitationPulse()
    t0 = layout.distance_m(*path) / c_g
    t1 = t0 + pulse.duration
    if duration is not None:
        if t0 >= duration:
            raise WindowOutsideRecord(f"arrival {t0 * 1e6:.1f} us is after the record end")
        t1 = min(t1, duration)
    return ModeWindow(path_class(layout, path), t0, t1)


def _window(w: Waveform, win: ModeWindow) -> np.ndarray:
    fs = w.sample_rate
    i0, i1 = int(round(win.t0 * fs)), int(round(win.t1 * fs))
    if i0 < 0 or i1 > w.samples.size or i1 <= i0:
        raise WindowOutsideRecord(f"window [{win.t0}, {win.t1}] s does not fit the record")
    return w.samples[i0:i1]


def _check_grid(a: Waveform, b: Waveform) -> None:
    if a.samples.size != b.samples.size or a.sample_rate != b.sample_rate:
        raise ValidationError("baseline and monitoring records must share a sample grid")


def di1(baseline: Waveform, monitoring: Waveform, win: ModeWindow) -> float:
    """One minus the normalised inner product magnitude over the mode window."""
    _check_grid(baseline, monitoring)
    b, m = _window(baseline, win), _window(monitoring, win)
    cross = float(np.dot(b, m))
    den = float(np.dot(b, b)) * float(np.dot(m, m))
    if den == 0:
        raise ZeroEnergyWindow("no energy inside the mode window")
    return 1.0 - math.sqrt(min(1.0, cross * cross / den))


def magnitude_spectrum(w: Waveform) -> tuple[np.ndarray, np.ndarray]:
    """One-sided |S(f)| with S = FFT * dt over the full record."""
    dt = 1.0 / w.sample_rate
    return np.fft.rfftfreq(w.samples.size, dt), np.abs(np.fft.rfft(w.samples)) * dt


def di2(baseline: Waveform, monitoring: Waveform, f0: float = 100e3, f1: float = 200e3) -> float:
    """Band-limited spectral magnitude difference, normalised by both band energies."""
    _check_grid(baseline, monitoring)
    if not 0 <= f0 < f1 <= baseline.sample_rate / 2:
        raise ValidationError("need 0 <= f0 < f1 <= fs/2")
    f, sb = magnitude_spectrum(baseline)
    _, sm = magnitude_spectrum(monitoring)
    df = f[1] - f[0]
    band = (f >= f0) & (f <= f1)
    num = np.sum((sb[band] - sm[band]) ** 2) * df
    den = np.sum(sb[band] ** 2) * df * np.sum(sm[band] ** 2) * df
    if den == 0:
        raise ZeroEnergyBand(f"no spectral energy in [{f0}, {f1}] Hz")
    return float(math.sqrt(num / den))


def physics_features(reference: Waveform, records: Sequence[Waveform], win: ModeWindow,
                     f0: float = 100e3, f1: float = 200e3) -> np.ndarray:
    """(n, 2) matrix of (DI1, DI2) of each record against the reference."""
    return np.array([[di1(reference, r, win), di2(reference, r, f0, f1)] for r in records])


def physics_feature_sdc(references: Mapping[tuple[int, int], Waveform],
                        baseline_sets: Mapping[tuple[int, int], Sequence[Waveform]],
                        monitoring_sets: Mapping[tuple[int, int], Sequence[Waveform]],
                        windows: Mapping[tuple[int, int], ModeWindow], seed: int = 0, *,
                        k_max: int = 8, n_mc: int = 10_000, f0: float = 100e3,
                        f1: float = 200e3) -> SdcTable:
    """KL between GMMs of baseline and monitoring (DI1, DI2) features, per path."""
    entries = []
    for i, path in enumerate(monitoring_sets):
        ref, win = references[path], windows[path]
        fb = physics_features(ref, baseline_sets[path], win, f0, f1)
        fm = physics_features(ref, monitoring_sets[path], win, f0, f1)
        gb = fit_selected(fb, k_max, seed + 3 * i)
        gm = fit_selected(fm, k_max, seed + 3 * i + 1)
        entries.append(SdcEntry(path[0], path[1], kl_divergence(gb, gm, n_mc, seed + 3 * i + 2)))
    return SdcTable(entries, "physics_gmm_kl")


def correlation_coefficient(baseline: Waveform, monitoring: Waveform, win: ModeWindow) -> float:
    """Pearson correlation of the two records over the window."""
    _check_grid(baseline, monitoring)
    b, m = _window(baseline, win), _window(monitoring, win)
    b = b - b.mean()
    m = m - m.mean()
    sbb, smm = float(np.dot(b, b)), float(np.dot(m, m))
    if sbb == 0 or smm == 0:
        raise ZeroVarianceWindow("constant signal inside the window")
    # sqrt(s*s) == s exactly, so identical inputs give exactly 1
    return float(np.dot(b, m)) / math.sqrt(sbb * smm)


def ccd(baseline: Waveform, monitoring: Waveform, win: ModeWindow, kernel: int = 3) -> float:
    """1 - CC after moving-average denoising of both records."""
    return 1.0 - correlation_coefficient(moving_average(baseline, kernel),
                                         moving_average(monitoring, kernel), win)


def ccd_sdc(references: Mapping[tuple[int, int], Waveform],
            monitoring_sets: Mapping[tuple[int, int], Sequence[Waveform]],
            windows: Mapping[tuple[int, int], ModeWindow], kernel: int = 3) -> SdcTable:
    """Mean CCD over each path's monitoring records."""
    entries = []
    for path, records in monitoring_sets.items():
        ref = moving_average(references[path], kernel)
        vals = [1.0 - correlation_coefficient(ref, moving_average(r, kernel), windows[path])
                for r in records]
        entries.append(SdcEntry(path[0], path[1], float(np.mean(vals))))
    return SdcTable(entries, "ccd")
