"""Morlet-CWT envelopes, time of flight and moving-average denoising."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateEnvelope, ValidationError
from .synth import SensorLayout, Waveform


@dataclass
class Envelope:
    times: np.ndarray
    magnitude: np.ndarray

    @property
    def sample_rate(self) -> float:
        return 1.0 / (self.times[1] - self.times[0])


def morlet_envelope(w: Waveform, f0: float, omega0: float = 6.0) -> Envelope:
    """Modulus of the single-scale CWT at ``f0``.

    The analytic Morlet atom is applied in the frequency domain; the filter is
    normalised so that a unit-amplitude tone at ``f0`` gives a unit envelope.
    """
    fs = w.sample_rate
    if not 0 < f0 < fs / 2:
        raise ValidationError("f0 must lie in (0, fs/2)")
    x = w.samples
    n = x.size
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    X = np.fft.fft(x, nfft)
    omega = 2 * np.pi * np.fft.fftfreq(nfft, d=1.0 / fs)
    scale = omega0 / (2 * np.pi * f0)
    psi = np.where(omega > 0, 2.0 * np.exp(-0.5 * (scale * omega - omega0) ** 2), 0.0)
    coef = np.fft.ifft(X * psi)[:n]
    return Envelope(times=w.times, magnitude=np.abs(coef))


def time_of_flight(tx_env: Envelope, rx_env: Envelope) -> float:
    """Peak-to-peak delay between two envelopes on the same time grid."""
    if tx_env.times.shape != rx_env.times.shape or not np.allclose(tx_env.times, rx_env.times):
        raise ValidationError("envelopes must share a sample grid")
    for env in (tx_env, rx_env):
        if not np.any(env.magnitude > 0):
            raise DegenerateEnvelope("envelope is identically zero")
    # np.argmax already breaks ties by the earliest index
    return float(rx_env.times[np.argmax(rx_env.magnitude)] - tx_env.times[np.argmax(tx_env.magnitude)])


def moving_average(w: Waveform, kernel: int = 3) -> Waveform:
    """Centred running mean; the window shrinks at the edges so length is kept."""
    if kernel < 1 or kernel % 2 == 0:
        raise ValidationError("kernel must be an odd integer >= 1")
    x = w.samples
    if kernel == 1:
        return w.with_samples(x.copy())
    ones = np.ones(kernel)
    # slice the full convolution: mode="same" pads to the kernel length when it is longer
    centre = slice(kernel // 2, kernel // 2 + x.size)
    sums = np.convolve(x, ones)[centre]
    counts = np.convolve(np.ones_like(x), ones)[centre]
    return w.with_samples(sums / counts)


def estimate_group_velocity(layout: SensorLayout, path: tuple[int, int], w_tx: Waveform,
                            w_rx: Waveform, f0: float) -> float:
    d = layout.distance_m(*path)
    tof = time_of_flight(morlet_envelope(w_tx, f0), morlet_envelope(w_rx, f0))
    if tof <= 0:
        raise DegenerateEnvelope(f"non-positive time of flight {tof}")
    return d / tof
