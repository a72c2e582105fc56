"""Analytical guided-wave signal synthesis for a plate with a PZT network.

The finite-element data of a real plate is replaced by a ray surrogate: a
direct S0 arrival, an optional single-bounce echo from the damage site and,
for a notch, a small global phase perturbation of every direct arrival.
Signals at other temperatures are obtained from the 0 degC record by the
delay/amplitude model, then noise is added at a prescribed SNR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

from .dispersion import MaterialTable, Mode, VelocityCache
from .errors import DamageOutsidePlate, ValidationError

DEFAULT_SAMPLE_RATE = 10e6
DEFAULT_DURATION = 150e-6


@dataclass(frozen=True)
class ExcitationPulse:
    center_frequency: float = 150e3
    cycles: int = 5
    amplitude: float = 1.0

    @property
    def duration(self) -> float:
        return self.cycles / self.center_frequency

    def envelope(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= 0) & (t <= self.duration)
        env = 0.5 * (1 - np.cos(2 * np.pi * self.center_frequency * t / self.cycles))
        return np.where(inside, self.amplitude * env, 0.0)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.envelope(t) * np.sin(2 * np.pi * self.center_frequency * t)


@dataclass(frozen=True)
class Sensor:
    id: int
    x: float  # mm
    y: float  # mm


@dataclass(frozen=True)
class SensorLayout:
    plate_size: tuple[float, float]
    sensors: tuple[Sensor, ...]
    paths: tuple[tuple[int, int], ...]
    thickness_mm: float = 2.0
    damage_position: tuple[float, float] | None = None

    def __post_init__(self):
        ids = [s.id for s in self.sensors]
        if len(set(ids)) != len(ids):
            raise ValidationError("sensor ids must be distinct")
        W, H = self.plate_size
        for s in self.sensors:
            if not (0 <= s.x <= W and 0 <= s.y <= H):
                raise ValidationError(f"sensor {s.id} lies outside the plate")
        if len(set(self.paths)) != len(self.paths):
            raise ValidationError("duplicate path in layout")
        for tx, rx in self.paths:
            if tx not in ids or rx not in ids:
                raise ValidationError(f"path {(tx, rx)} references an unknown sensor")
            if self.distance_mm(tx, rx) <= 0:
                raise ValidationError(f"path {(tx, rx)} has zero length")

    def sensor(self, sid: int) -> Sensor:
        for s in self.sensors:
            if s.id == sid:
                return s
        raise ValidationError(f"unknown sensor {sid}")

    def position(self, sid: int) -> tuple[float, float]:
        s = self.sensor(sid)
        return (s.x, s.y)

    def distance_mm(self, a: int, b: int) -> float:
        (xa, ya), (xb, yb) = self.position(a), self.position(b)
        return math.hypot(xa - xb, ya - yb)

    def distance_m(self, a: int, b: int) -> float:
        return self.distance_mm(a, b) * 1e-3

    def contains(self, x: float, y: float) -> bool:
        W, H = self.plate_size
        return 0 <= x <= W and 0 <= y <= H

    @staticmethod
    def path_name(path: tuple[int, int]) -> str:
        return f"P{path[0]}{path[1]}"

    def parse_path(self, name: str) -> tuple[int, int]:
        for p in self.paths:
            if self.path_name(p) == name.upper():
                return p
        raise ValidationError(f"path {name!r} not in layout")

    @classmethod
    def from_dict(cls, data: dict) -> "SensorLayout":
        sensors = tuple(Sensor(int(s["id"]), float(s["x"]), float(s["y"])) for s in data["sensors"])
        paths = tuple((int(a), int(b)) for a, b in data["paths"])
        dmg = data.get("damage_position")
        return cls(
            plate_size=tuple(float(v) for v in data["plate_size"]),
            sensors=sensors,
            paths=paths,
            thickness_mm=float(data.get("thickness_mm", 2.0)),
            damage_position=tuple(float(v) for v in dmg) if dmg is not None else None,
        )

    @classmethod
    def load(cls, path: str | Path) -> "SensorLayout":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))


def default_layout() -> SensorLayout:
    return SensorLayout.load(Path(__file__).with_name("data") / "layout_6pzt.yaml")


class DamageKind(str, Enum):
    NONE = "none"
    RIVET_HOLE = "rivet_hole"
    ADDED_MASS = "added_mass"
    NOTCH = "notch"


CLASS_ORDER = (DamageKind.NONE, DamageKind.RIVET_HOLE, DamageKind.ADDED_MASS, DamageKind.NOTCH)
CLASS_NAMES = {DamageKind.NONE: "baseline", DamageKind.RIVET_HOLE: "rivet_hole",
               DamageKind.ADDED_MASS: "added_mass", DamageKind.NOTCH: "notch"}

# surrogate scattering knobs: (scatter amplitude, echo phase, global phase leak)
DEFAULT_DAMAGE_PARAMS = {
    DamageKind.NONE: (0.0, 0.0, 0.0),
    DamageKind.RIVET_HOLE: (0.30, math.pi / 4, 0.0),
    DamageKind.ADDED_MASS: (0.20, math.pi / 6, 0.0),
    DamageKind.NOTCH: (0.35, math.pi / 3, 0.15),
}


def one_hot(kind: DamageKind) -> tuple[int, int, int, int]:
    idx = CLASS_ORDER.index(DamageKind(kind))
    return tuple(int(i == idx) for i in range(4))


def kind_from_label(label: Sequence[int]) -> DamageKind:
    return CLASS_ORDER[int(np.argmax(label))]


@dataclass(frozen=True)
class DamageSpec:
    kind: DamageKind = DamageKind.NONE
    position: tuple[float, float] = (0.0, 0.0)
    scatter_amplitude: float = 0.0
    extra_phase: float = 0.0
    global_phase_leak: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", DamageKind(self.kind))
        if self.kind is DamageKind.NONE and (
            self.scatter_amplitude or self.extra_phase or self.global_phase_leak
        ):
            raise ValidationError("kind=none requires zero scatter amplitude and phases")
        if self.kind is not DamageKind.NOTCH and self.global_phase_leak:
            raise ValidationError("only a notch carries a global phase leak")

    @property
    def label(self) -> tuple[int, int, int, int]:
        return one_hot(self.kind)

    @classmethod
    def default(cls, kind: DamageKind | str, position: tuple[float, float] = (0.0, 0.0),
                params: dict | None = None) -> "DamageSpec":
        kind = DamageKind(kind)
        amp, phase, leak = (params or DEFAULT_DAMAGE_PARAMS)[kind]
        return cls(kind=kind, position=tuple(position), scatter_amplitude=amp, extra_phase=phase,
                   global_phase_leak=leak)


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: float = DEFAULT_SAMPLE_RATE
    path: tuple[int, int] | None = None
    temperature: float = 0.0
    snr_db: float | None = None
    class_label: tuple[int, int, int, int] = (1, 0, 0, 0)
    seed: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1:
            raise ValidationError("waveform samples must be one-dimensional")
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError("waveform contains non-finite samples")

    def __len__(self):
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.sample_rate

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def with_samples(self, samples, **changes) -> "Waveform":
        return replace(self, samples=np.asarray(samples, dtype=float), **changes)


def time_grid(sample_rate: float = DEFAULT_SAMPLE_RATE, duration: float = DEFAULT_DURATION) -> np.ndarray:
    return np.arange(int(round(duration * sample_rate))) / sample_rate


def hanning_pulse(p: ExcitationPulse, t_grid: np.ndarray) -> Waveform:
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size > 2 and not np.allclose(np.diff(t_grid), t_grid[1] - t_grid[0], rtol=1e-9, atol=0):
        raise ValidationError("time grid must be uniform")
    fs = 1.0 / (t_grid[1] - t_grid[0]) if t_grid.size > 1 else DEFAULT_SAMPLE_RATE
    return Waveform(samples=p(t_grid), sample_rate=fs)


def _arrival(pulse: ExcitationPulse, t: np.ndarray, length_m: float, c_g: float, c_p: float,
             phase: float = 0.0) -> np.ndarray:
    # envelope rides at the group velocity, carrier phase at the phase velocity
    env = pulse.envelope(t - length_m / c_g)
    return env * np.sin(2 * np.pi * pulse.center_frequency * (t - length_m / c_p) + phase)


def propagate_path(layout: SensorLayout, path: tuple[int, int], damage: DamageSpec,
                   pulse: ExcitationPulse, c_g: float, c_p: float, *,
                   sample_rate: float = DEFAULT_SAMPLE_RATE, duration: float = DEFAULT_DURATION,
                   temperature: float = 0.0) -> Waveform:
    """Received S0 signal for one transmitter-receiver path."""
    tx, rx = path
    if damage.kind is not DamageKind.NONE and not layout.contains(*damage.position):
        raise DamageOutsidePlate(f"damage at {damage.position} lies outside the plate")
    t = time_grid(sample_rate, duration)
    d = layout.distance_m(tx, rx)
    out = _arrival(pulse, t, d, c_g, c_p, damage.global_phase_leak) / math.sqrt(d)
    if damage.kind is not DamageKind.NONE and damage.scatter_amplitude:
        px, py = damage.position
        (xt, yt), (xr, yr) = layout.position(tx), layout.position(rx)
        L = (math.hypot(px - xt, py - yt) + math.hypot(px - xr, py - yr)) * 1e-3
        out = out + damage.scatter_amplitude / math.sqrt(L) * _arrival(pulse, t, L, c_g, c_p, damage.extra_phase)
    return Waveform(samples=out, sample_rate=sample_rate, path=(tx, rx), temperature=temperature,
                    class_label=damage.label)


def amplitude_factor(T: float) -> float:
    return 1.0 + T / 3550.0


def fractional_delay(x: np.ndarray, delay_samples: float, taps: int = 33) -> np.ndarray:
    """Delay ``x`` by a (possibly fractional) number of samples, zero-padded.

    Windowed-sinc interpolation with ``taps`` coefficients; an integer delay is exact.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    i0 = math.floor(delay_samples)
    mu = delay_samples - i0
    if mu == 0.0:
        out = np.zeros(n)
        if abs(i0) < n:
            if i0 >= 0:
                out[i0:] = x[: n - i0]
            else:
                out[: n + i0] = x[-i0:]
        return out
    half = taps // 2
    j = np.arange(-half, half + 1)
    u = j - mu
    h = np.sinc(u) * 0.5 * (1 + np.cos(np.pi * u / (half + 1)))
    h /= h.sum()
    # y[m] = sum_j h_j x[m - i0 - j]
    full = np.convolve(x, h)  # full[m'] = sum_j h_j x[m' - (j + half)]
    out = np.zeros(n)
    m = np.arange(n)
    src = m - i0 + half
    ok = (src >= 0) & (src < full.size)
    out[ok] = full[src[ok]]
    return out


def temperature_shift(w0: Waveform, T: float, d: float, c_g0: float, c_gT: float,
                      taps: int = 33) -> Waveform:
    """Signal at temperature ``T`` from the 0 degC record ``w0``.

    The whole record is delayed by d/c_gT - d/c_g0 (later arrival in a warmer,
    slower plate) and scaled by 1 + T/3550.  ``d`` is the path length in metres.
    """
    if not 0 <= T <= 100:
        raise ValidationError("temperature model is defined on [0, 100] degC")
    dt = d / c_gT - d / c_g0
    shifted = fractional_delay(w0.samples, dt * w0.sample_rate, taps)
    return w0.with_samples(amplitude_factor(T) * shifted, temperature=float(T))


def pink_noise(n: int, rng: np.random.Generator, rows: int = 16) -> np.ndarray:
    """Voss-McCartney 1/f noise: row r is redrawn every 2**r samples."""
    out = np.zeros(n)
    idx = np.arange(n)
    for r in range(rows):
        step = 1 << r
        # random phase offset per row so the update instants are staggered
        offset = int(rng.integers(step))
        blocks = (idx + offset) // step
        vals = rng.standard_normal(int(blocks[-1]) + 1)
        out += vals[blocks]
    out += rng.standard_normal(n)
    return out


def add_noise(w: Waveform, snr_db: float, seed: int) -> Waveform:
    """Add white + pink noise scaled so that 10 log10(P_signal / P_noise) = snr_db."""
    rng = np.random.default_rng(int(seed))
    n = w.samples.size
    white = rng.normal(0.0, 0.1, n)
    pink = pink_noise(n, rng)
    pink = 0.1 * (pink - pink.mean()) / pink.std()
    peak = float(np.max(np.abs(w.samples)))
    unit = peak * (white + pink)
    p_sig = float(np.mean(w.samples**2))
    p_unit = float(np.mean(unit**2))
    if math.isinf(snr_db) or p_sig == 0 or p_unit == 0:
        beta = 0.0
    else:
        beta = math.sqrt(p_sig / (p_unit * 10 ** (snr_db / 10)))
    return w.with_samples(w.samples + beta * unit, snr_db=float(snr_db), seed=int(seed))


def realized_snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    noise = np.asarray(noisy) - np.asarray(clean)
    return 10 * math.log10(np.mean(np.asarray(clean) ** 2) / np.mean(noise**2))


# stage identifiers mixed into every derived seed
STAGE_TRAIN_DATA = 1
STAGE_MONITOR_DATA = 2
STAGE_CNN = 3
STAGE_GMM = 4
STAGE_SELECT = 5
STAGE_KL = 6


def derive_seed(master: int, *key: int) -> int:
    """Counter-based child seed: depends only on (master, key), never on call order."""
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class Synthesizer:
    """Holds plate/material/pulse settings and caches per-temperature velocities."""

    layout: SensorLayout
    table: MaterialTable
    pulse: ExcitationPulse = field(default_factory=ExcitationPulse)
    sample_rate: float = DEFAULT_SAMPLE_RATE
    duration: float = DEFAULT_DURATION
    reference_temperature: float = 0.0

    def __post_init__(self):
        self.velocities = VelocityCache(self.table, self.pulse.center_frequency,
                                        self.layout.thickness_mm * 1e-3)

    def s0(self, T: float) -> tuple[float, float]:
        return self.velocities.velocities(T, Mode.S0)

    def reference(self, path, damage: DamageSpec) -> Waveform:
        cp, cg = self.s0(self.reference_temperature)
        return propagate_path(self.layout, path, damage, self.pulse, cg, cp,
                              sample_rate=self.sample_rate, duration=self.duration,
                              temperature=self.reference_temperature)

    def shifted(self, path, damage: DamageSpec, T: float, w0: Waveform | None = None) -> Waveform:
        w0 = w0 if w0 is not None else self.reference(path, damage)
        _, cg0 = self.s0(self.reference_temperature)
        _, cgT = self.s0(T)
        return temperature_shift(w0, T, self.layout.distance_m(*path), cg0, cgT)

    def resynthesize(self, path, damage: DamageSpec, T: float) -> Waveform:
        """Direct synthesis with the velocities at ``T`` (no shift model)."""
        cp, cg = self.s0(T)
        w = propagate_path(self.layout, path, damage, self.pulse, cg, cp,
                           sample_rate=self.sample_rate, duration=self.duration, temperature=T)
        return w.with_samples(amplitude_factor(T) * w.samples)

    def generate_dataset(self, damages: Sequence[DamageSpec], temperatures: Sequence[float],
                         snrs: Sequence[float], reps: int, seed: int, *,
                         paths: Iterable[tuple[int, int]] | None = None,
                         stage: int = STAGE_TRAIN_DATA) -> list[Waveform]:
        return generate_dataset(self, damages, temperatures, snrs, reps, seed, paths=paths, stage=stage)


def generate_dataset(synth: Synthesizer, damages: Sequence[DamageSpec], temperatures: Sequence[float],
                     snrs: Sequence[float], reps: int, seed: int, *,
                     paths: Iterable[tuple[int, int]] | None = None,
                     stage: int = STAGE_TRAIN_DATA) -> list[Waveform]:
    """Every (path, damage, T, snr, rep) combination, each record seeded independently.

    Record seeds come from ``derive_seed(seed, stage, path#, damage#, T#, snr#, rep)`` where
    the indices are positions in the layout's path list and the argument lists.
    """
    if reps < 1:
        raise ValidationError("reps must be at least 1")
    layout = synth.layout
    paths = list(layout.paths if paths is None else paths)
    out = []
    for path in paths:
        p_idx = layout.paths.index(tuple(path))
        for d_idx, damage in enumerate(damages):
            w0 = synth.reference(path, damage)
            for t_idx, T in enumerate(temperatures):
                wT = synth.shifted(path, damage, T, w0)
                for s_idx, snr in enumerate(snrs):
                    for rep in range(reps):
                        rs = derive_seed(seed, stage, p_idx, d_idx, t_idx, s_idx, rep)
                        out.append(add_noise(wT, snr, rs))
    return out
