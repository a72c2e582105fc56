"""Rayleigh-Lamb dispersion for the fundamental S0/A0 modes of an isotropic plate.

All quantities are SI (Pa, kg/m^3, m, Hz, m/s) except temperatures, which are
in degrees Celsius.  The residual is evaluated in real form: whenever a
radicand k^2 - (w/V)^2 goes negative the corresponding tanh is replaced by tan
of the real magnitude and the factors of i are cancelled analytically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import yaml
from scipy.optimize import brentq

from .errors import MultipleRoots, NoRootFound, PoleError, ValidationError


class Mode(str, Enum):
    S0 = "S0"
    A0 = "A0"

    @classmethod
    def parse(cls, value: "Mode | str") -> "Mode":
        if isinstance(value, Mode):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValidationError(f"unknown mode {value!r}; expected S0 or A0") from None


@dataclass(frozen=True)
class MaterialState:
    youngs_modulus: float  # Pa
    poisson_ratio: float
    density: float  # kg/m^3
    temperature: float = 20.0  # degC

    def __post_init__(self):
        if not self.youngs_modulus > 0:
            raise ValidationError("youngs_modulus must be positive")
        if not 0 < self.poisson_ratio < 0.5:
            raise ValidationError("poisson_ratio must lie in (0, 0.5)")
        if not self.density > 0:
            raise ValidationError("density must be positive")


@dataclass(frozen=True)
class MaterialTable:
    """Piecewise-linear material properties versus temperature."""

    points: tuple[MaterialState, ...]
    name: str = "material"

    def __post_init__(self):
        if not self.points:
            raise ValidationError("material table needs at least one anchor point")
        temps = [p.temperature for p in self.points]
        if any(b <= a for a, b in zip(temps, temps[1:])):
            raise ValidationError("material table temperatures must be strictly increasing")

    @property
    def t_min(self) -> float:
        return self.points[0].temperature

    @property
    def t_max(self) -> float:
        return self.points[-1].temperature

    def at(self, temperature: float) -> MaterialState:
        if not self.t_min <= temperature <= self.t_max:
            raise ValidationError(
                f"temperature {temperature} outside table range [{self.t_min}, {self.t_max}]"
            )
        temps = np.array([p.temperature for p in self.points])

        def interp(attr):
            return float(np.interp(temperature, temps, [getattr(p, attr) for p in self.points]))

        return MaterialState(
            youngs_modulus=interp("youngs_modulus"),
            poisson_ratio=interp("poisson_ratio"),
            density=interp("density"),
            temperature=float(temperature),
        )

    @classmethod
    def from_dict(cls, data: dict) -> "MaterialTable":
        anchors = data.get("anchors")
        if not anchors:
            raise ValidationError("material file has no 'anchors' list")
        points = tuple(
            MaterialState(
                youngs_modulus=float(a["youngs_modulus"]),
                poisson_ratio=float(a["poisson_ratio"]),
                density=float(a["density"]),
                temperature=float(a["temperature"]),
            )
            for a in anchors
        )
        return cls(points=points, name=str(data.get("name", "material")))

    @classmethod
    def load(cls, path: str | Path) -> "MaterialTable":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "anchors": [
                {
                    "temperature": p.temperature,
                    "youngs_modulus": p.youngs_modulus,
                    "poisson_ratio": p.poisson_ratio,
                    "density": p.density,
                }
                for p in self.points
            ],
        }


def default_material() -> MaterialTable:
    """Al 6061-T6 anchors shipped with the package (see data/al6061_t6.yaml)."""
    return MaterialTable.load(Path(__file__).with_name("data") / "al6061_t6.yaml")


@dataclass(frozen=True)
class DispersionPoint:
    frequency: float
    mode: Mode
    phase_velocity: float
    group_velocity: float
    wavenumber: float
    temperature: float = float("nan")


def lame_constants(m: MaterialState) -> tuple[float, float]:
    E, nu = m.youngs_modulus, m.poisson_ratio
    lam = nu * E / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    return lam, mu


def bulk_velocities(m: MaterialState) -> tuple[float, float]:
    """Pressure and shear bulk velocities (vp, vs)."""
    lam, mu = lame_constants(m)
    return math.sqrt((lam + 2 * mu) / m.density), math.sqrt(mu / m.density)


def _residual(k, omega, h, vp, vs, mode: Mode):
    """Vectorised LHS - RHS; non-finite where a denominator vanishes."""
    k = np.asarray(k, dtype=float)
    a2 = k**2 - (omega / vp) ** 2
    b2 = k**2 - (omega / vs) ** 2
    a = np.sqrt(np.abs(a2))
    b = np.sqrt(np.abs(b2))
    ta = np.where(a2 >= 0, np.tanh(a * h / 2), np.tan(a * h / 2))
    tb = np.where(b2 >= 0, np.tanh(b * h / 2), np.tan(b * h / 2))
    # number of imaginary radicals among (alpha, beta); alpha imaginary implies beta imaginary
    n_imag = (a2 < 0).astype(int) + (b2 < 0).astype(int)
    sq = (k**2 + b2) ** 2  # (k^2 + beta^2)^2 is always real
    with np.errstate(divide="ignore", invalid="ignore"):
        lhs = tb / ta
        if mode is Mode.S0:
            sign = np.where(n_imag == 2, -1.0, 1.0)
            rhs = sign * 4 * k**2 * a * b / sq
        else:
            sign = np.where(n_imag == 0, 1.0, -1.0)
            rhs = sign * sq / (4 * k**2 * a * b)
        res = lhs - rhs
    bad = (ta == 0) | (sq == 0) if mode is Mode.S0 else (ta == 0) | (a * b == 0)
    return np.where(bad, np.inf, res)


def rayleigh_lamb_residual(k: float, omega: float, h: float, vp: float, vs: float,
                           mode: Mode | str) -> float:
    """Real-valued residual of the symmetric or antisymmetric dispersion relation.

    Raises PoleError when ``k`` makes a denominator exactly zero.
    """
    mode = Mode.parse(mode)
    if not (k > 0 and omega > 0 and h > 0):
        raise ValidationError("k, omega and h must be positive")
    r = float(_residual(k, omega, h, vp, vs, mode))
    if not math.isfinite(r):
        raise PoleError(f"residual has a pole at k={k!r}")
    return r


def solve_phase_velocity(f: float, h: float, m: MaterialState, mode: Mode | str, *,
                         c_step: float = 50.0, c_min: float = 50.0, c_max_factor: float = 1.2,
                         rtol: float = 1e-9, f_range: tuple[float, float] = (1e3, 1e6),
                         pole_tol: float = 1e-6) -> float:
    """Fundamental-branch phase velocity by grid scan plus Brent refinement."""
    mode = Mode.parse(mode)
    if not f_range[0] <= f <= f_range[1]:
        raise ValidationError(f"frequency {f} Hz outside solver range {f_range}")
    if h <= 0:
        raise ValidationError("thickness must be positive")
    vp, vs = bulk_velocities(m)
    omega = 2 * math.pi * f
    c_grid = np.arange(c_min, c_max_factor * vp + 0.5 * c_step, c_step)
    res = _residual(omega / c_grid, omega, h, vp, vs, mode)

    def in_c(c):
        return float(_residual(omega / c, omega, h, vp, vs, mode))

    roots = []
    for i in range(len(c_grid) - 1):
        r0, r1 = res[i], res[i + 1]
        if not (np.isfinite(r0) and np.isfinite(r1)):
            continue
        if r0 == 0:
            roots.append(float(c_grid[i]))
            continue
        if (r0 > 0) == (r1 > 0):
            continue
        c = brentq(in_c, float(c_grid[i]), float(c_grid[i + 1]), rtol=rtol)
        # sign changes across a pole converge onto a huge residual; drop those
        if abs(in_c(c)) < pole_tol:
            roots.append(c)
    if not roots:
        raise NoRootFound(f"no {mode.value} root at f={f} Hz, h={h} m")
    if len(roots) > 1:
        raise MultipleRoots(
            f"{len(roots)} {mode.value} roots at f={f} Hz (fd above the first cutoff?): {roots}"
        )
    return roots[0]


PhaseSolver = Callable[[float, float, MaterialState, Mode], float]


def group_velocity(f: float, h: float, m: MaterialState, mode: Mode | str, *, df: float = 100.0,
                   phase_velocity: PhaseSolver | None = None) -> float:
    """c_g = c_p + k dc_p/dk with a central difference in k.

    ``phase_velocity`` may be replaced (e.g. by a constant) for testing.
    """
    mode = Mode.parse(mode)
    solve = phase_velocity or solve_phase_velocity
    c0 = solve(f, h, m, mode)
    c_lo = solve(f - df, h, m, mode)
    c_hi = solve(f + df, h, m, mode)
    k0 = 2 * math.pi * f / c0
    k_lo = 2 * math.pi * (f - df) / c_lo
    k_hi = 2 * math.pi * (f + df) / c_hi
    cg = c0 + k0 * (c_hi - c_lo) / (k_hi - k_lo)
    if not cg > 0:
        raise NoRootFound(f"non-positive group velocity {cg} at f={f}")
    return cg


def dispersion_point(f: float, h: float, m: MaterialState, mode: Mode | str,
                     df: float = 100.0) -> DispersionPoint:
    mode = Mode.parse(mode)
    cp = solve_phase_velocity(f, h, m, mode)
    cg = group_velocity(f, h, m, mode, df=df)
    return DispersionPoint(frequency=f, mode=mode, phase_velocity=cp, group_velocity=cg,
                           wavenumber=2 * math.pi * f / cp, temperature=m.temperature)


def temperature_sweep(f: float, h: float, table: MaterialTable, mode: Mode | str,
                      temperatures: Iterable[float], df: float = 100.0) -> list[DispersionPoint]:
    return [dispersion_point(f, h, table.at(T), mode, df=df) for T in temperatures]


def frequency_sweep(freqs: Sequence[float], h: float, table: MaterialTable, modes: Sequence[Mode | str],
                    temperatures: Sequence[float], df: float = 100.0) -> list[DispersionPoint]:
    out = []
    for T in temperatures:
        m = table.at(T)
        for mode in modes:
            for f in freqs:
                out.append(dispersion_point(f, h, m, mode, df=df))
    return out


@dataclass
class VelocityCache:
    """Memoised S0/A0 (c_p, c_g) per temperature for one plate and frequency."""

    table: MaterialTable
    frequency: float
    thickness: float
    df: float = 100.0
    _cache: dict = field(default_factory=dict, repr=False)

    def velocities(self, temperature: float, mode: Mode | str = Mode.S0) -> tuple[float, float]:
        mode = Mode.parse(mode)
        key = (float(temperature), mode)
        if key not in self._cache:
            pt = dispersion_point(self.frequency, self.thickness, self.table.at(temperature), mode, self.df)
            self._cache[key] = (pt.phase_velocity, pt.group_velocity)
        return self._cache[key]
