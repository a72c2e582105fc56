"""Elliptical damage-index imaging from per-path signal difference coefficients."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import CoincidentSensors, EmptySdcTable, ValidationError
from .synth import SensorLayout

METHODS = ("cnn_gmm_kl", "physics_gmm_kl", "ccd")
DEFAULT_BETA = 1.05


def path_name(tx: int, rx: int) -> str:
    return SensorLayout.path_name((tx, rx))


@dataclass(frozen=True)
class SdcEntry:
    tx: int
    rx: int
    sdc: float

    @property
    def path(self) -> tuple[int, int]:
        return (self.tx, self.rx)


@dataclass
class SdcTable:
    entries: list[SdcEntry]
    method: str = "cnn_gmm_kl"

    def __post_init__(self):
        self.entries = [e if isinstance(e, SdcEntry) else SdcEntry(int(e[0]), int(e[1]), float(e[2]))
                        for e in self.entries]
        for e in self.entries:
            if not math.isfinite(e.sdc):
                raise ValidationError(f"non-finite SDC on {path_name(*e.path)}")
        if len({e.path for e in self.entries}) != len(self.entries):
            raise ValidationError("duplicate path in SDC table")

    @classmethod
    def from_mapping(cls, values: Mapping[tuple[int, int], float], method: str = "cnn_gmm_kl") -> "SdcTable":
        return cls([SdcEntry(tx, rx, float(v)) for (tx, rx), v in values.items()], method)

    @property
    def paths(self) -> list[tuple[int, int]]:
        return [e.path for e in self.entries]

    @property
    def values(self) -> np.ndarray:
        return np.array([e.sdc for e in self.entries])

    def as_dict(self) -> dict[tuple[int, int], float]:
        return {e.path: e.sdc for e in self.entries}

    def __getitem__(self, path: tuple[int, int]) -> float:
        return self.as_dict()[tuple(path)]

    def scaled(self, c: float) -> "SdcTable":
        return SdcTable([SdcEntry(e.tx, e.rx, c * e.sdc) for e in self.entries], self.method)

    def normalized(self) -> "SdcTable":
        top = self.values.max() if self.entries else 0.0
        if not top > 0:
            return self.scaled(1.0)
        # divide rather than scale by 1/top so the maximum maps to exactly 1
        return SdcTable([SdcEntry(e.tx, e.rx, e.sdc / top) for e in self.entries], self.method)

    @classmethod
    def mean(cls, tables: Iterable["SdcTable"]) -> "SdcTable":
        tables = list(tables)
        if not tables:
            raise EmptySdcTable("no tables to average")
        paths = tables[0].paths
        for t in tables[1:]:
            if t.paths != paths:
                raise ValidationError("tables cover different paths")
        vals = np.mean([t.values for t in tables], axis=0)
        return cls([SdcEntry(tx, rx, float(v)) for (tx, rx), v in zip(paths, vals)], tables[0].method)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "tx", "rx", "sdc", "method"])
            for e in self.entries:
                w.writerow([path_name(*e.path), e.tx, e.rx, repr(float(e.sdc)), self.method])

    @classmethod
    def from_csv(cls, path: str | Path) -> "SdcTable":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise EmptySdcTable(f"{path} has no rows")
        method = rows[0].get("method") or "cnn_gmm_kl"
        return cls([SdcEntry(int(r["tx"]), int(r["rx"]), float(r["sdc"])) for r in rows], method)


def ellipse_factor(x, y, tx: tuple[float, float], rx: tuple[float, float]):
    """Sum of distances to the two foci over the focal distance (1 on the segment)."""
    d = math.hypot(rx[0] - tx[0], rx[1] - tx[1])
    if d == 0:
        raise CoincidentSensors("transmitter and receiver coincide")
    return (np.hypot(np.subtract(x, tx[0]), np.subtract(y, tx[1]))
            + np.hypot(np.subtract(x, rx[0]), np.subtract(y, rx[1]))) / d


def spatial_distribution(P, beta: float = DEFAULT_BETA):
    if not beta > 1:
        raise ValidationError("beta must exceed 1")
    return np.minimum(P, beta)


@dataclass
class DiMap:
    x: np.ndarray  # column coordinates, mm
    y: np.ndarray  # row coordinates, mm
    grid: np.ndarray  # normalised to max 1 unless all zero
    beta: float
    spacing: float
    raw_max: float
    estimated_damage: tuple[float, float] | None = field(default=None)

    def error_to(self, point: tuple[float, float]) -> float:
        if self.estimated_damage is None:
            return math.inf
        return math.hypot(self.estimated_damage[0] - point[0], self.estimated_damage[1] - point[1])

    def to_csv(self, path: str | Path) -> None:
        np.savetxt(path, self.grid, delimiter=",", fmt="%.6g")

    def to_png(self, path: str | Path, layout: SensorLayout | None = None) -> None:
        from PIL import Image, ImageDraw

        img8 = np.round(np.clip(self.grid, 0, 1) * 255).astype(np.uint8)
        im = Image.fromarray(np.flipud(img8))  # y axis points up
        if layout is not None:
            draw = ImageDraw.Draw(im)
            r = max(2, int(round(6 / self.spacing)))
            h = self.grid.shape[0]
            for s in layout.sensors:
                cx = (s.x - self.x[0]) / self.spacing
                cy = h - 1 - (s.y - self.y[0]) / self.spacing
                draw.rectangle([cx - r, cy - r, cx + r, cy + r], outline=255, fill=0)
        im.save(path)


def di_raw(layout: SensorLayout, sdc: SdcTable, beta: float = DEFAULT_BETA,
           spacing: float = 1.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unnormalised damage index on a regular grid covering the plate."""
    if not sdc.entries:
        raise EmptySdcTable("SDC table is empty")
    if not beta > 1:
        raise ValidationError("beta must exceed 1")
    if not spacing > 0:
        raise ValidationError("grid spacing must be positive")
    if np.any(sdc.values < 0):
        raise ValidationError("SDC values must be non-negative")
    w, h = layout.plate_size
    xs = np.arange(0.0, w + 0.5 * spacing, spacing)
    ys = np.arange(0.0, h + 0.5 * spacing, spacing)
    X, Y = np.meshgrid(xs, ys)
    grid = np.zeros_like(X)
    for e in sdc.entries:
        if e.sdc == 0:
            continue
        P = ellipse_factor(X, Y, layout.position(e.tx), layout.position(e.rx))
        grid += e.sdc * (beta - spatial_distribution(P, beta)) / (beta - 1)
    return xs, ys, grid


def di_map(layout: SensorLayout, sdc: SdcTable, beta: float = DEFAULT_BETA,
           spacing: float = 1.0) -> DiMap:
    xs, ys, grid = di_raw(layout, sdc, beta, spacing)
    top = float(grid.max())
    est = None
    if top > 0:
        # argmax over the row-major flattening keeps the first maximal pixel
        r, c = np.unravel_index(np.argmax(grid), grid.shape)
        est = (float(xs[c]), float(ys[r]))
        grid = grid / top
    return DiMap(xs, ys, grid, beta, spacing, top, est)


def contrast_ratio(sdc: SdcTable, damaged_paths: Iterable[tuple[int, int]]) -> float:
    """Smallest damaged-path SDC over the largest undamaged-path SDC."""
    damaged = {tuple(p) for p in damaged_paths}
    vals = sdc.as_dict()
    on = [v for p, v in vals.items() if p in damaged]
    off = [v for p, v in vals.items() if p not in damaged]
    if not on or not off:
        raise ValidationError("need both damaged and undamaged paths")
    top_off = max(off)
    return math.inf if top_off == 0 else min(on) / top_off


def segment_intersection(a0, a1, b0, b1) -> tuple[float, float] | None:
    """Intersection point of two segments, or None when they do not cross."""
    (x1, y1), (x2, y2), (x3, y3), (x4, y4) = a0, a1, b0, b1
    den = (x1 - x2) * (y3 - y4) - (y1 - y2) * (x3 - x4)
    if den == 0:
        return None
    t = ((x1 - x3) * (y3 - y4) - (y1 - y3) * (x3 - x4)) / den
    u = -((x1 - x2) * (y1 - y3) - (y1 - y2) * (x1 - x3)) / den
    if not (0 <= t <= 1 and 0 <= u <= 1):
        return None
    return (x1 + t * (x2 - x1), y1 + t * (y2 - y1))


def format_report(sdc: SdcTable, dimap: DiMap, damaged_paths=None) -> str:
    lines = [f"method: {sdc.method}", "path,sdc"]
    lines += [f"{path_name(*e.path)},{e.sdc:.6g}" for e in sdc.entries]
    if damaged_paths:
        lines.append(f"contrast_ratio: {contrast_ratio(sdc, damaged_paths):.6g}")
    if dimap.estimated_damage is None:
        lines.append("estimated_damage: undefined (all SDCs zero)")
    else:
        lines.append("estimated_damage: ({:.1f}, {:.1f}) mm".format(*dimap.estimated_damage))
    return "\n".join(lines) + "\n"
