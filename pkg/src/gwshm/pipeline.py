"""End-to-end orchestration: training phase, monitoring phase, imaging and method comparison.

All randomness derives from the master seed through :func:`derive_seed` keyed by
(stage, path index, test case), so outputs depend only on (config, seed).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from . import __version__
from .baselines import ccd_sdc, mode_window, physics_feature_sdc
from .cnn import TrainConfig, extract_features, train
from .dispersion import MaterialTable, default_material
from .errors import GwshmError, MissingArtifact, StageError, ValidationError
from .gmm import GmmModel, Pca, fit_selected, kl_divergence, pca
from .localization import (DEFAULT_BETA, METHODS, DiMap, SdcEntry, SdcTable, contrast_ratio,
                           di_map, format_report)
from .storage import load_model, save_dataset, save_model
from .synth import (CLASS_ORDER, DEFAULT_DAMAGE_PARAMS, STAGE_CNN, STAGE_GMM, STAGE_KL,
                    STAGE_MONITOR_DATA, STAGE_SELECT, STAGE_TRAIN_DATA, DamageKind, DamageSpec, ExcitationPulse,
                    SensorLayout, Synthesizer, Waveform, default_layout, derive_seed,
                    generate_dataset)

log = logging.getLogger(__name__)

METHOD_ALIASES = {"cnn_gmm": "cnn_gmm_kl", "physics_gmm": "physics_gmm_kl", "ccd": "ccd"}
DEFAULT_CONFIG = Path(__file__).with_name("data") / "desk.yaml"


@dataclass
class GmmSettings:
    k_max: int = 8
    n_mc: int = 10_000
    n_init: int = 5
    pca2: bool = False  # fit on the two leading principal components of the baseline


@dataclass
class ExperimentConfig:
    seed: int
    layout: str | None = None  # YAML file; None selects the bundled 6-PZT layout
    material: str | None = None  # YAML file; None selects the bundled Al 6061-T6 table
    pulse: dict = field(default_factory=lambda: {"center_frequency": 150e3, "cycles": 5,
                                                 "amplitude": 1.0})
    sample_rate: float = 10e6
    duration: float = 150e-6
    # kind -> [scatter amplitude, echo phase, global phase leak]
    damage: dict = field(default_factory=dict)
    temperatures: list = field(default_factory=lambda: [float(t) for t in range(0, 101, 10)])
    snr_db: list = field(default_factory=lambda: [4.5])
    reps_train: int = 150
    baseline_records: int = 110
    monitoring_cases: int = 10
    monitoring_reps: int = 10  # per (temperature, snr); 11 x 10 = 110 records
    monitoring_damage: str = "notch"
    train: dict = field(default_factory=dict)
    gmm: dict = field(default_factory=dict)
    beta: float = DEFAULT_BETA
    grid_spacing: float = 1.0
    method: str = "cnn_gmm"
    paths: list | None = None  # names such as "P15"; None uses every layout path
    damaged_paths: list | None = None  # None: paths whose segment passes the damage site
    persist_datasets: bool = False
    base_dir: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.seed is None:
            raise ValidationError("a master seed is required")
        self.seed = int(self.seed)
        if self.method not in METHOD_ALIASES:
            raise ValidationError(f"method must be one of {sorted(METHOD_ALIASES)}")
        self.monitoring_damage = DamageKind(self.monitoring_damage).value
        for name in ("reps_train", "baseline_records", "monitoring_cases", "monitoring_reps"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be at least 1")
        if not self.temperatures or not self.snr_db:
            raise ValidationError("temperature and SNR lists must be non-empty")
        if not self.beta > 1 or not self.grid_spacing > 0:
            raise ValidationError("need beta > 1 and a positive grid spacing")
        if self.paths is not None and len(self.paths) == 0:
            raise ValidationError("config selects no paths")
        unknown = set(self.damage) - {k.value for k in DamageKind}
        if unknown:
            raise ValidationError(f"unknown damage kinds {sorted(unknown)}")
        TrainConfig(**self.train)
        GmmSettings(**self.gmm)
        for f in (self.layout, self.material):
            if f is not None and not self._resolve(f).exists():
                raise ValidationError(f"referenced file {f} does not exist")

    def _resolve(self, name: str) -> Path:
        p = Path(name)
        return p if p.is_absolute() or self.base_dir is None else Path(self.base_dir) / p

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path | None = None) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        extra = set(data) - names
        if extra:
            raise ValidationError(f"unknown config keys {sorted(extra)}")
        if data.get("seed") is None:
            raise ValidationError("a master seed is required")
        return cls(**{**data, "base_dir": None if base_dir is None else str(base_dir)})

    @classmethod
    def load(cls, path: str | Path, **overrides) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"config file {path} not found")
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ValidationError("config must be a mapping")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(data, path.parent)

    @classmethod
    def default(cls, seed: int, **overrides) -> "ExperimentConfig":
        return cls.load(DEFAULT_CONFIG, seed=seed, **overrides)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=float).encode()
        return hashlib.sha256(blob).hexdigest()

    # resolved objects

    def load_layout(self) -> SensorLayout:
        return default_layout() if self.layout is None else SensorLayout.load(self._resolve(self.layout))

    def load_material(self) -> MaterialTable:
        return default_material() if self.material is None else MaterialTable.load(self._resolve(self.material))

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train)

    def gmm_settings(self) -> GmmSettings:
        return GmmSettings(**self.gmm)

    def method_tag(self) -> str:
        return METHOD_ALIASES[self.method]


@dataclass
class Experiment:
    """Config plus the objects it resolves to."""

    cfg: ExperimentConfig
    layout: SensorLayout
    synth: Synthesizer
    paths: list[tuple[int, int]]
    damages: list[DamageSpec]
    damaged_paths: list[tuple[int, int]]

    @classmethod
    def build(cls, cfg: ExperimentConfig) -> "Experiment":
        layout = cfg.load_layout()
        if layout.damage_position is None:
            raise ValidationError("layout must define a damage position")
        synth = Synthesizer(layout, cfg.load_material(), ExcitationPulse(**cfg.pulse),
                            sample_rate=cfg.sample_rate, duration=cfg.duration)
        paths = list(layout.paths) if cfg.paths is None else [layout.parse_path(p) for p in cfg.paths]
        if not paths:
            raise ValidationError("config selects no paths")
        params = dict(DEFAULT_DAMAGE_PARAMS)
        params.update({DamageKind(k): tuple(float(x) for x in v) for k, v in cfg.damage.items()})
        damages = [DamageSpec.default(k, layout.damage_position, params) for k in CLASS_ORDER]
        if cfg.damaged_paths is None:
            damaged = [p for p in paths if _on_segment(layout, p, layout.damage_position)]
        else:
            damaged = [layout.parse_path(p) for p in cfg.damaged_paths]
        return cls(cfg, layout, synth, paths, damages, damaged)

    def path_index(self, path: tuple[int, int]) -> int:
        return self.layout.paths.index(path)

    def damage(self, kind: DamageKind | str) -> DamageSpec:
        return self.damages[CLASS_ORDER.index(DamageKind(kind))]


def _on_segment(layout: SensorLayout, path, point, tol_mm: float = 1.0) -> bool:
    a = np.array(layout.position(path[0]))
    b = np.array(layout.position(path[1]))
    p = np.array(point)
    t = np.clip(np.dot(p - a, b - a) / np.dot(b - a, b - a), 0.0, 1.0)
    return float(np.linalg.norm(a + t * (b - a) - p)) <= tol_mm


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    version: str = __version__
    artifacts: dict = field(default_factory=dict)  # name -> path relative to the run directory
    timings: dict = field(default_factory=dict)  # stage -> seconds
    metrics: dict = field(default_factory=dict)
    root: str | None = field(default=None, compare=False)

    FILE = "manifest.json"

    def add(self, name: str, path: Path) -> None:
        self.artifacts[name] = str(Path(path).relative_to(self.root))

    def path(self, name: str) -> Path:
        if name not in self.artifacts:
            raise MissingArtifact(f"manifest has no artifact {name!r}")
        p = Path(self.root) / self.artifacts[name]
        if not p.exists():
            raise MissingArtifact(f"artifact {name!r} missing at {p}")
        return p

    def validate(self) -> None:
        missing = [n for n, p in self.artifacts.items() if not (Path(self.root) / p).exists()]
        if missing:
            raise MissingArtifact(f"artifacts missing on disk: {missing}")

    def save(self) -> Path:
        out = Path(self.root) / self.FILE
        d = dataclasses.asdict(self)
        d.pop("root")
        out.write_text(json.dumps(d, indent=1, sort_keys=True))
        return out

    @classmethod
    def load(cls, run_dir: str | Path) -> "RunManifest":
        p = Path(run_dir) / cls.FILE
        if not p.exists():
            raise MissingArtifact(f"no manifest in {run_dir}")
        return cls(**json.loads(p.read_text()), root=str(run_dir))


class _Stage:
    """Times a stage and wraps non-validation failures in a StageError."""

    def __init__(self, manifest: RunManifest, name: str):
        self.manifest, self.name = manifest, name

    def __enter__(self):
        self.t0 = time.perf_counter()
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        dt = time.perf_counter() - self.t0
        self.manifest.timings[self.name] = self.manifest.timings.get(self.name, 0.0) + dt
        if exc is None or isinstance(exc, (ValidationError, MissingArtifact, StageError)):
            return False
        raise StageError(self.name, exc) from exc


def _pca_to_dict(p: Pca) -> dict:
    return {"mean": p.mean.tolist(), "components": p.components.tolist(),
            "explained_variance": p.explained_variance.tolist(),
            "all_variances": p.all_variances.tolist()}


def _pca_from_dict(d: dict) -> Pca:
    return Pca(*(np.array(d[k]) for k in ("mean", "components", "explained_variance", "all_variances")))


def baseline_subset(records: Sequence[Waveform], n: int, seed: int) -> list[Waveform]:
    """``n`` healthy records drawn without replacement across all temperatures."""
    healthy = [w for w in records if w.class_label[0] == 1]
    if len(healthy) < n:
        raise ValidationError(f"only {len(healthy)} healthy records for a baseline of {n}")
    idx = np.sort(np.random.default_rng(seed).choice(len(healthy), n, replace=False))
    return [healthy[i] for i in idx]


def _baseline_records(exp: Experiment, path) -> list[Waveform]:
    cfg = exp.cfg
    p_idx = exp.path_index(path)
    recs = generate_dataset(exp.synth, [exp.damage(DamageKind.NONE)], cfg.temperatures, cfg.snr_db,
                            cfg.reps_train, cfg.seed, paths=[path], stage=STAGE_TRAIN_DATA)
    return baseline_subset(recs, cfg.baseline_records, derive_seed(cfg.seed, STAGE_SELECT, p_idx))


def run_training_phase(cfg: ExperimentConfig, out_dir: str | Path) -> RunManifest:
    """Train one CNN per path, fit and persist the baseline GMM of its features."""
    exp = Experiment.build(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(cfg.hash(), cfg.seed, root=str(out))
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    manifest.add("config", out / "config.yaml")
    tcfg, gs = cfg.train_config(), cfg.gmm_settings()
    for path in exp.paths:
        name = SensorLayout.path_name(path)
        p_idx = exp.path_index(path)
        with _Stage(manifest, "synthesize_training"):
            records = generate_dataset(exp.synth, exp.damages, cfg.temperatures, cfg.snr_db,
                                       cfg.reps_train, cfg.seed, paths=[path], stage=STAGE_TRAIN_DATA)
            if cfg.persist_datasets:
                manifest.add(f"dataset_{name}", save_dataset(records, out / "datasets" / name))
        with _Stage(manifest, "train_cnn"):
            model, hist = train(records, dataclasses.replace(tcfg, seed=derive_seed(cfg.seed, STAGE_CNN, p_idx)))
            manifest.add(f"model_{name}", save_model(model, out / "models" / f"{name}.gwcn"))
            best = hist.best_epoch if hist.best_epoch is not None else -1
            manifest.metrics[f"test_accuracy_{name}"] = (hist.test_accuracy[best]
                                                         if hist.test_accuracy else math.nan)
        with _Stage(manifest, "baseline_gmm"):
            base = baseline_subset(records, cfg.baseline_records, derive_seed(cfg.seed, STAGE_SELECT, p_idx))
            feats = extract_features(model, base)
            if gs.pca2:
                proj = pca(feats, 2)
                p_file = out / "gmm" / f"{name}_pca.json"
                p_file.parent.mkdir(parents=True, exist_ok=True)
                p_file.write_text(json.dumps(_pca_to_dict(proj)))
                manifest.add(f"pca_{name}", p_file)
                feats = proj.transform(feats)
            g = fit_selected(feats, gs.k_max, derive_seed(cfg.seed, STAGE_GMM, p_idx, 0) % 2**32,
                             n_init=gs.n_init)
            g_file = out / "gmm" / f"{name}_baseline.json"
            g_file.parent.mkdir(parents=True, exist_ok=True)
            g.save(g_file)
            manifest.add(f"gmm_{name}", g_file)
    manifest.save()
    return manifest


def monitoring_records(exp: Experiment, path, case: int, kind: DamageKind | str | None = None) -> list[Waveform]:
    """One monitoring set for a path and test case; identical for every method."""
    cfg = exp.cfg
    kind = cfg.monitoring_damage if kind is None else kind
    seed = derive_seed(cfg.seed, STAGE_MONITOR_DATA, case)
    return generate_dataset(exp.synth, [exp.damage(kind)], cfg.temperatures, cfg.snr_db,
                            cfg.monitoring_reps, seed, paths=[path], stage=STAGE_MONITOR_DATA)


def _cnn_sdc(exp: Experiment, manifest: RunManifest, path, records, case: int) -> float:
    cfg, gs = exp.cfg, exp.cfg.gmm_settings()
    name = SensorLayout.path_name(path)
    p_idx = exp.path_index(path)
    model = load_model(manifest.path(f"model_{name}"))
    gb = GmmModel.load(manifest.path(f"gmm_{name}"))
    feats = extract_features(model, records)
    if gs.pca2:
        feats = _pca_from_dict(json.loads(manifest.path(f"pca_{name}").read_text())).transform(feats)
    gm = fit_selected(feats, gs.k_max, derive_seed(cfg.seed, STAGE_GMM, p_idx, case + 1) % 2**32,
                      n_init=gs.n_init, floor=gb.floor)
    return kl_divergence(gb, gm, gs.n_mc, derive_seed(cfg.seed, STAGE_KL, p_idx, case))


def _baseline_inputs(exp: Experiment):
    """Noiseless 0 degC healthy references and geometric mode windows per path."""
    healthy = exp.damage(DamageKind.NONE)
    _, cg = exp.synth.s0(exp.synth.reference_temperature)
    refs = {p: exp.synth.reference(p, healthy) for p in exp.paths}
    wins = {p: mode_window(exp.layout, p, cg, exp.synth.pulse, exp.synth.duration) for p in exp.paths}
    return refs, wins


def _method_sdc(exp: Experiment, manifest: RunManifest, method: str, monitoring: dict, case: int,
                cache: dict) -> SdcTable:
    cfg = exp.cfg
    if method == "cnn_gmm_kl":
        return SdcTable([SdcEntry(p[0], p[1], _cnn_sdc(exp, manifest, p, recs, case))
                         for p, recs in monitoring.items()], method)
    if "inputs" not in cache:
        cache["inputs"] = _baseline_inputs(exp)
    refs, wins = cache["inputs"]
    if method == "ccd":
        return ccd_sdc(refs, monitoring, wins)
    if "baseline" not in cache:
        cache["baseline"] = {p: _baseline_records(exp, p) for p in exp.paths}
    gs = cfg.gmm_settings()
    seed = derive_seed(cfg.seed, STAGE_KL, len(exp.layout.paths), case) % 2**31
    return physics_feature_sdc(refs, cache["baseline"], monitoring, wins, seed,
                               k_max=gs.k_max, n_mc=gs.n_mc)


def run_monitoring_phase(cfg: ExperimentConfig, manifest: RunManifest, test_case_id: int, *,
                         kind: DamageKind | str | None = None, method: str | None = None,
                         tag: str = "monitor") -> SdcTable:
    """SDC table of one test case; ``kind`` overrides the monitored damage class."""
    exp = Experiment.build(cfg)
    method = method or cfg.method_tag()
    if method not in METHODS:
        method = METHOD_ALIASES.get(method, method)
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}")
    if method == "cnn_gmm_kl":
        for p in exp.paths:
            manifest.path(f"model_{SensorLayout.path_name(p)}")
            manifest.path(f"gmm_{SensorLayout.path_name(p)}")
    with _Stage(manifest, "synthesize_monitoring"):
        monitoring = {p: monitoring_records(exp, p, test_case_id, kind) for p in exp.paths}
    with _Stage(manifest, f"sdc_{method}"):
        table = _method_sdc(exp, manifest, method, monitoring, test_case_id, {})
    out = Path(manifest.root) / "sdc" / tag / method / f"case_{test_case_id:02d}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(out)
    manifest.add(f"sdc_{tag}_{method}_{test_case_id:02d}", out)
    return table


def _emit_map(exp: Experiment, manifest: RunManifest, table: SdcTable, prefix: Path) -> DiMap:
    cfg = exp.cfg
    prefix.parent.mkdir(parents=True, exist_ok=True)
    dm = di_map(exp.layout, table, cfg.beta, cfg.grid_spacing)
    for suffix, writer in ((".csv", dm.to_csv), (".png", lambda f: dm.to_png(f, exp.layout))):
        f = prefix.with_name(prefix.name + suffix)
        writer(f)
        manifest.add(f"dimap_{prefix.name}{suffix}", f)
    report = prefix.with_name(prefix.name + "_report.txt")
    damaged = exp.damaged_paths if 0 < len(exp.damaged_paths) < len(exp.paths) else None
    report.write_text(format_report(table, dm, damaged))
    manifest.add(f"report_{prefix.name}", report)
    return dm


@dataclass
class RunResult:
    manifest: RunManifest
    tables: list[SdcTable]
    mean: SdcTable
    dimap: DiMap
    damaged_paths: list[tuple[int, int]]

    @property
    def contrast(self) -> float:
        return contrast_ratio(self.mean, self.damaged_paths)


def run(cfg: ExperimentConfig, out_dir: str | Path, manifest: RunManifest | None = None) -> RunResult:
    """Training phase (unless a manifest is supplied), every test case, mean SDC and DI map."""
    exp = Experiment.build(cfg)
    if manifest is None:
        manifest = run_training_phase(cfg, out_dir)
    method = cfg.method_tag()
    tables = [run_monitoring_phase(cfg, manifest, c, method=method) for c in range(cfg.monitoring_cases)]
    mean = SdcTable.mean(tables)
    mean_file = Path(manifest.root) / "sdc" / f"{method}_mean.csv"
    mean.to_csv(mean_file)
    manifest.add(f"sdc_{method}_mean", mean_file)
    with _Stage(manifest, "di_map"):
        dm = _emit_map(exp, manifest, mean, Path(manifest.root) / "dimap" / method)
    manifest.metrics["estimated_damage"] = list(dm.estimated_damage) if dm.estimated_damage else None
    manifest.save()
    manifest.validate()
    return RunResult(manifest, tables, mean, dm, exp.damaged_paths)


@dataclass
class Comparison:
    means: dict[str, SdcTable]
    maps: dict[str, DiMap]
    report: str


def run_compare(cfg: ExperimentConfig, manifest: RunManifest) -> Comparison:
    """All three methods on identical monitoring data; raw and normalised SDC per path."""
    exp = Experiment.build(cfg)
    for p in exp.paths:
        manifest.path(f"model_{SensorLayout.path_name(p)}")
    cache: dict[str, Any] = {}
    per_method = {m: [] for m in METHODS}
    for case in range(cfg.monitoring_cases):
        with _Stage(manifest, "synthesize_monitoring"):
            monitoring = {p: monitoring_records(exp, p, case) for p in exp.paths}
        for m in METHODS:
            with _Stage(manifest, f"sdc_{m}"):
                per_method[m].append(_method_sdc(exp, manifest, m, monitoring, case, cache))
    root = Path(manifest.root) / "compare"
    root.mkdir(parents=True, exist_ok=True)
    means, maps = {}, {}
    for m in METHODS:
        means[m] = SdcTable.mean(per_method[m])
        f = root / f"{m}_mean.csv"
        means[m].to_csv(f)
        manifest.add(f"compare_sdc_{m}", f)
        maps[m] = _emit_map(exp, manifest, means[m], root / m)
    table_file = root / "comparison.csv"
    with open(table_file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "path", "sdc", "normalized"])
        for m in METHODS:
            norm = means[m].normalized()
            for e, en in zip(means[m].entries, norm.entries):
                w.writerow([m, SensorLayout.path_name(e.path), repr(float(e.sdc)), repr(float(en.sdc))])
    manifest.add("comparison", table_file)
    report = format_comparison(means, maps, exp)
    (root / "comparison.txt").write_text(report)
    manifest.add("comparison_report", root / "comparison.txt")
    manifest.save()
    manifest.validate()
    return Comparison(means, maps, report)


def format_comparison(means: dict[str, SdcTable], maps: dict[str, DiMap], exp: Experiment) -> str:
    paths = exp.paths
    lines = ["path," + ",".join(METHODS)]
    for p in paths:
        cells = []
        for m in METHODS:
            raw = means[m][p]
            cells.append(f"{raw:.4g} ({means[m].normalized()[p]:.2f})")
        lines.append(f"{SensorLayout.path_name(p)}," + ",".join(cells))
    target = exp.layout.damage_position
    for m in METHODS:
        err = maps[m].error_to(target)
        lines.append(f"{m} localization error: {err:.1f} mm")
        if 0 < len(exp.damaged_paths) < len(paths):
            lines.append(f"{m} contrast ratio: {contrast_ratio(means[m], exp.damaged_paths):.4g}")
    return "\n".join(lines) + "\n"


__all__ = ["ExperimentConfig", "GmmSettings", "Experiment", "RunManifest", "RunResult", "Comparison",
           "run_training_phase", "run_monitoring_phase", "run", "run_compare", "monitoring_records",
           "baseline_subset", "GwshmError"]
