"""Command-line entry point.

Exit codes: 0 success, 2 validation error (bad arguments or config), 3 stage failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import GwshmError, ValidationError

EXIT_OK, EXIT_VALIDATION, EXIT_STAGE = 0, 2, 3


def _experiment(args):
    from .pipeline import DEFAULT_CONFIG, Experiment, ExperimentConfig

    overrides = {"seed": getattr(args, "seed", None) or 0}
    if getattr(args, "layout", None):
        overrides["layout"] = str(Path(args.layout).resolve())
    cfg_file = getattr(args, "config", None) or DEFAULT_CONFIG
    return Experiment.build(ExperimentConfig.load(cfg_file, **overrides))


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"cannot parse number list {text!r}") from exc


def _write_rows(out: str | None, header: Sequence[str], rows) -> None:
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    finally:
        if out:
            fh.close()


# verbs


def cmd_synth(args) -> None:
    from .storage import save_dataset
    from .synth import STAGE_TRAIN_DATA, generate_dataset

    exp = _experiment(args)
    cfg = exp.cfg
    paths = [exp.layout.parse_path(p) for p in args.path] if args.path else exp.paths
    reps = args.reps if args.reps is not None else cfg.reps_train
    recs = generate_dataset(exp.synth, exp.damages, cfg.temperatures, cfg.snr_db, reps, cfg.seed,
                            paths=paths, stage=STAGE_TRAIN_DATA)
    save_dataset(recs, args.out)
    print(f"{len(recs)} records written to {args.out}")


def cmd_dispersion(args) -> None:
    from .dispersion import MaterialTable, default_material, frequency_sweep

    table = MaterialTable.load(args.material) if args.material else default_material()
    f0, f1 = args.freq_range
    if not 0 < f0 <= f1:
        raise ValidationError("need 0 < f_min <= f_max")
    freqs = np.linspace(f0, f1, args.points) if f1 > f0 else np.array([f0])
    modes = ["S0", "A0"] if args.mode == "both" else [args.mode]
    pts = frequency_sweep(freqs, args.thickness * 1e-3, table, modes, _floats(args.temps))
    _write_rows(args.out, ["T", "f", "mode", "c_p", "c_g"],
                ([p.temperature, p.frequency, p.mode.value, p.phase_velocity, p.group_velocity]
                 for p in pts))


def cmd_analyze(args) -> None:
    from .analysis import estimate_group_velocity, morlet_envelope, time_of_flight
    from .storage import load_dataset
    from .synth import ExcitationPulse, SensorLayout, default_layout, hanning_pulse

    layout = SensorLayout.load(args.layout) if args.layout else default_layout()
    pulse = ExcitationPulse(center_frequency=args.f0)
    rows = []
    for w in load_dataset(args.input, args.path):
        tx = hanning_pulse(pulse, w.times)
        tof = time_of_flight(morlet_envelope(tx, args.f0), morlet_envelope(w, args.f0))
        cg = estimate_group_velocity(layout, w.path, tx, w, args.f0)
        rows.append([SensorLayout.path_name(w.path), w.temperature, tof, cg])
    _write_rows(args.out, ["path", "T", "tof", "c_g_estimate"], rows)


def cmd_train(args) -> None:
    import dataclasses

    from .cnn import train
    from .storage import load_dataset, save_model

    exp = _experiment(args)
    recs = load_dataset(args.data, args.path.upper())
    if not recs:
        raise ValidationError(f"no records for {args.path} in {args.data}")
    cfg = exp.cfg.train_config()
    if args.epochs is not None:
        cfg = dataclasses.replace(cfg, epochs=args.epochs)
    model, hist = train(recs, dataclasses.replace(cfg, seed=exp.cfg.seed))
    save_model(model, args.out)
    if hist.test_accuracy:
        best = hist.best_epoch if hist.best_epoch is not None else -1
        print(f"test accuracy {hist.test_accuracy[best]:.4f}")


def cmd_features(args) -> None:
    from .cnn import extract_features
    from .storage import load_dataset, load_model, save_features
    from .synth import SensorLayout

    model = load_model(args.model)
    recs = load_dataset(args.input, args.path.upper() if args.path else None)
    if not recs:
        raise ValidationError(f"no records in {args.input}")
    ids = [f"{SensorLayout.path_name(w.path)}:{w.seed}" for w in recs]
    save_features(extract_features(model, recs), args.out, ids)


def cmd_gmm(args) -> None:
    from .gmm import GmmModel, fit_selected, kl_divergence, pca
    from .storage import load_features

    if args.gmm_cmd == "fit":
        x = load_features(args.features)
        if args.pca2:
            x = pca(x, 2).transform(x)
        floor = GmmModel.load(args.floor_from).floor if args.floor_from else None
        g = fit_selected(x, args.kmax, args.seed, floor=floor)
        g.save(args.out)
        print(f"k={g.k}")
    else:
        p, q = GmmModel.load(args.baseline), GmmModel.load(args.monitoring)
        print(repr(kl_divergence(p, q, args.n_mc, args.seed)))


def cmd_baseline(args) -> None:
    from .baselines import ccd_sdc, physics_feature_sdc
    from .pipeline import _baseline_inputs
    from .storage import load_dataset

    exp = _experiment(args)
    refs, wins = _baseline_inputs(exp)

    def by_path(root):
        recs = load_dataset(root)
        sets = {p: [w for w in recs if tuple(w.path) == p] for p in exp.paths}
        return {p: s for p, s in sets.items() if s}

    mon = by_path(args.monitoring)
    if not mon:
        raise ValidationError("monitoring data has no records on the configured paths")
    if args.baseline_cmd == "ccd":
        table = ccd_sdc(refs, mon, wins, args.kernel)
    else:
        if not args.baseline_data:
            raise ValidationError("di12 needs --baseline-data")
        base = by_path(args.baseline_data)
        gs = exp.cfg.gmm_settings()
        table = physics_feature_sdc(refs, base, mon, wins, exp.cfg.seed, k_max=gs.k_max, n_mc=gs.n_mc)
    table.to_csv(args.out)


def cmd_sdc(args) -> None:
    from .pipeline import ExperimentConfig, RunManifest, run_monitoring_phase

    manifest = RunManifest.load(args.run)
    cfg = ExperimentConfig.load(Path(args.run) / "config.yaml")
    table = run_monitoring_phase(cfg, manifest, args.case, kind=args.kind, method=args.method,
                                 tag=args.tag)
    manifest.save()
    if args.out:
        table.to_csv(args.out)
    for e in table.entries:
        print(f"P{e.tx}{e.rx},{e.sdc!r}")


def cmd_dimap(args) -> None:
    from .localization import SdcTable, di_map, format_report
    from .synth import SensorLayout, default_layout

    layout = SensorLayout.load(args.layout) if args.layout else default_layout()
    table = SdcTable.from_csv(args.sdc)
    dm = di_map(layout, table, args.beta, args.spacing)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    dm.to_csv(f"{prefix}.csv")
    dm.to_png(f"{prefix}.png", layout)
    report = format_report(table, dm, [layout.parse_path(p) for p in args.damaged] or None)
    Path(f"{prefix}_report.txt").write_text(report)
    print(report, end="")


def cmd_run(args) -> None:
    from .pipeline import DEFAULT_CONFIG, ExperimentConfig, run

    cfg = ExperimentConfig.load(args.config or DEFAULT_CONFIG, seed=args.seed, method=args.method)
    res = run(cfg, args.out)
    for e in res.mean.entries:
        print(f"P{e.tx}{e.rx},{e.sdc!r}")
    if res.dimap.estimated_damage is not None:
        print("estimated damage: ({:.1f}, {:.1f}) mm".format(*res.dimap.estimated_damage))


def cmd_compare(args) -> None:
    from .pipeline import ExperimentConfig, RunManifest, run_compare, run_training_phase

    run_dir = Path(args.run)
    if (run_dir / RunManifest.FILE).exists():
        manifest = RunManifest.load(run_dir)
        cfg = ExperimentConfig.load(run_dir / "config.yaml")
    else:
        if args.seed is None:
            raise ValidationError("--seed is required when the run directory has no training phase")
        from .pipeline import DEFAULT_CONFIG
        cfg = ExperimentConfig.load(args.config or DEFAULT_CONFIG, seed=args.seed)
        manifest = run_training_phase(cfg, run_dir)
    print(run_compare(cfg, manifest).report, end="")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gwshm", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    def exp_args(p, seed_required=False):
        p.add_argument("--config", help="experiment YAML (default: bundled desk config)")
        p.add_argument("--layout", help="sensor layout YAML")
        p.add_argument("--seed", type=int, required=seed_required)

    p = sub.add_parser("synth", help="generate a labelled waveform dataset")
    exp_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--path", action="append", help="restrict to a path (repeatable)")
    p.add_argument("--reps", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("dispersion", help="S0/A0 phase and group velocities")
    p.add_argument("--freq-range", type=float, nargs=2, default=[150e3, 150e3], metavar=("FMIN", "FMAX"))
    p.add_argument("--points", type=int, default=1)
    p.add_argument("--thickness", type=float, default=2.0, help="plate thickness, mm")
    p.add_argument("--material")
    p.add_argument("--mode", choices=["S0", "A0", "both"], default="both")
    p.add_argument("--temps", default="20")
    p.add_argument("--out")
    p.set_defaults(func=cmd_dispersion)

    p = sub.add_parser("analyze", help="time of flight from Morlet envelopes")
    p.add_argument("what", choices=["tof"])
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--f0", type=float, default=150e3)
    p.add_argument("--layout")
    p.add_argument("--path")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("train", help="train the CNN of one path")
    exp_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--path", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("features", help="16-D CNN features of a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--path")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("gmm", help="fit a mixture or compute KL between two")
    gsub = p.add_subparsers(dest="gmm_cmd", required=True)
    q = gsub.add_parser("fit")
    q.add_argument("--features", required=True)
    q.add_argument("--kmax", type=int, default=8)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--pca2", action="store_true")
    q.add_argument("--floor-from", help="reuse the covariance floor of this mixture")
    q.add_argument("--out", required=True)
    q = gsub.add_parser("kl")
    q.add_argument("--baseline", required=True)
    q.add_argument("--monitoring", required=True)
    q.add_argument("--n-mc", type=int, default=10_000)
    q.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gmm)

    p = sub.add_parser("baseline", help="physics-feature GMM or CCD SDC tables")
    p.add_argument("baseline_cmd", choices=["di12", "ccd"])
    exp_args(p)
    p.add_argument("--baseline-data")
    p.add_argument("--monitoring", required=True)
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("sdc", help="SDC table of one monitoring test case of a trained run")
    p.add_argument("--run", required=True)
    p.add_argument("--case", type=int, default=0)
    p.add_argument("--kind", choices=["none", "rivet_hole", "added_mass", "notch"])
    p.add_argument("--method", choices=["cnn_gmm", "physics_gmm", "ccd"])
    p.add_argument("--tag", default="monitor")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sdc)

    p = sub.add_parser("dimap", help="damage-index map from an SDC table")
    p.add_argument("--layout")
    p.add_argument("--sdc", required=True)
    p.add_argument("--beta", type=float, default=1.05)
    p.add_argument("--spacing", type=float, default=1.0)
    p.add_argument("--damaged", action="append", default=[], help="damaged path name (repeatable)")
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_dimap)

    p = sub.add_parser("run", help="full pipeline: training, monitoring, imaging")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--method", choices=["cnn_gmm", "physics_gmm", "ccd"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="all three methods on identical monitoring data")
    p.add_argument("--run", required=True, help="run directory (trained if empty)")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (GwshmError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
