"""Command-line entry point.

Exit codes: 0 success, 1 input error, 2 configuration error, 3 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, analysis, pipeline, synthetic
from .config import ConfigError, PipelineConfig, load_config
from .filtering import read_sections_csv, sections_to_csv
from .fitting import DesignSpec, FitData, FitError, cross_validate, fit_glm, wald_eliminate
from .gpx import GpxParseError, Source
from .models import (
    GlmCoefficients,
    InfeasibleRoute,
    Leg,
    ModelConfigError,
    build_models,
    bundled_coefficients,
    critical_gradient,
    route_time,
)
from .terrain import TerrainClass, hill_slope, sample_elevation

log = logging.getLogger("trailspeed")

EXIT_OK, EXIT_INPUT, EXIT_CONFIG, EXIT_INVARIANT = 0, 1, 2, 3


class InputError(Exception):
    pass


class RunDir:
    """Output directory plus a manifest naming the config hash and written files."""

    def __init__(self, path: str | Path, command: str, config: PipelineConfig, seed: int):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.manifest = {
            "command": command,
            "version": __version__,
            "config_hash": config.hash(),
            "seed": seed,
            "outputs": {},
        }
        (self.path / "config.json").write_text(config.dumps())

    def write(self, name: str, text: str) -> Path:
        p = self.path / name
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
        self.manifest["outputs"][name] = hashlib.sha256(text.encode()).hexdigest()
        return p

    def close(self, **extra) -> None:
        self.manifest.update(extra)
        (self.path / "manifest.json").write_text(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _read_sections(path: str) -> FitData:
    try:
        return FitData.from_sections(read_sections_csv(path))
    except (OSError, KeyError, ValueError) as exc:
        raise InputError(f"cannot read sections from {path}: {exc}") from None


def _coefficients(args, config: PipelineConfig) -> GlmCoefficients:
    path = getattr(args, "coefficients", None) or config.models.coefficients
    if not path:
        return bundled_coefficients()
    try:
        return GlmCoefficients.load(path)
    except OSError as exc:
        raise InputError(f"cannot read coefficients {path}: {exc}") from None
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad coefficients file {path}: {exc}") from None


def _models(args, config: PipelineConfig):
    m = config.models
    try:
        models = build_models(_coefficients(args, config), m.plugins, m.naismith, m.tobler)
    except ModelConfigError as exc:
        raise ConfigError(str(exc)) from None
    names = getattr(args, "models", None)
    if names:
        wanted = [n.strip() for n in names.split(",") if n.strip()]
        unknown = [n for n in wanted if n not in models]
        if unknown:
            raise ConfigError(f"unknown models {unknown}; available {sorted(models)}")
        models = {n: models[n] for n in wanted}
    return models


def cmd_ingest(args, config: PipelineConfig) -> int:
    run = RunDir(args.out, "ingest", config, args.seed)
    files = pipeline.gpx_files(args.paths)
    if not files:
        log.warning("no GPX files found under %s", ", ".join(map(str, args.paths)))
    result = pipeline.ingest(files, config, Source(args.source))
    text = pipeline.tracks_to_json(result.tracks)
    run.write(pipeline.STORE_FILE, text)
    run.close(
        files=len(files),
        tracks=len(result.tracks),
        segments=sum(len(t.segments) for t in result.tracks),
        failures=result.failures,
    )
    print(f"ingested {len(result.tracks)} tracks from {len(files)} files ({len(result.failures)} failed)")
    return EXIT_OK


def cmd_clean(args, config: PipelineConfig) -> int:
    try:
        tracks = pipeline.load_store(args.store)
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"cannot read track store {args.store}: {exc}") from None
    try:
        layers = pipeline.load_layers(config)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot load terrain layers: {exc}") from None
    result = pipeline.clean(tracks, config, layers, jobs=args.jobs)
    run = RunDir(args.out, "clean", config, args.seed)
    run.write("sections.csv", sections_to_csv(result.sections))
    run.write("drops.csv", _csv(pipeline.DROP_COLUMNS, pipeline.drop_manifest_rows(result)))
    b = result.bounds
    counts: dict[str, int] = {}
    for s in result.sections:
        key = s.exclusion or "kept"
        counts[key] = counts.get(key, 0) + 1
    run.close(
        bounds={"source": result.bounds_source, "max_q3": b.max_q3, "med_med": b.med_med, "max_whisker": b.max_whisker, "q3_min": b.q3_min},
        sections=dict(sorted(counts.items())),
        dropped_segments=sum(1 for s in result.segments if s.dropped),
    )
    print(f"{counts.get('kept', 0)} usable sections of {len(result.sections)}; "
          f"{sum(1 for s in result.segments if s.dropped)} segments dropped")
    return EXIT_OK


def cmd_fit(args, config: PipelineConfig) -> int:
    data = _read_sections(args.sections)
    if len(data) == 0:
        raise InputError("no usable sections to fit")
    fs = config.fitting
    spec = DesignSpec.full(fs.reference_road, family=fs.family)
    kw = dict(max_iter=fs.max_iter, tol=fs.tol, correction=fs.small_sample_correction)
    if args.no_eliminate:
        fit, dropped = fit_glm(data, spec, **kw), []
    else:
        elim = wald_eliminate(data, spec, fs.alpha, **kw)
        fit, dropped = elim.fit, elim.dropped
    run = RunDir(args.out, "fit", config, args.seed)
    doc = fit.to_dict()
    doc["eliminated"] = [{"term": t, "p_value": p} for t, p in dropped]
    if args.cv:
        folds = fs.folds if args.folds is None else args.folds
        cv = cross_validate(data, fit.spec, folds, args.seed, max_iter=fs.max_iter, tol=fs.tol)
        doc["cross_validation"] = {"folds": cv.folds, "mean": cv.mean, "pooled": cv.pooled}
    run.write("fit.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if fit.spec.family == "gaussian_log":
        run.write("glm_coefficients.json", json.dumps(fit.glm_coefficients().to_dict(), indent=2) + "\n")
    run.close(n_obs=fit.n_obs, terms=list(fit.terms))
    for t, est, se in zip(fit.terms, fit.params, fit.se):
        print(f"{t:20s} {est: .6f}  (se {se:.6f})")
    return EXIT_OK


def _read_route(path: str) -> list[Leg]:
    try:
        with open(path, newline="") as fh:
            return [
                Leg(
                    float(r["distance_m"]),
                    float(r.get("walking_slope_deg") or 0.0),
                    float(r.get("hill_slope_deg") or 0.0),
                    TerrainClass(r.get("terrain") or r.get("terrain_class") or "paved"),
                )
                for r in csv.DictReader(fh)
            ]
    except (OSError, KeyError, ValueError) as exc:
        raise InputError(f"cannot read route {path}: {exc}") from None


def cmd_predict(args, config: PipelineConfig) -> int:
    legs = _read_route(args.route)
    models = _models(args, config)
    if args.model not in models:
        raise ConfigError(f"unknown model {args.model!r}; available {sorted(models)}")
    try:
        rt = route_time(models[args.model], legs)
    except InfeasibleRoute as exc:
        raise InputError(str(exc)) from None
    rows = [
        (i, repr(leg.distance_m), repr(leg.walking_slope_deg), repr(leg.hill_slope_deg), leg.terrain.value,
         repr(float(v)), repr(float(c * 60)))
        for i, (leg, v, c) in enumerate(zip(legs, rt.speeds_kmh, rt.cumulative_hours))
    ]
    run = RunDir(args.out, "predict", config, args.seed)
    run.write("times.csv", _csv(
        ["leg", "distance_m", "walking_slope_deg", "hill_slope_deg", "terrain", "speed_kmh", "cumulative_min"], rows
    ))
    run.close(model=args.model, total_minutes=rt.hours * 60)
    print(f"{args.model}: {rt.hours * 60:.2f} min over {sum(l.distance_m for l in legs) / 1000:.3f} km")
    return EXIT_OK


def cmd_compare(args, config: PipelineConfig) -> int:
    data = _read_sections(args.sections)
    if len(data) == 0:
        raise InputError("no usable sections to compare")
    models = _models(args, config)
    reports = analysis.compare_models(data, models)
    run = RunDir(args.out, "compare", config, args.seed)
    run.write("metrics.csv", analysis.metrics_csv(reports))
    if args.plot_data:
        for name, text in sorted(analysis.plot_data(models, data).items()):
            run.write(f"plot_data/{name}", text)
    run.close(metrics={k: r.as_row() for k, r in reports.items()})
    for k, r in reports.items():
        print(f"{k:12s} pct_err={r.avg_pct_error:8.3f} mse={r.mse:.4f} rmse={r.rmse:.4f} r2={r.r2:.4f}")
    return EXIT_OK


def demo_profile(models, n: int = 241, terrain: TerrainClass = TerrainClass.OFFROAD_LIGHT):
    """Walk due east over a synthetic ridge; rows of distance, height, slopes and model speeds."""
    dtm = synthetic.ridge_dtm()
    xy = synthetic.ridge_profile(dtm, n, heading_deg=90.0)
    z = np.array([sample_elevation(dtm, x, y) for x, y in xy])
    phi = np.array([hill_slope(dtm, x, y) for x, y in xy])
    step = np.hypot(*(xy[1:] - xy[:-1]).T)
    theta = np.degrees(np.arctan(np.diff(z) / step))
    along = np.concatenate([[0.0], np.cumsum(step)])
    rows = []
    for i in range(n - 1):
        mid_phi = 0.5 * (phi[i] + phi[i + 1])
        speeds = [float(m.speed(theta[i], mid_phi, terrain)) for m in models.values()]
        rows.append((along[i], z[i], theta[i], mid_phi, *speeds))
    return rows


def cmd_demo_route(args, config: PipelineConfig) -> int:
    models = _models(args, config)
    terrain = TerrainClass(args.terrain)
    rows = demo_profile(models, args.points, terrain)
    run = RunDir(args.out, "demo-route", config, args.seed)
    text = _csv(
        ["distance_m", "elevation_m", "walking_slope_deg", "hill_slope_deg", *[f"{k}_kmh" for k in models]],
        [[repr(float(v)) for v in r] for r in rows],
    )
    run.write("profile.csv", text)
    run.close(terrain=terrain.value, models=list(models))
    print(f"wrote {len(rows)} profile rows to {run.path / 'profile.csv'}")
    return EXIT_OK


def cmd_critical_gradient(args, config: PipelineConfig) -> int:
    models = _models(args, config)
    rows = []
    for name, m in models.items():
        for t in TerrainClass:
            up = critical_gradient(m, t, "up")
            down = critical_gradient(m, t, "down")
            rows.append((name, t.value, up, down))
            print(f"{name:10s} {t.value:16s} up={up:6.1f} down={down:6.1f}")
    if args.out:
        run = RunDir(args.out, "critical-gradient", config, args.seed)
        run.write("critical_gradient.csv", _csv(["model", "terrain", "uphill_deg", "downhill_deg"], rows))
        run.close()
    return EXIT_OK


def cmd_config(args, config: PipelineConfig) -> int:
    sys.stdout.write(config.dumps())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (falls back to $TRAILSPEED_CONFIG)")
    common.add_argument("--seed", type=int, default=None, help="override the configured seed")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--plot-data", action="store_true", help="also write per-figure CSVs")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="trailspeed", description="GPS walking-speed pipeline and models")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="parse GPX files into a track store")
    s.add_argument("paths", nargs="+")
    s.add_argument("--source", choices=[x.value for x in Source], default="other")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("clean", parents=[common], help="detect breaks, filter and merge into sections")
    s.add_argument("store")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_clean)

    s = sub.add_parser("fit", parents=[common], help="fit the speed GLM to a section CSV")
    s.add_argument("sections")
    s.add_argument("--out", required=True)
    s.add_argument("--no-eliminate", action="store_true", help="fit the full design without elimination")
    s.add_argument("--cv", action="store_true", help="also run track-level cross-validation")
    s.add_argument("--folds", type=int, default=None)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("predict", parents=[common], help="time a route CSV with one model")
    s.add_argument("route")
    s.add_argument("--model", default="glm")
    s.add_argument("--coefficients")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("compare", parents=[common], help="score models against a section CSV")
    s.add_argument("sections")
    s.add_argument("--models", help="comma-separated subset")
    s.add_argument("--coefficients")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("demo-route", parents=[common], help="speed profile across a synthetic ridge")
    s.add_argument("--models", help="comma-separated subset")
    s.add_argument("--coefficients")
    s.add_argument("--terrain", default=TerrainClass.OFFROAD_LIGHT.value, choices=[t.value for t in TerrainClass])
    s.add_argument("--points", type=int, default=241)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_demo_route)

    s = sub.add_parser("critical-gradient", parents=[common], help="zig-zag crossover slopes per model")
    s.add_argument("--models", help="comma-separated subset")
    s.add_argument("--coefficients")
    s.add_argument("--out")
    s.set_defaults(func=cmd_critical_gradient)

    s = sub.add_parser("config", parents=[common], help="print the effective configuration")
    s.set_defaults(func=cmd_config)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        args.seed = config.seed
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        return args.func(args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, GpxParseError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FitError as exc:
        print(f"fit error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except pipeline.InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
