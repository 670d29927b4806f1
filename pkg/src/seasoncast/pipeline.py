"""End-to-end orchestration: ingest, prune, scale, assemble, train, evaluate, explain, compare."""

from __future__ import annotations

import csv
import json
import logging
import platform
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .errors import (
    ConfigError,
    DivergenceDetected,
    GridMismatch,
    SeasonMismatch,
)
from .evaluate import (
    NULL,
    MetricReport,
    error_map,
    evaluate_predictions,
    measure_latency,
    read_report,
    write_report_csv,
    write_report_json,
)
from .explain import (
    explain_samples,
    global_importance,
    select_background,
    waterfall_data,
    write_attributions_csv,
    write_summary_dots_csv,
    write_waterfall_json,
)
from .grid import (
    SEASON_ORDER,
    GridSeries,
    SupervisedSet,
    assemble_supervised,
    get_season,
    holdout_split,
    load_manifest,
    month_index,
)
from .models import DISPLAY_NAMES, canonical, load_checkpoint, make_model
from .preprocess import DEFAULT_PRUNE_THRESHOLD, ZScaler, fit_zscore, prune_by_correlation, variable_correlation
from .render import ERROR_STYLE, PRECIP_STYLE, HeatmapStyle, render_heatmap

log = logging.getLogger(__name__)


# -- configuration ------------------------------------------------------------------


@dataclass
class ModelSpec:
    name: str
    params: Dict = field(default_factory=dict)


@dataclass
class ExplainSettings:
    enabled: bool = False
    models: Optional[List[str]] = None  # None -> every trained model
    n_permutations: int = 100
    background: int = 100
    max_samples: Optional[int] = None  # None -> the full test season
    top_k: int = 10
    waterfall_sample: Optional[int] = None  # None -> sample with the largest prediction


@dataclass
class RunConfig:
    data: str
    test_year: int
    seed: int
    models: List[ModelSpec]
    out: str = "out"
    seasons: List[str] = field(default_factory=lambda: list(SEASON_ORDER))
    prune_threshold: float = DEFAULT_PRUNE_THRESHOLD
    train_fraction: float = 0.8
    latency_repeats: int = 5
    per_cell_events: bool = False  # POD/FAR averaged over grid cells instead of pooled
    explain: ExplainSettings = field(default_factory=ExplainSettings)

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        d = dict(d)
        for key in ("data", "test_year", "seed"):
            if d.get(key) is None:
                raise ConfigError(f"config is missing {key!r}")
        models = d.get("models") or []
        if not models:
            raise ConfigError("config lists no models")
        specs = []
        for m in models:
            if isinstance(m, str):
                m = {"name": m}
            try:
                specs.append(ModelSpec(canonical(m["name"]), dict(m.get("params", {}))))
            except (KeyError, TypeError) as exc:
                raise ConfigError(f"bad model entry {m!r}: {exc}") from None
        try:
            seasons = [get_season(s).label for s in d.get("seasons", SEASON_ORDER)]
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not seasons:
            raise ConfigError("config lists no seasons")
        explain = d.get("explain", {}) or {}
        if not isinstance(explain, dict):
            raise ConfigError("explain settings must be an object")
        try:
            explain_settings = ExplainSettings(**explain)
            if explain_settings.models is not None:
                explain_settings.models = [canonical(m) for m in explain_settings.models]
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"bad explain settings: {exc}") from None

        base = Path(base_dir) if base_dir is not None else Path(".")
        data = Path(d["data"])
        out = Path(d.get("out", "out"))
        try:
            cfg = cls(
                data=str(data if data.is_absolute() else base / data),
                test_year=int(d["test_year"]),
                seed=int(d["seed"]),
                models=specs,
                out=str(out if out.is_absolute() else base / out),
                seasons=seasons,
                prune_threshold=float(d.get("prune_threshold", DEFAULT_PRUNE_THRESHOLD)),
                train_fraction=float(d.get("train_fraction", 0.8)),
                latency_repeats=int(d.get("latency_repeats", 5)),
                per_cell_events=bool(d.get("per_cell_events", False)),
                explain=explain_settings,
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config value: {exc}") from None
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, overrides: Optional[dict] = None) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        d.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(d, base_dir=path.parent)

    def validate(self):
        if not 0.0 < self.prune_threshold <= 1.0:
            raise ConfigError("prune_threshold must be in (0, 1]")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must be in (0, 1)")
        if self.latency_repeats < 3:
            raise ConfigError("latency_repeats must be >= 3")
        if len({m.name for m in self.models}) != len(self.models):
            raise ConfigError("each model may appear only once")

    def to_dict(self) -> dict:
        return asdict(self)


def job_seed(seed: int, *labels: str) -> int:
    """Per-job seed derived from the run seed and job labels (order-independent across jobs)."""
    words = [int(seed)] + [zlib.crc32(label.encode()) for label in labels]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


# -- per-season data preparation ----------------------------------------------------


@dataclass
class SeasonData:
    season: str
    retained: List[str]
    dropped: List[str]
    scaler: ZScaler
    train: SupervisedSet
    val: SupervisedSet
    test: SupervisedSet  # scaled features
    spec: object


def prune_variables(series: GridSeries, test_year: int, threshold: float):
    """Correlation pruning over whole variables using only pre-test-year months."""
    names = series.variable_names
    positions = [i for i, (y, _) in enumerate(series.time_axis) if y < test_year] or None
    corr = variable_correlation(series, names, positions)
    retained = prune_by_correlation(corr, threshold, protected=[series.target])
    # target first, then declared order
    retained = [series.target] + [n for n in retained if n != series.target]
    return retained, [n for n in names if n not in retained], corr


def prepare_season(series: GridSeries, season_label: str, config: RunConfig, retained: Sequence[str]) -> SeasonData:
    season = get_season(season_label)
    train_val, test = assemble_supervised(series, season, list(retained), config.test_year)
    train, val = holdout_split(train_val, config.train_fraction, job_seed(config.seed, season.label, "split"))
    scaler = fit_zscore(train.features, train.feature_names)
    dropped = [n for n in series.variable_names if n not in retained]
    return SeasonData(
        season.label,
        list(retained),
        dropped,
        scaler,
        train.with_features(scaler.apply(train.features)),
        val.with_features(scaler.apply(val.features)),
        test.with_features(scaler.apply(test.features)),
        series.spec,
    )


# -- artifacts ----------------------------------------------------------------------


def _write_json(obj, path: Path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_predictions(path, spec, observed, predicted):
    coords = spec.point_coords()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lat", "lon", "observed", "predicted"])
        for (lat, lon), o, p in zip(coords, observed, predicted):
            w.writerow([repr(float(lat)), repr(float(lon)), repr(float(o)), repr(float(p))])


def _grid(values, spec):
    return np.asarray(values, dtype=float).reshape(spec.shape)


def _precip_style(sd: SeasonData, *arrays):
    lo = min(float(np.min(a)) for a in arrays)
    hi = max(float(np.max(a)) for a in arrays)
    return HeatmapStyle("sequential", (lo, hi), PRECIP_STYLE.cell_pixels)


def evaluate_model(model, name, sd: SeasonData, config: RunConfig, job_dir: Path, measure=True) -> MetricReport:
    raw = model.predict(sd.test.features)
    pred = np.maximum(raw, 0.0)
    clamped = int(np.sum(raw < 0.0))
    latency = measure_latency(model.predict, sd.test.features, config.latency_repeats) if measure else None
    report = evaluate_predictions(
        name, sd.season, sd.test.targets, pred,
        latency_ms=latency, test_year=config.test_year, clamped=clamped,
        per_cell=config.per_cell_events,
    )
    obs_grid = _grid(sd.test.targets, sd.spec)
    pred_grid = _grid(pred, sd.spec)
    emap = error_map(pred_grid, obs_grid, sd.spec, sd.spec)
    emap.to_csv(job_dir / "error_map.csv")
    render_heatmap(emap.values, ERROR_STYLE, job_dir / "error_map.ppm", sd.spec.lat_values)
    render_heatmap(pred_grid, _precip_style(sd, obs_grid, pred_grid), job_dir / "predicted.ppm", sd.spec.lat_values)
    _write_predictions(job_dir / "predictions.csv", sd.spec, sd.test.targets, pred)
    return report


def explain_model(model, sd: SeasonData, settings: ExplainSettings, seed: int, job_dir: Path):
    """Attributions for the test season; writes CSV/JSON artifacts and returns the global ranking."""
    out = job_dir / "explain"
    out.mkdir(parents=True, exist_ok=True)
    background = select_background(sd.train.features, settings.background, job_seed(seed, "background"))
    X = sd.test.features
    ids = np.arange(X.shape[0])
    if settings.max_samples is not None:
        ids = ids[: settings.max_samples]
    atts = explain_samples(
        model, X[ids], background, settings.n_permutations, job_seed(seed, "shap"), sd.test.feature_names, ids
    )
    gi = global_importance(atts)
    write_attributions_csv(atts, out / "attributions.csv")
    write_summary_dots_csv(atts, X[ids], out / "summary_dots.csv")
    gi.to_csv(out / "importance.csv")
    if settings.waterfall_sample is not None:
        pick = min(int(settings.waterfall_sample), len(atts) - 1)
    else:
        pick = int(np.argmax([a.prediction for a in atts]))
    write_waterfall_json(waterfall_data(atts[pick], settings.top_k), out / "waterfall.json")
    return gi


def _versions():
    return {
        "seasoncast": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }


def cmd_run(config: RunConfig) -> List[MetricReport]:
    """Run every (season, model) job; returns the metric rows.

    Raises DataError subclasses for data problems and DivergenceDetected
    (annotated with model and season) for training failures.
    """
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    series = load_manifest(config.data)
    series.check_target()
    retained, dropped, corr = prune_variables(series, config.test_year, config.prune_threshold)
    corr.to_csv(out / "correlation.csv")
    log.info("retained variables %s, dropped %s", retained, dropped)

    reports: List[MetricReport] = []
    run_log = {
        "config": config.to_dict(),
        "versions": _versions(),
        "retained_variables": retained,
        "dropped_variables": dropped,
        "jobs": [],
    }
    for season in config.seasons:
        sd = prepare_season(series, season, config, retained)
        sdir = out / season
        sdir.mkdir(exist_ok=True)
        sd.scaler.save(sdir / "scaler.json")
        obs = _grid(sd.test.targets, sd.spec)
        render_heatmap(obs, HeatmapStyle("sequential"), sdir / "observed.ppm", sd.spec.lat_values)
        for spec in config.models:
            seed = job_seed(config.seed, season, spec.name)
            log.info("training %s for %s (seed %d)", spec.name, season, seed)
            jdir = sdir / spec.name
            jdir.mkdir(exist_ok=True)
            model = make_model(spec.name, spec.params, seed)
            try:
                model.fit(sd.train.features, sd.train.targets, sd.val.features, sd.val.targets)
            except DivergenceDetected as exc:
                raise DivergenceDetected(f"{spec.name} diverged for {season}: {exc}", spec.name, season) from exc
            model.save(jdir / "checkpoint.json")
            if getattr(model, "history", None) is not None:
                model.history.to_csv(jdir / "history.csv")
            report = evaluate_model(model, spec.name, sd, config, jdir)
            reports.append(report)
            job = {"season": season, "model": spec.name, "seed": seed, "n_train": len(sd.train),
                   "n_val": len(sd.val), "n_test": len(sd.test)}
            if config.explain.enabled and (config.explain.models is None or spec.name in config.explain.models):
                gi = explain_model(model, sd, config.explain, seed, jdir)
                job["top_features"] = [n for n, _ in gi.ranked()[:5]]
            run_log["jobs"].append(job)

    write_report_csv(reports, out / "report.csv")
    write_report_json(reports, out / "report.json")
    write_metrics_csv(reports, out / "metrics.csv")
    _write_json(run_log, out / "run_log.json")
    return reports


def write_metrics_csv(reports, path):
    """Report columns without wall-clock latency, byte-stable across identical runs."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "season", "mse", "r2", "pod", "far", "threshold", "tp", "fp", "fn", "tn", "clamped"])
        for r in reports:
            row = r.row()
            w.writerow(row[:6] + row[7:] + [str(r.clamped)])


def _reload(config: RunConfig):
    series = load_manifest(config.data)
    series.check_target()
    retained, _, _ = prune_variables(series, config.test_year, config.prune_threshold)
    return series, retained


def cmd_evaluate(config: RunConfig) -> List[MetricReport]:
    """Re-score checkpoints written by :func:`cmd_run` on the test season."""
    out = Path(config.out)
    series, retained = _reload(config)
    reports = []
    for season in config.seasons:
        sd = prepare_season(series, season, config, retained)
        for spec in config.models:
            jdir = out / season / spec.name
            model = load_checkpoint(jdir / "checkpoint.json")
            reports.append(evaluate_model(model, spec.name, sd, config, jdir))
    write_report_csv(reports, out / "report.csv")
    write_report_json(reports, out / "report.json")
    write_metrics_csv(reports, out / "metrics.csv")
    return reports


def cmd_explain(config: RunConfig) -> Dict:
    """Shapley artifacts for saved checkpoints; returns ``{(season, model): GlobalImportance}``."""
    out = Path(config.out)
    series, retained = _reload(config)
    result = {}
    names = config.explain.models or [m.name for m in config.models]
    for season in config.seasons:
        sd = prepare_season(series, season, config, retained)
        for name in names:
            jdir = out / season / name
            model = load_checkpoint(jdir / "checkpoint.json")
            seed = job_seed(config.seed, season, name)
            result[(season, name)] = explain_model(model, sd, config.explain, seed, jdir)
    return result


# -- comparison ---------------------------------------------------------------------

# metric -> True when larger is better
METRIC_DIRECTION = {"latency_ms": False, "mse": False, "r2": True, "pod": True, "far": False}


def external_reports(forecast_path, observed_path, seasons, test_year, label="BAM") -> List[MetricReport]:
    """Metric rows for an externally produced gridded forecast (no latency)."""
    fc = load_manifest(forecast_path)
    ob = load_manifest(observed_path)
    if fc.spec != ob.spec:
        raise GridMismatch("external forecast grid differs from the observation grid")
    rows = []
    for label_s in seasons:
        season = get_season(label_s)
        months = season.months_for(test_year)
        fpos = [fc.time_position(m) for m in months]
        opos = [ob.time_position(m) for m in months]
        if None in fpos or None in opos:
            raise SeasonMismatch(f"{season.label} {test_year} not covered by forecast and observations")
        f = np.mean([fc.data[fc.target][p] for p in fpos], axis=0).ravel()
        o = np.mean([ob.data[ob.target][p] for p in opos], axis=0).ravel()
        rows.append(evaluate_predictions(label, season.label, o, f, latency_ms=None, test_year=test_year))
    return rows


@dataclass
class ComparisonTable:
    rows: List[MetricReport]
    best: Dict  # (season, metric) -> set of model names

    def is_best(self, row: MetricReport, metric: str) -> bool:
        return row.model in self.best.get((row.season, metric), set())

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "season", "latency_ms", "mse", "r2", "pod", "far", "best"])
            for r in self.rows:
                flags = [m for m in METRIC_DIRECTION if self.is_best(r, m)]
                w.writerow([r.model, r.season] + [_cell(getattr(r, m)) for m in METRIC_DIRECTION] + [";".join(flags)])

    def to_markdown(self) -> str:
        lines = []
        for season in dict.fromkeys(r.season for r in self.rows):
            lines.append(f"### {season}")
            lines.append("")
            lines.append("| Model | Latency (ms) | MSE | R² | POD | FAR |")
            lines.append("|---|---|---|---|---|---|")
            for r in (r for r in self.rows if r.season == season):
                cells = []
                for m in METRIC_DIRECTION:
                    text = _cell(getattr(r, m), 4 if m == "latency_ms" else 2)
                    cells.append(f"**{text}**" if self.is_best(r, m) else text)
                lines.append(f"| {DISPLAY_NAMES.get(r.model, r.model)} | " + " | ".join(cells) + " |")
            lines.append("")
        return "\n".join(lines)


def _cell(value, digits=None) -> str:
    if value is None:
        return NULL
    return f"{value:.{digits}f}" if digits is not None else repr(float(value))


def flag_best(rows: Sequence[MetricReport]) -> Dict:
    best = {}
    for season in {r.season for r in rows}:
        srows = [r for r in rows if r.season == season]
        for metric, larger in METRIC_DIRECTION.items():
            vals = [(getattr(r, metric), r.model) for r in srows if getattr(r, metric) is not None]
            if not vals:
                continue
            target = max(v for v, _ in vals) if larger else min(v for v, _ in vals)
            best[(season, metric)] = {m for v, m in vals if v == target}
    return best


def cmd_compare(report_paths, external=None, observed=None, test_year=None, label="BAM") -> ComparisonTable:
    groups = [read_report(p) for p in report_paths]
    if not groups:
        raise SeasonMismatch("no reports to compare")
    season_sets = [tuple(sorted({r.season for r in g})) for g in groups]
    if len(set(season_sets)) != 1:
        raise SeasonMismatch(f"reports cover different seasons: {season_sets}")
    years = {r.test_year for g in groups for r in g if r.test_year is not None}
    if len(years) > 1:
        raise SeasonMismatch(f"reports use different test years: {sorted(years)}")
    rows = [r for g in groups for r in g]
    if external is not None:
        year = test_year if test_year is not None else (years.pop() if years else None)
        if year is None:
            raise SeasonMismatch("test year unknown; pass it explicitly for external forecasts")
        if observed is None:
            raise ValueError("external forecasts need an observation manifest")
        seasons = sorted(season_sets[0], key=SEASON_ORDER.index)
        rows.extend(external_reports(external, observed, seasons, year, label))
    order = {s: i for i, s in enumerate(SEASON_ORDER)}
    rows.sort(key=lambda r: order.get(r.season, 99))
    return ComparisonTable(rows, flag_best(rows))


def seasonal_mean(series: GridSeries, season_label: str, year: int) -> np.ndarray:
    season = get_season(season_label)
    pos = [series.time_position(m) for m in season.months_for(year)]
    if None in pos:
        raise SeasonMismatch(f"{season_label} {year} not in series")
    return np.mean([series.data[series.target][p] for p in pos], axis=0)
