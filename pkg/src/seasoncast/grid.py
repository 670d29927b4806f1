"""Gridded monthly climate data: model, manifest I/O, synthetic generator,
season windowing and supervised dataset assembly."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    BadFraction,
    DuplicateVariable,
    EmptySet,
    EmptyVariableList,
    InsufficientHistory,
    MissingFile,
    NonMonotonicTime,
    OutOfRangeMonth,
    ShapeMismatch,
    UnknownVariable,
)

PRECIP = "prgpcp"
PRECIP_UNITS = "mm/day"

SOURCES = ("observation", "reanalysis", "external-forecast")

# Units for the variable catalog; anything else defaults to "1".
DEFAULT_UNITS = {
    PRECIP: PRECIP_UNITS,
    "press": "mb",
    "tempsurf": "°C",
    "temp850": "°C",
    "shum850": "grams/kg",
    "v850": "m/s",
    "u500": "m/s",
    "u850": "m/s",
}

YearMonth = Tuple[int, int]


# -- data model -----------------------------------------------------------------


def _strictly_monotonic(values: Sequence[float]) -> bool:
    d = np.diff(np.asarray(values, dtype=float))
    return bool(np.all(d > 0) or np.all(d < 0))


@dataclass(frozen=True)
class GridSpec:
    lat_values: Tuple[float, ...]
    lon_values: Tuple[float, ...]
    resolution_deg: Optional[float] = None

    def __post_init__(self):
        lats = tuple(float(v) for v in self.lat_values)
        lons = tuple(float(v) for v in self.lon_values)
        if not lats or not lons:
            raise ShapeMismatch("grid needs at least one latitude and one longitude")
        if not _strictly_monotonic(lats) or not _strictly_monotonic(lons):
            raise ShapeMismatch("grid coordinates must be strictly monotonic")
        object.__setattr__(self, "lat_values", lats)
        object.__setattr__(self, "lon_values", lons)

    @property
    def shape(self) -> Tuple[int, int]:
        return len(self.lat_values), len(self.lon_values)

    @property
    def n_points(self) -> int:
        return len(self.lat_values) * len(self.lon_values)

    def point_coords(self) -> np.ndarray:
        """(n_points, 2) array of (lat, lon) in row-major (lat, lon) order."""
        lat, lon = np.meshgrid(self.lat_values, self.lon_values, indexing="ij")
        return np.column_stack([lat.ravel(), lon.ravel()])

    @classmethod
    def regular(cls, lat0, lon0, n_lat, n_lon, step):
        return cls(
            tuple(lat0 + step * i for i in range(n_lat)),
            tuple(lon0 + step * j for j in range(n_lon)),
            resolution_deg=step,
        )


@dataclass(frozen=True)
class ClimateVariable:
    name: str
    units: str
    source: str = "reanalysis"

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r} for {self.name}")


def month_index(ym: YearMonth) -> int:
    return ym[0] * 12 + (ym[1] - 1)


def from_month_index(idx: int) -> YearMonth:
    return idx // 12, idx % 12 + 1


def parse_year_month(text: str) -> YearMonth:
    year, month = text.strip().split("-")
    ym = int(year), int(month)
    if not 1 <= ym[1] <= 12:
        raise OutOfRangeMonth(f"bad month in {text!r}")
    return ym


def format_year_month(ym: YearMonth) -> str:
    return f"{ym[0]:04d}-{ym[1]:02d}"


@dataclass(frozen=True)
class GridSeries:
    """Dense monthly fields on a lat/lon lattice.

    ``data[name]`` has shape ``(n_time, n_lat, n_lon)``; arrays are made
    read-only on construction.
    """

    spec: GridSpec
    time_axis: Tuple[YearMonth, ...]
    variables: Tuple[ClimateVariable, ...]
    data: Mapping[str, np.ndarray] = field(repr=False)
    target: str = PRECIP

    def __post_init__(self):
        times = tuple((int(y), int(m)) for y, m in self.time_axis)
        if not times:
            raise ShapeMismatch("empty time axis")
        idx = [month_index(t) for t in times]
        if any(b - a != 1 for a, b in zip(idx, idx[1:])):
            raise NonMonotonicTime("time axis must increase by exactly one calendar month")
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise DuplicateVariable(f"duplicate variable names in {names}")
        if set(names) != set(self.data):
            raise ShapeMismatch("variable list and data keys differ")
        shape = (len(times),) + self.spec.shape
        frozen = {}
        for name in names:
            arr = np.array(self.data[name], dtype=float)
            if arr.shape != shape:
                raise ShapeMismatch(f"{name}: expected shape {shape}, got {arr.shape}")
            arr.setflags(write=False)
            frozen[name] = arr
        object.__setattr__(self, "time_axis", times)
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "data", frozen)

    @property
    def variable_names(self) -> List[str]:
        return [v.name for v in self.variables]

    def variable(self, name: str) -> ClimateVariable:
        for v in self.variables:
            if v.name == name:
                return v
        raise UnknownVariable(name)

    def check_target(self):
        """Require the precipitation variable in mm/day."""
        var = self.variable(self.target)
        if var.units != PRECIP_UNITS:
            raise ShapeMismatch(f"{self.target} must be in {PRECIP_UNITS}, got {var.units}")

    def time_position(self, ym: YearMonth) -> Optional[int]:
        pos = month_index(ym) - month_index(self.time_axis[0])
        if 0 <= pos < len(self.time_axis):
            return pos
        return None


# -- manifest I/O -------------------------------------------------------------------


def load_manifest(path) -> GridSeries:
    """Read a JSON manifest plus one ``time,lat,lon,value`` CSV per variable."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest not found: {path}")
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    spec = GridSpec(
        tuple(manifest["grid"]["lats"]),
        tuple(manifest["grid"]["lons"]),
        manifest["grid"].get("resolution"),
    )
    start = parse_year_month(manifest["time"]["start"])
    n_months = int(manifest["time"]["months"])
    times = tuple(from_month_index(month_index(start) + i) for i in range(n_months))
    expected_time = [format_year_month(t) for t in times]

    variables, data = [], {}
    for entry in manifest["variables"]:
        var = ClimateVariable(
            entry["name"],
            entry.get("units", DEFAULT_UNITS.get(entry["name"], "1")),
            entry.get("source", "reanalysis"),
        )
        if var.name in data:
            raise DuplicateVariable(var.name)
        file = path.parent / entry["file"]
        data[var.name] = _read_variable_csv(file, spec, expected_time)
        variables.append(var)

    return GridSeries(spec, times, tuple(variables), data, manifest.get("target", PRECIP))


def _read_variable_csv(file: Path, spec: GridSpec, expected_time: List[str]) -> np.ndarray:
    if not file.is_file():
        raise MissingFile(f"data file not found: {file}")
    n_lat, n_lon = spec.shape
    with open(file, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["time", "lat", "lon", "value"]:
            raise ShapeMismatch(f"{file}: bad header {header}")
        rows = list(reader)
    expected = len(expected_time) * n_lat * n_lon
    if len(rows) != expected:
        raise ShapeMismatch(f"{file}: expected {expected} rows, found {len(rows)}")

    # time-major, then lat, then lon
    times = [r[0] for r in rows[:: n_lat * n_lon]]
    if times != expected_time:
        idx = [month_index(parse_year_month(t)) for t in times]
        if any(b - a != 1 for a, b in zip(idx, idx[1:])):
            raise NonMonotonicTime(f"{file}: time column is not consecutive months")
        raise ShapeMismatch(f"{file}: time column does not match manifest start")
    values = np.empty(expected)
    coords = spec.point_coords()
    for i, (t, lat, lon, value) in enumerate(rows):
        k = i % (n_lat * n_lon)
        if t != expected_time[i // (n_lat * n_lon)]:
            raise NonMonotonicTime(f"{file}: row {i + 2} out of time order")
        try:
            lat, lon, values[i] = float(lat), float(lon), float(value)
        except ValueError:
            raise ShapeMismatch(f"{file}: row {i + 2} has a non-numeric field") from None
        if lat != coords[k, 0] or lon != coords[k, 1]:
            raise ShapeMismatch(f"{file}: row {i + 2} is not on the declared grid")
    return values.reshape(len(expected_time), n_lat, n_lon)


def write_manifest(series: GridSeries, directory, name: str = "manifest.json") -> Path:
    """Serialize ``series`` in the manifest + CSV layout; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    times = [format_year_month(t) for t in series.time_axis]
    coords = series.spec.point_coords()
    entries = []
    for var in series.variables:
        fname = f"{var.name}.csv"
        flat = series.data[var.name].reshape(len(times), -1)
        with open(directory / fname, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "lat", "lon", "value"])
            for ti, t in enumerate(times):
                for k in range(coords.shape[0]):
                    w.writerow([t, repr(float(coords[k, 0])), repr(float(coords[k, 1])), repr(float(flat[ti, k]))])
        entries.append({"name": var.name, "units": var.units, "source": var.source, "file": fname})
    manifest = {
        "grid": {"lats": list(series.spec.lat_values), "lons": list(series.spec.lon_values)},
        "variables": entries,
        "time": {"start": times[0], "months": len(times)},
    }
    if series.spec.resolution_deg is not None:
        manifest["grid"]["resolution"] = series.spec.resolution_deg
    if series.target != PRECIP:
        manifest["target"] = series.target
    out = directory / name
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, ensure_ascii=False)
        fh.write("\n")
    return out


# -- synthetic data -----------------------------------------------------------------


def synth_series(
    seed: int,
    spec: GridSpec,
    years: int,
    variable_names: Sequence[str],
    *,
    start_year: int = 2000,
    signal: Optional[Mapping] = None,
    twins: Optional[Mapping[str, str]] = None,
    noise: float = 1.0,
) -> GridSeries:
    """Seeded stand-in for observation/reanalysis archives.

    Every variable is an annual sinusoid (phase depends on the variable's
    position) plus a linear lat/lon gradient plus Gaussian noise.

    ``signal`` makes precipitation learnable one season ahead. It is a
    mapping ``{"last": name_a, "first": name_b, "coef": (c0, a, b),
    "noise": s}``: every month of a season gets
    ``c0 + a * name_a(last month of previous season)
    + b * name_b(first month of previous season) + N(0, s)``, so the
    seasonal-mean target is affine in exactly two lagged features.

    ``twins`` maps a variable name to another variable it should nearly
    duplicate (correlation close to 1), which exercises correlation pruning.
    """
    if not variable_names:
        raise EmptyVariableList("synth_series needs at least one variable")
    if years < 1:
        raise ValueError("years must be >= 1")
    if len(set(variable_names)) != len(variable_names):
        raise DuplicateVariable(str(list(variable_names)))
    twins = dict(twins or {})
    rng = np.random.default_rng(seed)
    n_time = 12 * years
    n_lat, n_lon = spec.shape
    month = np.arange(n_time) % 12
    lat = np.asarray(spec.lat_values)
    lon = np.asarray(spec.lon_values)
    lat_n = (lat - lat.mean()) / (np.ptp(lat) or 1.0)
    lon_n = (lon - lon.mean()) / (np.ptp(lon) or 1.0)

    data: Dict[str, np.ndarray] = {}
    for i, name in enumerate(variable_names):
        phase = 2 * np.pi * ((0.37 * i) % 1.0)
        g_lat, g_lon = rng.uniform(-1.0, 1.0, size=2)
        cycle = np.sin(2 * np.pi * month / 12 + phase)[:, None, None]
        gradient = (g_lat * lat_n[:, None] + g_lon * lon_n[None, :])[None, :, :]
        eps = rng.normal(0.0, noise, size=(n_time, n_lat, n_lon))
        field_ = cycle + gradient + eps
        if name == PRECIP:
            field_ = 4.0 + 2.0 * field_
        data[name] = field_

    for name, source in twins.items():
        if name not in data or source not in data:
            raise UnknownVariable(f"twin {name}->{source} not among variables")
        data[name] = data[source] + rng.normal(0.0, 0.05 * noise, size=data[source].shape)

    if signal is not None and PRECIP in data:
        data[PRECIP] = _signal_precip(data, signal, month, rng)
    if PRECIP in data:
        np.maximum(data[PRECIP], 0.0, out=data[PRECIP])

    times = tuple(from_month_index(start_year * 12 + i) for i in range(n_time))
    variables = tuple(
        ClimateVariable(
            n,
            DEFAULT_UNITS.get(n, "1"),
            "observation" if n == PRECIP else "reanalysis",
        )
        for n in variable_names
    )
    return GridSeries(spec, times, variables, data)


def _signal_precip(data, signal, month, rng):
    last, first = data[signal["last"]], data[signal["first"]]
    c0, a, b = signal.get("coef", (6.0, 1.5, -1.0))
    s = signal.get("noise", 0.3)
    out = data[PRECIP].copy()
    offset = (month + 1) % 3  # position within the season: Dec/Mar/Jun/Sep -> 0
    for t in range(len(month)):
        start = t - offset[t]
        if start - 3 < 0:
            continue
        out[t] = c0 + a * last[start - 1] + b * first[start - 3]
    out = out + rng.normal(0.0, s, size=out.shape)
    return out


# -- seasons -----------------------------------------------------------------------


@dataclass(frozen=True)
class Season:
    label: str
    member_months: Tuple[int, int, int]

    @property
    def previous(self) -> "Season":
        return SEASONS[(SEASON_ORDER.index(self.label) - 1) % 4]

    def months_for(self, year: int) -> List[YearMonth]:
        """Calendar months of this season labelled ``year`` (DJF starts in December of year-1)."""
        if self.label == "DJF":
            return [(year - 1, 12), (year, 1), (year, 2)]
        return [(year, m) for m in self.member_months]

    def predictor_months(self, year: int) -> List[YearMonth]:
        """Months of the season immediately preceding this one."""
        first = month_index(self.months_for(year)[0])
        return [from_month_index(first - 3 + i) for i in range(3)]


SEASON_ORDER = ("DJF", "MAM", "JJA", "SON")
_SEASON_LIST = [
    Season("DJF", (12, 1, 2)),
    Season("MAM", (3, 4, 5)),
    Season("JJA", (6, 7, 8)),
    Season("SON", (9, 10, 11)),
]
SEASONS = _SEASON_LIST
SEASON_BY_LABEL = {s.label: s for s in _SEASON_LIST}


def season_of(month: int) -> Season:
    if not isinstance(month, (int, np.integer)) or not 1 <= month <= 12:
        raise OutOfRangeMonth(f"month must be in 1..12, got {month!r}")
    return _SEASON_LIST[(month % 12) // 3]


def get_season(label: str) -> Season:
    try:
        return SEASON_BY_LABEL[label.upper()]
    except KeyError:
        raise ValueError(f"unknown season {label!r}; expected one of {SEASON_ORDER}") from None


# -- supervised assembly -----------------------------------------------------------


@dataclass(frozen=True)
class SupervisedSet:
    feature_names: Tuple[str, ...]
    features: np.ndarray
    targets: np.ndarray
    sample_keys: Tuple[Tuple[int, str, int], ...]

    def __post_init__(self):
        X = np.array(self.features, dtype=float, ndmin=2)
        y = np.array(self.targets, dtype=float).ravel()
        if X.shape[0] != y.shape[0] or len(self.sample_keys) != y.shape[0]:
            raise ShapeMismatch("features, targets and keys must have equal length")
        if X.shape[0] and X.shape[1] != len(self.feature_names):
            raise ShapeMismatch("feature matrix width does not match feature names")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "sample_keys", tuple(self.sample_keys))

    def __len__(self):
        return self.targets.shape[0]

    def subset(self, indices) -> "SupervisedSet":
        indices = np.asarray(indices, dtype=int)
        return SupervisedSet(
            self.feature_names,
            self.features[indices],
            self.targets[indices],
            tuple(self.sample_keys[i] for i in indices),
        )

    def with_features(self, features: np.ndarray) -> "SupervisedSet":
        return SupervisedSet(self.feature_names, features, self.targets, self.sample_keys)


def feature_names_for(variables: Sequence[str]) -> Tuple[str, ...]:
    names = [f"{v}_t{lag}" for v in variables for lag in range(3)]
    return tuple(names + ["lat", "lon"])


def _season_samples(series, season, year, retained, coords):
    pred_pos = [series.time_position(m) for m in season.predictor_months(year)]
    targ_pos = [series.time_position(m) for m in season.months_for(year)]
    if any(p is None for p in pred_pos + targ_pos):
        return None
    n = series.spec.n_points
    cols = []
    for name in retained:
        arr = series.data[name]
        for p in pred_pos:
            cols.append(arr[p].reshape(n))
    cols.extend([coords[:, 0], coords[:, 1]])
    X = np.column_stack(cols)
    precip = series.data[series.target]
    y = (precip[targ_pos[0]] + precip[targ_pos[1]] + precip[targ_pos[2]]).reshape(n) / 3.0
    keys = [(k, season.label, year) for k in range(n)]
    return X, y, keys


def assemble_supervised(
    series: GridSeries,
    target_season: Season,
    retained_vars: Sequence[str],
    test_year: int,
) -> Tuple[SupervisedSet, SupervisedSet]:
    """Lagged-feature samples for one target season.

    Returns ``(train_val, test)``: ``test`` holds the samples whose target
    season is labelled ``test_year``, ``train_val`` every complete earlier
    (predictor season, target season) pair.
    """
    known = set(series.variable_names)
    for name in retained_vars:
        if name not in known:
            raise UnknownVariable(name)
    names = feature_names_for(retained_vars)
    coords = series.spec.point_coords()

    first_year = series.time_axis[0][0]
    blocks = []
    for year in range(first_year, test_year):
        got = _season_samples(series, target_season, year, retained_vars, coords)
        if got is not None:
            blocks.append(got)
    test = _season_samples(series, target_season, test_year, retained_vars, coords)
    if test is None:
        raise InsufficientHistory(f"no complete {target_season.label} {test_year} season in data")
    if not blocks:
        raise InsufficientHistory(f"no {target_season.label} training seasons before {test_year}")

    train_val = SupervisedSet(
        names,
        np.vstack([b[0] for b in blocks]),
        np.concatenate([b[1] for b in blocks]),
        tuple(k for b in blocks for k in b[2]),
    )
    return train_val, SupervisedSet(names, test[0], test[1], tuple(test[2]))


def holdout_split(dataset: SupervisedSet, train_fraction: float = 0.8, seed: int = 0):
    """Seeded shuffle split into ``(train, validation)`` with ``floor(f * N)`` training rows."""
    if not 0.0 < train_fraction < 1.0:
        raise BadFraction(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(dataset)
    if n == 0:
        raise EmptySet("cannot split an empty set")
    # round first so 0.29 * 100 floors to 29, not 28
    n_train = math.floor(round(train_fraction * n, 9))
    order = np.random.default_rng(seed).permutation(n)
    return dataset.subset(order[:n_train]), dataset.subset(order[n_train:])


def season_grid(values: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Reshape a per-point vector (row-major lat, lon) into a ``(n_lat, n_lon)`` grid."""
    values = np.asarray(values, dtype=float)
    if values.size != spec.n_points:
        raise ShapeMismatch(f"expected {spec.n_points} values, got {values.size}")
    return values.reshape(spec.shape)
