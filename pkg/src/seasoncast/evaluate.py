"""Verification metrics, intense-event contingency, latency and error maps."""

from __future__ import annotations

import csv
import json
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConstantObservations, Empty, GridMismatch, LengthMismatch
from .grid import GridSpec

REPORT_COLUMNS = ("model", "season", "mse", "r2", "pod", "far", "latency_ms", "threshold", "tp", "fp", "fn", "tn")
NULL = "x"


def _pair(y, y_hat, min_len=1):
    y = np.asarray(y, dtype=float).ravel()
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    if y.shape != y_hat.shape:
        raise LengthMismatch(f"{y.shape[0]} observations vs {y_hat.shape[0]} predictions")
    if y.shape[0] < min_len:
        raise Empty(f"need at least {min_len} values")
    return y, y_hat


def mse(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.mean((y - y_hat) ** 2))


def r2(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat, min_len=2)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ConstantObservations("R² is undefined for constant observations")
    ss_res = float(np.sum((y - y_hat) ** 2))
    return 1.0 - ss_res / ss_tot


def percentile95(values) -> float:
    """95th percentile by linear interpolation at rank ``1 + 0.95 (n - 1)``."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise Empty("percentile of an empty sample")
    return float(np.percentile(v, 95.0, method="linear"))


def event_counts(y, y_hat, threshold: float) -> Tuple[int, int, int, int]:
    """``(TP, FP, FN, TN)`` where an event is a value strictly above ``threshold``."""
    y, y_hat = _pair(y, y_hat, min_len=0)
    obs = y > threshold
    fct = y_hat > threshold
    tp = int(np.sum(obs & fct))
    fp = int(np.sum(~obs & fct))
    fn = int(np.sum(obs & ~fct))
    tn = int(np.sum(~obs & ~fct))
    return tp, fp, fn, tn


def pod(tp, fn) -> Optional[float]:
    return tp / (tp + fn) if tp + fn > 0 else None


def far(tp, fp) -> Optional[float]:
    return fp / (tp + fp) if tp + fp > 0 else None


def per_cell_pod_far(y, y_hat, threshold, cells):
    """POD/FAR computed per grid cell (over that cell's samples) then averaged
    over the cells where each score is defined."""
    y, y_hat = _pair(y, y_hat)
    cells = np.asarray(cells)
    pods, fars = [], []
    for cell in np.unique(cells):
        m = cells == cell
        tp, fp, fn, _ = event_counts(y[m], y_hat[m], threshold)
        if (p := pod(tp, fn)) is not None:
            pods.append(p)
        if (f := far(tp, fp)) is not None:
            fars.append(f)
    return (float(np.mean(pods)) if pods else None, float(np.mean(fars)) if fars else None)


def measure_latency(predict: Callable, X, repeats: int = 5, clock=time.perf_counter) -> float:
    """Median wall time (ms) of ``repeats`` full predict calls after one discarded warm-up."""
    if repeats < 3:
        raise ValueError("repeats must be >= 3")
    if hasattr(predict, "predict"):
        predict = predict.predict
    predict(X)
    times = []
    for _ in range(repeats):
        t0 = clock()
        predict(X)
        times.append((clock() - t0) * 1000.0)
    return float(statistics.median(times))


@dataclass
class MetricReport:
    model: str
    season: str
    mse: float
    r2: float
    pod: Optional[float]
    far: Optional[float]
    latency_ms: Optional[float]
    event_threshold: float
    tp: int
    fp: int
    fn: int
    tn: int
    test_year: Optional[int] = None
    n_samples: int = 0
    clamped: int = 0
    extra: Dict = field(default_factory=dict)

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("contingency counts must be non-negative")
        if self.n_samples == 0:
            self.n_samples = self.tp + self.fp + self.fn + self.tn

    def row(self) -> List[str]:
        return [
            self.model,
            self.season,
            _fmt(self.mse),
            _fmt(self.r2),
            _fmt(self.pod),
            _fmt(self.far),
            _fmt(self.latency_ms),
            _fmt(self.event_threshold),
            str(self.tp),
            str(self.fp),
            str(self.fn),
            str(self.tn),
        ]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "MetricReport":
        return cls(**d)


def _fmt(v) -> str:
    return NULL if v is None else repr(float(v))


def _parse(v: str):
    return None if v in (NULL, "") else float(v)


def evaluate_predictions(
    model: str,
    season: str,
    y,
    y_hat,
    *,
    latency_ms: Optional[float] = None,
    threshold: Optional[float] = None,
    test_year: Optional[int] = None,
    clamped: int = 0,
    cells=None,
    per_cell: bool = False,
) -> MetricReport:
    """Full metric row. The event threshold defaults to the 95th percentile of ``y``."""
    y, y_hat = _pair(y, y_hat)
    thr = percentile95(y) if threshold is None else float(threshold)
    tp, fp, fn, tn = event_counts(y, y_hat, thr)
    if per_cell:
        p, f = per_cell_pod_far(y, y_hat, thr, cells if cells is not None else np.arange(y.size))
    else:
        p, f = pod(tp, fn), far(tp, fp)
    return MetricReport(
        model, season, mse(y, y_hat), r2(y, y_hat), p, f, latency_ms, thr, tp, fp, fn, tn,
        test_year=test_year, n_samples=int(y.size), clamped=clamped,
    )


def write_report_csv(reports: Sequence[MetricReport], path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            w.writerow(r.row())


def read_report_csv(path) -> List[MetricReport]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(
                MetricReport(
                    row["model"], row["season"], float(row["mse"]), float(row["r2"]),
                    _parse(row["pod"]), _parse(row["far"]), _parse(row["latency_ms"]),
                    float(row["threshold"]), int(row["tp"]), int(row["fp"]), int(row["fn"]), int(row["tn"]),
                )
            )
    return out


def write_report_json(reports: Sequence[MetricReport], path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=2)
        fh.write("\n")


def read_report_json(path) -> List[MetricReport]:
    with open(path, encoding="utf-8") as fh:
        return [MetricReport.from_dict(d) for d in json.load(fh)]


def read_report(path) -> List[MetricReport]:
    return read_report_json(path) if str(path).endswith(".json") else read_report_csv(path)


# -- error maps ---------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorMap:
    spec: GridSpec
    values: np.ndarray

    def to_csv(self, path):
        coords = self.spec.point_coords()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lat", "lon", "error"])
            for (lat, lon), e in zip(coords, self.values.ravel()):
                w.writerow([repr(float(lat)), repr(float(lon)), repr(float(e))])


def error_map(pred, obs, spec: Optional[GridSpec] = None, obs_spec: Optional[GridSpec] = None) -> ErrorMap:
    """Cellwise predicted minus observed; positive means overestimation.

    ``pred`` and ``obs`` are ``(n_lat, n_lon)`` arrays (or ErrorMap-like
    objects with ``spec``/``values``) on the same grid.
    """
    if hasattr(pred, "spec"):
        spec, pred = pred.spec, pred.values
    if hasattr(obs, "spec"):
        obs_spec, obs = obs.spec, obs.values
    if spec is not None and obs_spec is not None and spec != obs_spec:
        raise GridMismatch("prediction and observation grids differ")
    spec = spec or obs_spec
    pred = np.asarray(pred, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if pred.shape != obs.shape or (spec is not None and pred.shape != spec.shape):
        raise GridMismatch(f"grid shapes differ: {pred.shape} vs {obs.shape}")
    if spec is None:
        spec = GridSpec(tuple(range(pred.shape[0])), tuple(range(pred.shape[1])))
    diff = pred - obs
    if not np.all(np.isfinite(diff)):
        raise ValueError("error map has non-finite cells")
    diff.setflags(write=False)
    return ErrorMap(spec, diff)
