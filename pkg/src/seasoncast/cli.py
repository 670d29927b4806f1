"""``seasoncast`` command line: synth | run | evaluate | explain | compare.

Exit codes: 0 success, 2 invalid configuration, 3 data error, 4 training divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DivergenceDetected, GridMismatch, SeasonMismatch
from .grid import PRECIP, ClimateVariable, GridSeries, GridSpec, synth_series, write_manifest
from .models import DEFAULT_MODELS
from .pipeline import RunConfig, cmd_compare, cmd_evaluate, cmd_explain, cmd_run

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("seasoncast")

# synthetic archive used by `seasoncast synth`: precipitation driven by two
# lagged predictors, one pure-noise predictor and one near-duplicate
SYNTH_VARIABLES = (PRECIP, "temp850", "u850", "shum850", "press")
SYNTH_SIGNAL = {"last": "temp850", "first": "u850", "coef": (6.0, 1.5, -1.0), "noise": 0.3}
SYNTH_TWINS = {"press": "temp850"}


def synth_dataset(out, seed: int, years: int = 15, grid: int = 8, start_year: int = 2000, external=False):
    """Write a seeded synthetic archive (and optionally an external forecast) plus a starter config."""
    out = Path(out)
    spec = GridSpec.regular(-30.0, -60.0, grid, grid, 2.5)
    series = synth_series(
        seed, spec, years, SYNTH_VARIABLES, start_year=start_year, signal=SYNTH_SIGNAL, twins=SYNTH_TWINS
    )
    manifest = write_manifest(series, out / "data")
    test_year = start_year + years - 1
    config = {
        "data": "data/manifest.json",
        "test_year": test_year,
        "seed": seed,
        "models": list(DEFAULT_MODELS),
        "out": "run",
    }
    if external:
        rng = np.random.default_rng([seed, 7])
        precip = series.data[PRECIP]
        # a damped, biased dynamical-model stand-in
        fc = np.maximum(0.6 * precip + 0.4 * precip.mean() - 0.5 + rng.normal(0.0, 0.8, precip.shape), 0.0)
        ext = GridSeries(spec, series.time_axis, (ClimateVariable(PRECIP, "mm/day", "external-forecast"),), {PRECIP: fc})
        write_manifest(ext, out / "external")
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2)
        fh.write("\n")
    return manifest


def _overrides(args) -> dict:
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        over["out"] = str(Path(args.out).resolve())
    if getattr(args, "season", None):
        over["seasons"] = args.season
    if getattr(args, "models", None):
        over["models"] = [m for m in args.models.split(",") if m]
    if getattr(args, "test_year", None) is not None:
        over["test_year"] = args.test_year
    return over


def _load_config(args) -> RunConfig:
    if args.config is None:
        raise ConfigError("--config is required")
    return RunConfig.load(args.config, _overrides(args))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seasoncast", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a seeded synthetic archive")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--years", type=int, default=15)
    s.add_argument("--grid", type=int, default=8)
    s.add_argument("--start-year", type=int, default=2000)
    s.add_argument("--external", action="store_true", help="also write an external-forecast manifest")

    for name, text in (
        ("run", "train, evaluate and optionally explain every (season, model)"),
        ("evaluate", "re-score saved checkpoints"),
        ("explain", "Shapley attributions for saved checkpoints"),
    ):
        c = sub.add_parser(name, help=text)
        c.add_argument("--config")
        c.add_argument("--seed", type=int)
        c.add_argument("--out")
        c.add_argument("--season", action="append", choices=["DJF", "MAM", "JJA", "SON"])
        c.add_argument("--models", help="comma-separated model names")
        c.add_argument("--test-year", type=int)

    c = sub.add_parser("compare", help="merge metric reports and flag best values")
    c.add_argument("reports", nargs="+")
    c.add_argument("--external", help="external forecast manifest")
    c.add_argument("--observed", help="observation manifest for the external forecast")
    c.add_argument("--test-year", type=int)
    c.add_argument("--label", default="BAM")
    c.add_argument("--out", help="directory for comparison.csv / comparison.md")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "synth":
            print(synth_dataset(args.out, args.seed, args.years, args.grid, args.start_year, args.external))
        elif args.command == "run":
            if args.seed is None:
                raise ConfigError("--seed is required for run")
            reports = cmd_run(_load_config(args))
            for r in reports:
                print(",".join(r.row()))
        elif args.command == "evaluate":
            for r in cmd_evaluate(_load_config(args)):
                print(",".join(r.row()))
        elif args.command == "explain":
            for (season, model), gi in cmd_explain(_load_config(args)).items():
                print(season, model, " ".join(n for n, _ in gi.ranked()[:5]))
        elif args.command == "compare":
            table = cmd_compare(args.reports, args.external, args.observed, args.test_year, args.label)
            md = table.to_markdown()
            if args.out:
                out = Path(args.out)
                out.mkdir(parents=True, exist_ok=True)
                table.to_csv(out / "comparison.csv")
                (out / "comparison.md").write_text(md + "\n", encoding="utf-8")
            print(md)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SeasonMismatch, GridMismatch) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceDetected as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
