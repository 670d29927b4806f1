import json
from pathlib import Path

import pytest

from seasoncast.cli import synth_dataset

FAST_PARAMS = {
    "rf": {"n_trees": 8},
    "gbt": {"n_rounds": 40, "early_stopping": 10},
    "mlp": {"epochs": 6, "patience": 3},
    "cnn1d": {"epochs": 6, "patience": 3},
    "lstm": {"epochs": 6, "patience": 3},
    "gru": {"epochs": 6, "patience": 3},
}


def write_config(root: Path, models, name="config.json", fast=True, **extra) -> Path:
    cfg = json.loads((root / "config.json").read_text())
    cfg["models"] = [{"name": m, "params": FAST_PARAMS[m] if fast else {}} for m in models]
    cfg.update(extra)
    path = root / name
    path.write_text(json.dumps(cfg, indent=2))
    return path


@pytest.fixture(scope="session")
def small_archive(tmp_path_factory):
    """4x4 grid, 6 years, with an external forecast manifest."""
    root = tmp_path_factory.mktemp("archive")
    synth_dataset(root, seed=5, years=6, grid=4, external=True)
    return root


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
