"""Shared fixtures: algebra handles and a persistent reproduce-cell cache.

Trained table cells are expensive, so every test that needs one goes
through ``cell``/``table_result`` below. Cells are cached on disk (in the
system temp directory by default, override with LIENN_TEST_CELLS) and are
retrained only when missing or when their recorded preset no longer
matches the current one. Cell outputs are deterministic functions of the
preset and the fixed seeds, so a cache hit is equivalent to a rerun.
"""

import json
import os
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pytest

from lienn import algebra, reproduce

CELLS_ROOT = Path(
    os.environ.get("LIENN_TEST_CELLS", Path(tempfile.gettempdir()) / "lienn-test-cells")
)


def cell(task: str, arch: str, budget: str = "quick") -> dict:
    """Train-or-load one table cell from the shared cache."""
    preset = asdict(reproduce.PRESETS[(task, budget)])
    meta_path = CELLS_ROOT / "cells" / reproduce.cell_slug(task, arch, budget) / "meta.json"
    force = False
    if meta_path.exists():
        with open(meta_path) as fh:
            force = json.load(fh).get("preset") != preset
    return reproduce.run_cell(task, arch, budget, CELLS_ROOT, force=force)


def table_result(table: int, budget: str = "quick") -> dict:
    """Assemble one table from cached cells (training any that are missing)."""
    task, archs = reproduce.TABLES[table]
    if task == "ablation":
        for t in reproduce.ABLATION_TASKS:
            cell(t, "LN-LBN", budget)
        for t, a in reproduce.ABLATION_BASELINE.items():
            cell(t, a, budget)
    else:
        for a in archs:
            cell(task, a, budget)
    return reproduce.reproduce_table(table, budget, CELLS_ROOT)


def cell_meta(task: str, arch: str, budget: str = "quick") -> dict:
    """meta.json of a cached cell (train/eval timings and the preset)."""
    cell(task, arch, budget)
    meta_path = CELLS_ROOT / "cells" / reproduce.cell_slug(task, arch, budget) / "meta.json"
    with open(meta_path) as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def sl3() -> algebra.LieAlgebra:
    return algebra.get_algebra("sl3")


@pytest.fixture(scope="session")
def so3() -> algebra.LieAlgebra:
    return algebra.get_algebra("so3")


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
