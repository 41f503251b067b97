# tests/conftest.py
import sys
import os

ROOT_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
sys.path.insert(0, ROOT_DIR)

import numpy as np
import pandas as pd
import pytest

from forest.models import ForestConfig
from regime.models import BASE_COLUMNS, MultiStageDataset


def make_dataset(rows, p=1):
    """
    Build a MultiStageDataset from compact tuples.

    Each row is ``(patient_id, stage, X, delta, gamma, arm, B, *z)`` with gamma
    None for censored stages.
    """
    columns = BASE_COLUMNS + [f"z{j}" for j in range(1, p + 1)]
    frame = pd.DataFrame(rows, columns=columns)
    frame["gamma"] = frame["gamma"].astype("Int64")
    return MultiStageDataset(frame)


@pytest.fixture
def small_forest_config():
    """
    Forest settings small enough for unit tests.

    Returns:
        ForestConfig: 10 trees, n_min 2, seed 1, default split rule (GLR)
    """
    return ForestConfig(n_tree=10, n_min=2, seed=1)


@pytest.fixture
def single_leaf_config():
    """One tree on the full sample with splitting disabled by a huge n_min."""
    return ForestConfig(n_tree=1, n_min=10_000, resample="subsample", subsample_fraction=1.0, seed=0)


@pytest.fixture
def two_stage_toy():
    """
    Deterministic two-stage toy with a binary covariate and no censoring.

    Every patient gets both stages; stage lengths depend on (z, a1, a2) so the
    best arm at each stage is known:

        stage 1 length: 1 + (a1 == z)
        stage 2 length: 2 + 3 * (a2 != a1)

    Four replicated patients per (z, a1, a2) cell.
    """
    rows = []
    pid = 0
    for z in (0, 1):
        for a1 in (0, 1):
            for a2 in (0, 1):
                for _ in range(4):
                    pid += 1
                    x1 = 1.0 + (a1 == z)
                    x2 = 2.0 + 3.0 * (a2 != a1)
                    rows.append((f"p{pid}", 1, x1, 1, 0, a1, 0.0, float(z)))
                    rows.append((f"p{pid}", 2, x2, 1, 1, a2, x1, float(z)))
    return make_dataset(rows, p=1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
