import os
from pathlib import Path

import numpy as np
import pytest

from primpose.shapes import CATEGORIES
from primpose.synth import cached_category_model

ROOT = Path(__file__).resolve().parents[1]
CACHE_DIR = os.environ.get("PRIMPOSE_CACHE", str(ROOT / ".cache" / "models"))

# Desk profile: 40 instances, 64 primitives, 8 latent dimensions.
DESK = dict(n_instances=40, n_c=64, latent_dim=8, seed=0)

ACCEPTANCE_LINES = []


def get_model(category: str):
    return cached_category_model(CATEGORIES[category], cache_dir=CACHE_DIR, **DESK)


@pytest.fixture(scope="session")
def bottle_model():
    return get_model("bottle")


@pytest.fixture(scope="session")
def all_models():
    return {c: get_model(c) for c in sorted(CATEGORIES)}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
