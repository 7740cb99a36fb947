"""Shared pytest setup: src/ on the import path, a slow marker and small fixtures"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent / "src"))


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run full surfing simulations")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full simulation, enabled with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
