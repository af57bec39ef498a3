"""Shared fixtures; puts the repository root on sys.path so tests import ``src``."""

import os
import sys

import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)


@pytest.fixture
def run_dir(tmp_path):
    """Provide an empty run directory."""
    path = tmp_path / "run"
    path.mkdir()
    return str(path)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long statistical runs of the shipped presets")
