from pathlib import Path

import numpy as np
import pytest

from selectmix.datasets import NoiseSpec
from selectmix.harness import ExperimentConfig
from selectmix.mixing import MixStrategy

# (criterion, passed, detail) lines filled in by test_acceptance.py
ACCEPTANCE_LINES = []


def small_config(**kw) -> ExperimentConfig:
    base = dict(dataset="gaussian", noise=NoiseSpec("symmetric", 0.0), strategy=MixStrategy("erm"),
                epochs=6, batch_size=64, hidden=(16,), test_split=200,
                synthetic={"per_class_count": 150, "separation": 8.0})
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture
def make_config():
    return small_config


@pytest.fixture
def golden_dir():
    return Path(__file__).parent / "golden"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
