from pathlib import Path

import numpy as np
import pytest

import semoff
from semoff.config import ScenarioConfig, load_config
from semoff.semantics import load_table

HIGH_LOAD = Path(semoff.__file__).parent / "scenarios" / "high_load.toml"


@pytest.fixture
def cfg() -> ScenarioConfig:
    return ScenarioConfig()


@pytest.fixture
def high_load() -> ScenarioConfig:
    return load_config(HIGH_LOAD)


@pytest.fixture(scope="session")
def table():
    return load_table()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
