from pathlib import Path

import pytest

from ehdetect import load_scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture(scope="session")
def toy_scenario():
    return load_scenario(SCENARIOS / "toy.scn")


@pytest.fixture(scope="session")
def two_sensor_scenario():
    return load_scenario(SCENARIOS / "two_sensor.scn")


@pytest.fixture(scope="session")
def scenario_dir():
    return SCENARIOS
