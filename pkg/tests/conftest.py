from pathlib import Path

import pytest

SCENARIOS = Path(__file__).resolve().parents[1] / "src" / "parasite_lab" / "scenarios"
GOLDEN = Path(__file__).resolve().parent / "golden"


@pytest.fixture
def scenario_path():
    return lambda name: SCENARIOS / f"{name}.json"
