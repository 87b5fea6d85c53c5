import json
from pathlib import Path

import pytest

RESOURCES = Path(__file__).parent / "resources"


@pytest.fixture(scope="session")
def golden():
    """Reference values computed outside the package."""
    with open(RESOURCES / "golden.json", "r", encoding="utf-8") as f:
        return json.load(f)


@pytest.fixture(scope="session")
def mc_first16():
    """First samples of one seeded block, drawn by an independent Philox build."""
    with open(RESOURCES / "mc_first16.json", "r", encoding="utf-8") as f:
        return json.load(f)


@pytest.fixture
def defaults_ini():
    return RESOURCES / "defaults.ini"
