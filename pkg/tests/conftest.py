from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def fig3_trees() -> list[str]:
    return (FIXTURES / "fig3.trees").read_text().splitlines()


@pytest.fixture
def toy_fixture_dir() -> Path:
    return FIXTURES / "toy"
