import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

DATA = Path(__file__).resolve().parent.parent / "src" / "tandem" / "data"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def case2(data_dir):
    return data_dir / "case2.m"


@pytest.fixture(scope="session")
def case9(data_dir):
    return data_dir / "case9.m"


@pytest.fixture(scope="session")
def case27(data_dir):
    return data_dir / "case27.m"


@pytest.fixture(scope="session")
def case_radial7(data_dir):
    return data_dir / "case_radial7.m"
