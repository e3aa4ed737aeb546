from pathlib import Path

import pytest

from scbandit.env import load_dataset

DATA = Path(__file__).resolve().parent.parent / "data"


@pytest.fixture(scope="session")
def iris_path():
    return DATA / "iris.csv"


@pytest.fixture(scope="session")
def iris(iris_path):
    return load_dataset(iris_path, "species")


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
