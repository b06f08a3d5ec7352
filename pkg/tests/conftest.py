import os

import pytest

from kwlattice.greens import load_or_build


#: cache the user had before the test session; the large acceptance tables live there
USER_CACHE = os.environ.get("KWLATTICE_CACHE")

#: one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session", autouse=True)
def table_cache(tmp_path_factory):
    """Keep Green's tables built by the tests out of the user's cache."""
    path = os.environ.get("KWLATTICE_TEST_CACHE") or str(tmp_path_factory.mktemp("greens-cache"))
    old = os.environ.get("KWLATTICE_CACHE")
    os.environ["KWLATTICE_CACHE"] = path
    yield path
    if old is None:
        os.environ.pop("KWLATTICE_CACHE", None)
    else:
        os.environ["KWLATTICE_CACHE"] = old


@pytest.fixture(scope="session")
def table64(table_cache):
    return load_or_build(64)


@pytest.fixture(scope="session")
def table131(table_cache):
    """Exact kernel for solves on the disc of radius 64."""
    return load_or_build(131)


@pytest.fixture(scope="session")
def table128(table_cache):
    return load_or_build(128)
