import time

import pytest

from collapselab.tm import build_frequency_table, persist_table


@pytest.fixture(autouse=True, scope="session")
def _isolated_cache(tmp_path_factory):
    mp = pytest.MonkeyPatch()
    mp.setenv("COLLAPSELAB_CACHE", str(tmp_path_factory.mktemp("cache")))
    yield
    mp.undo()


@pytest.fixture(scope="session")
def table12():
    return build_frequency_table(1, 2, 100)


@pytest.fixture(scope="session")
def table22():
    return build_frequency_table(2, 2, 500)


@pytest.fixture(scope="session")
def table32_timed():
    """Exhaustive (3,2) census at budget 1000 and its wall time in seconds."""
    t0 = time.perf_counter()
    table = build_frequency_table(3, 2, 1000)
    return table, time.perf_counter() - t0


@pytest.fixture(scope="session")
def table32(table32_timed):
    return table32_timed[0]


@pytest.fixture(scope="session")
def table32_path(table32, tmp_path_factory):
    path = tmp_path_factory.mktemp("tables") / "ctm_3x2_b1000.tbl"
    persist_table(table32, path)
    return path


_ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` records and asserts one acceptance line."""

    def record(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append((n, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
