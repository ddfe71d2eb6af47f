import pytest

ACCEPTANCE_NAMES = {
    1: "stability controllability",
    2: "load-level controllability",
    3: "distance sanity",
    4: "downstream improvement",
    5: "normalization oracle",
    6: "gradient oracle",
    7: "simulator oracle",
    8: "metric analytics and determinism",
}
_results: dict[int, tuple[bool, str]] = {}
_collected = []


@pytest.fixture(scope="session")
def acceptance_log():
    """``record(criterion, passed, detail)``; the summary prints one line per criterion."""
    def record(criterion, passed, detail=""):
        _results[criterion] = (bool(passed), detail)
        return bool(passed)
    return record


def pytest_collection_modifyitems(config, items):
    _collected.extend(i for i in items if i.get_closest_marker("acceptance"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _collected:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k, name in ACCEPTANCE_NAMES.items():
        passed, detail = _results.get(k, (False, "not evaluated (test errored or was deselected)"))
        tr.write_line(f"criterion {k} {'PASS' if passed else 'FAIL'}  {name}: {detail}")
