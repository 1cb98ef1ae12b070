from pathlib import Path

import pytest

from noisykd.runner import emit_report, load_grid, run_grid

ACCEPTANCE_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "acceptance.ini"

_VERDICTS = []


def record_verdict(line):
    print(line)
    _VERDICTS.append(line)


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance_grid():
    return load_grid(ACCEPTANCE_CONFIG)


@pytest.fixture(scope="session")
def acceptance_run(acceptance_grid, tmp_path_factory):
    """The full acceptance grid, run once per session and emitted to disk."""
    report = run_grid(acceptance_grid)
    out = tmp_path_factory.mktemp("acceptance")
    emit_report(report, out, figures=False)
    return report, out


def pytest_collection_modifyitems(items):
    for item in items:
        if "acceptance_run" in getattr(item, "fixturenames", ()):
            item.add_marker(pytest.mark.slow)
