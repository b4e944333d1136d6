import numpy as np
import pytest

_acceptance = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_runtest_makereport(item, call):
    if call.when == "call" and item.module.__name__.endswith("test_acceptance"):
        doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
        _acceptance.append((doc, call.excinfo is None, call.duration))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for doc, ok, duration in _acceptance:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {doc}  ({duration:.1f}s)")
