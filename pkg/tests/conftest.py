import functools
import warnings

import pytest

from statcom4t4d import scenario

ACCEPTANCE_RESULTS = {}


@functools.lru_cache(maxsize=None)
def golden_run(name):
    """Run a golden scenario once per session."""
    g = scenario.load_golden(name)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scenario.SaturationWarning)
        return g, scenario.run(g.config)


@pytest.fixture(scope="session")
def goldens():
    return golden_run


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
