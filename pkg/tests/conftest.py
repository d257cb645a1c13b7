"""Shared fixtures and the acceptance-summary hook."""

import numpy as np
import pytest

from wbipm.fileio import (
    DEFAULT_GENERATE_CONFIG,
    coefficients_from_config,
    grid_from_config,
    layout_from_config,
)
from wbipm.forward import assemble_fmt_operator


@pytest.fixture(scope="session")
def desk_problem():
    """The default desk-scale operator (16x16x8, 3x3 sources, 8x8 detectors),
    normalized to unit spectral norm; assembled once per session."""
    cfg = dict(DEFAULT_GENERATE_CONFIG)
    grid = grid_from_config(cfg)
    op = assemble_fmt_operator(grid, coefficients_from_config(cfg),
                               layout_from_config(cfg, grid))
    op.matrix /= np.linalg.norm(op.matrix, 2)
    return op, grid


# ---------------------------------------------------------------------------
# one PASS/FAIL line per acceptance criterion at the end of the run

_ACCEPTANCE_RESULTS: dict[str, str] = {}


def record_acceptance(name: str) -> None:
    _ACCEPTANCE_RESULTS.setdefault(name, "PASS")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" and "test_acceptance" in item.nodeid:
        name = item.name.replace("test_", "", 1)
        if report.failed:
            _ACCEPTANCE_RESULTS[name] = "FAIL"
        elif report.passed:
            _ACCEPTANCE_RESULTS.setdefault(name, "PASS")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, status in _ACCEPTANCE_RESULTS.items():
        terminalreporter.write_line(f"ACCEPTANCE {name}: {status}")
