from dataclasses import replace

import pytest

from dmuso.model import SliceConfig, table1_scenario


@pytest.fixture(scope="session")
def table1():
    return table1_scenario()


def small_scenario(r_max=20.0, ue_count=40, m=2, f_u=2, bp=4e6, **opt):
    """One-slice scenario small enough for per-test simulation."""
    base = table1_scenario()
    sl = SliceConfig("T", bp, r_max, ue_count, initial_categories=m, services_per_category=f_u)
    cfg = replace(base, slices=(sl,))
    if opt:
        cfg = replace(cfg, optimizer=replace(cfg.optimizer, **opt))
    return cfg


ACCEPTANCE_LINES = []


def record_criterion(number, name, passed, detail=""):
    """Log one acceptance verdict; the lines are repeated in the terminal summary."""
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}: {name}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
