import numpy as np
import pytest

from mediatcp import solver

# Solves seen across the whole session, and table entries that decreased in n.
MONOTONICITY = {"solves": 0, "violations": 0}


@pytest.fixture(autouse=True)
def _tables_stay_monotone(monkeypatch):
    """Every utility-to-go table built during a test must be nondecreasing in occupancy."""
    original = solver._solve_classes
    bad = []

    def checked(*args, **kwargs):
        res = original(*args, **kwargs)
        n = res.tables.monotonicity_violations()
        MONOTONICITY["solves"] += 1
        MONOTONICITY["violations"] += n
        if n:
            bad.append(n)
        return res

    monkeypatch.setattr(solver, "_solve_classes", checked)
    yield
    assert not bad, f"{sum(bad)} table entries decrease in occupancy"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    tr = terminalreporter
    tr.section("monotonicity")
    tr.write_line(
        f"{MONOTONICITY['solves']} class solves checked, "
        f"{MONOTONICITY['violations']} decreasing table entries"
    )
    if ACCEPTANCE:
        tr.section("acceptance")
        for n in sorted(ACCEPTANCE):
            ok, detail = ACCEPTANCE[n]
            tr.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
