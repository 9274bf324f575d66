import os
from importlib import resources

import numpy as np
import pytest

from drrp import marketdata

DATA = str(resources.files("drrp") / "data")
FIXTURE = os.path.join(DATA, "fixture")


def data_path(*parts):
    return os.path.join(DATA, *parts)


@pytest.fixture(scope="session")
def fixture_panel():
    series = marketdata.load_prices(os.path.join(FIXTURE, "prices.csv"))
    membership = marketdata.load_membership(os.path.join(FIXTURE, "membership.csv"))
    return marketdata.align_panel(series, membership)


@pytest.fixture(scope="session")
def fixture_rf(fixture_panel):
    rf = marketdata.load_risk_free(os.path.join(FIXTURE, "risk_free.csv"))
    return np.asarray(rf.align(fixture_panel.dates), dtype=float)


def write_text(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


def run_cli(*argv):
    from drrp.cli import main

    return main([str(a) for a in argv])


@pytest.fixture(scope="session")
def suite_run(tmp_path_factory):
    """The bundled 25-strategy suite run once with one worker; shared by tests."""
    out = tmp_path_factory.mktemp("suite_jobs1_a")
    code = run_cli("backtest", "--config", data_path("suite.cfg"), "--output-dir", out, "--jobs", 1)
    return code, out


# acceptance criteria results, printed at the end of the session
ACCEPTANCE = {}


def record(number, ok, detail):
    """Store and echo one acceptance line; ``ok`` is True, False or None (skipped)."""
    status = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
    line = f"criterion {number:2d}: {status}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
