from datetime import date

import numpy as np
import pytest

from optbt.market_data import OptionQuote
from optbt.panel import build_panel
from optbt.synth import SynthSpec, generate_straddle_panel


def quote(opt_type="C", strike=100.0, bid=1.0, ask=1.2, delta=None, oi=10, std=True,
          day=date(2020, 1, 17), expiry=date(2020, 2, 21), underlying="AAA"):
    if delta is None:
        delta = 0.5 if opt_type == "C" else -0.5
    return OptionQuote(day, underlying, opt_type, strike, expiry, bid, ask, delta, oi, std)


@pytest.fixture(scope="session")
def small_panel():
    spec = SynthSpec(n_stocks=4, n_months=14, ar1_rho=-0.2, seed=3)
    return build_panel(generate_straddle_panel(spec))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
