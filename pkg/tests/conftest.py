import datetime as dt

import numpy as np
import pandas as pd
import pytest

from dayahead.market_data import CHANNELS, MarketSeries, synth_generate


def make_series(n_days, start=dt.date(2015, 1, 1), seed=0, price_B=None):
    """Regular hourly series with random but strictly varying channels."""
    rng = np.random.default_rng(seed)
    n = 24 * n_days
    data = {name: 50 + rng.normal(0, 10, n) for name in CHANNELS[:6]}
    data["holiday_B"] = np.repeat(rng.integers(0, 2, n_days), 24).astype(float)
    data["holiday_F"] = np.repeat(rng.integers(0, 2, n_days), 24).astype(float)
    if price_B is not None:
        data["price_B"] = np.asarray(price_B, dtype=float)
    index = pd.date_range(pd.Timestamp(start), periods=n, freq="h", name="timestamp")
    return MarketSeries(pd.DataFrame(data, index=index)[list(CHANNELS)], "test")


def write_rows(path, stamps, values=None):
    """Write a canonical CSV; ``values`` maps row index to a price_B override."""
    values = values or {}
    lines = ["timestamp," + ",".join(CHANNELS)]
    for i, ts in enumerate(stamps):
        price = values.get(i, 40.0 + i)
        lines.append(f"{ts},{price},{41 + i},{1000 + i},{2000 + i},{300 + i},{400 + i},0,1")
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture(scope="session")
def synth_small():
    return synth_generate(3, 120, 0.9)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
