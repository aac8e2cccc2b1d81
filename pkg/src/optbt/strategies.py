"""Rules-based benchmark signals X_t in [-1, 1]."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ConfigError, TooFewStocks
from .indicators import (
    MACD_MIN_INDEX,
    MACD_PAIRS,
    MOMENTUM_MONTHS,
    RETURN_HORIZONS,
    StockStream,
    macd_series,
    phi,
)
from .market_data import StraddleSeries
from .panel import Panel, stream_to_grid

TSMOM_LOOKBACK = 20
_MACD_COLS = slice(len(RETURN_HORIZONS), len(RETURN_HORIZONS) + len(MACD_PAIRS))
_MOM_COL0 = len(RETURN_HORIZONS) + len(MACD_PAIRS)

STRATEGY_NAMES = (
    "long_only", "short_only", "tsmom", "tsmr", "macd", "macdmr",
    *(f"tsheston_mom_{n}" for n in MOMENTUM_MONTHS),
    *(f"tsheston_mr_{n}" for n in MOMENTUM_MONTHS),
    *(f"csheston_mom_{n}" for n in MOMENTUM_MONTHS),
    *(f"csheston_mr_{n}" for n in MOMENTUM_MONTHS),
)


@dataclass(frozen=True)
class SignalSeries:
    underlying: str
    dates: tuple
    values: np.ndarray
    strategy: str


def _tradable_dates(series: StraddleSeries) -> tuple:
    return tuple(series.dates[:-1])


def long_only(series: StraddleSeries) -> SignalSeries:
    dates = _tradable_dates(series)
    return SignalSeries(series.underlying, dates, np.ones(len(dates)), "long_only")


def short_only(series: StraddleSeries) -> SignalSeries:
    dates = _tradable_dates(series)
    return SignalSeries(series.underlying, dates, -np.ones(len(dates)), "short_only")


def tsmom_signal(returns, t: int, mean_revert: bool = False) -> float:
    """Sign of the compounded 20-day return into day t; 0 before 20 days of history."""
    if t < TSMOM_LOOKBACK:
        return 0.0
    r = np.prod(1.0 + np.asarray(returns, dtype=float)[t - TSMOM_LOOKBACK:t]) - 1.0
    x = float(np.sign(r))
    return -x if mean_revert else x


def combine_macd(ys) -> float:
    return float(np.mean([phi(y) for y in ys]))


def macd_strategy_signal(prices, t: int, mean_revert: bool = False) -> float:
    """Equal-weight phi(Y) over the three (S, L) pairs; 0 during cold start."""
    if t < MACD_MIN_INDEX:
        return 0.0
    p = np.asarray(prices, dtype=float)[: t + 1]
    x = combine_macd([macd_series(p, s, l).signal[t] for s, l in MACD_PAIRS])
    return -x if mean_revert else x


def ts_heston_signal(feature: float, mask: bool, mean_revert: bool = False) -> float:
    """Position held from formation to expiry."""
    if not mask:
        return 0.0
    x = float(np.sign(feature))
    return -x if mean_revert else x


def cs_heston_signal(scores: Mapping[str, tuple[float, bool]], mean_revert: bool = False) -> dict:
    """High-minus-low decile positions from formation-day momentum scores.

    ``scores`` maps underlying -> (score, mask). Stocks are ranked ascending
    by (score, underlying); the last ``max(1, N // 10)`` go long and the first
    as many go short.
    """
    valid = sorted((s, u) for u, (s, m) in scores.items() if m)
    if len(valid) < 2:
        raise TooFewStocks(f"need >= 2 stocks with valid scores, got {len(valid)}")
    decile = max(1, len(valid) // 10)
    out = {u: 0.0 for u in scores}
    sign = -1.0 if mean_revert else 1.0
    for _, u in valid[:decile]:
        out[u] = -sign
    for _, u in valid[-decile:]:
        out[u] = sign
    return out


# ---------------------------------------------------------------------------
# panel-level positions

def _tsmom_stream(s: StockStream) -> np.ndarray:
    x = np.zeros(len(s))
    t = np.arange(TSMOM_LOOKBACK, len(s))
    x[t] = np.sign(s.price_index[t] / s.price_index[t - TSMOM_LOOKBACK] - 1.0)
    return x


def _macd_stream(s: StockStream) -> np.ndarray:
    return phi(s.features[:, _MACD_COLS]).mean(axis=1)


def _ts_heston_stream(s: StockStream, n: int) -> np.ndarray:
    c = MOMENTUM_MONTHS.index(n)
    return np.sign(s.features[:, _MOM_COL0 + c]) * s.masks[:, c]


def _cs_heston_grid(panel: Panel, n: int) -> np.ndarray:
    c = MOMENTUM_MONTHS.index(n)
    cohorts = defaultdict(dict)   # formation date -> {underlying: (score, mask, stream idx, k)}
    for i, s in enumerate(panel.streams):
        for k, st in enumerate(s.straddles):
            day = int(np.flatnonzero(s.straddle_pos == k)[0])
            cohorts[st.formation_date][s.underlying] = (
                s.features[day, _MOM_COL0 + c], bool(s.masks[day, c]), i, k)
    per_stream = [np.zeros(len(s)) for s in panel.streams]
    for members in cohorts.values():
        try:
            pos = cs_heston_signal({u: (v[0], v[1]) for u, v in members.items()})
        except TooFewStocks:
            continue
        for u, x in pos.items():
            _, _, i, k = members[u]
            per_stream[i][panel.streams[i].straddle_pos == k] = x
    return stream_to_grid(panel, per_stream)


def strategy_positions(panel: Panel, name: str) -> np.ndarray:
    """(T, N) positions for a named benchmark; 0 on inactive cells."""
    if name not in STRATEGY_NAMES:
        raise ConfigError(f"unknown strategy {name!r}; valid: {', '.join(STRATEGY_NAMES)}")
    if name in ("long_only", "short_only"):
        x = panel.active.astype(float)
        return x if name == "long_only" else -x
    if name in ("tsmom", "tsmr"):
        x = stream_to_grid(panel, [_tsmom_stream(s) for s in panel.streams])
        return x if name == "tsmom" else -x
    if name in ("macd", "macdmr"):
        x = stream_to_grid(panel, [_macd_stream(s) for s in panel.streams])
        return x if name == "macd" else -x
    family, kind, n = name.rsplit("_", 2)
    n = int(n)
    if family == "tsheston":
        x = stream_to_grid(panel, [_ts_heston_stream(s, n) for s in panel.streams])
    else:
        x = _cs_heston_grid(panel, n)
    return x if kind == "mom" else -x
