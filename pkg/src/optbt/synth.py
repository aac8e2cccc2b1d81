"""Synthetic straddle panels and option chains with AR(1) straddle returns."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date
from pathlib import Path

import numpy as np

from .market_data import (
    OptionQuote,
    StockPrice,
    StraddleDefinition,
    StraddleSeries,
    delta_neutral_weights,
    make_series,
    next_month_expiry,
    third_friday,
    weekdays,
    write_options_csv,
    write_stocks_csv,
)

STOCK_DAILY_VOL = 0.005
STOCK_START = 100.0


@dataclass(frozen=True)
class SynthSpec:
    n_stocks: int = 20
    n_months: int = 119
    ar1_rho: float = 0.0
    daily_vol: float = 0.04
    seed: int = 0
    strike_grid_spacing: float = 1.0
    start_year: int = 2010
    start_month: int = 1
    half_spread: float = 0.01
    call_delta: float = 0.5   # 0.6 for the skewed-delta mode

    def __post_init__(self):
        if not abs(self.ar1_rho) < 1:
            raise ValueError("ar1_rho must lie in (-1, 1)")
        if not self.daily_vol > 0:
            raise ValueError("daily_vol must be positive")
        if not self.half_spread > 0:
            raise ValueError("half_spread must be positive so that ask > bid")
        if self.n_stocks < 1 or self.n_months < 1:
            raise ValueError("need at least one stock and one month")

    @property
    def put_delta(self) -> float:
        return self.call_delta - 1.0


def ar1_returns(rng, n: int, rho: float, daily_vol: float) -> np.ndarray:
    """Stationary AR(1) with unconditional std ``daily_vol``."""
    eps = rng.normal(0.0, daily_vol * np.sqrt(1.0 - rho * rho), n)
    r = np.empty(n)
    r[0] = rng.normal(0.0, daily_vol)
    for t in range(1, n):
        r[t] = rho * r[t - 1] + eps[t]
    return r


def _formation_dates(spec: SynthSpec) -> list[date]:
    f = third_friday(spec.start_year, spec.start_month)
    out = [f]
    for _ in range(spec.n_months):
        f = next_month_expiry(f)
        out.append(f)
    return out  # n_months formations plus the final expiry


def _atm_strike(spot: float, spacing: float) -> float:
    lo = np.floor(spot / spacing) * spacing
    hi = lo + spacing
    return min((abs(spot / k - 1.0), k) for k in (lo, hi) if k > 0)[1]


@dataclass(frozen=True)
class _StockPath:
    underlying: str
    days: list
    spot: np.ndarray
    returns: np.ndarray   # r_{t,t+1}


def _stock_paths(spec: SynthSpec):
    fdates = _formation_dates(spec)
    days = weekdays(fdates[0], fdates[-1])
    children = np.random.SeedSequence(spec.seed).spawn(spec.n_stocks)
    width = max(2, len(str(spec.n_stocks - 1)))
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        r = ar1_returns(rng, len(days) - 1, spec.ar1_rho, spec.daily_vol)
        spot = STOCK_START * np.exp(np.concatenate(
            [[0.0], np.cumsum(rng.normal(0.0, STOCK_DAILY_VOL, len(days) - 1))]))
        yield _StockPath(f"S{i:0{width}d}", days, spot, np.append(r, np.nan)), fdates


def _legs(defn: StraddleDefinition, price, spot, scale):
    """Leg midpoints with w_c*call + w_p*put = scale*price and call - put = S - K."""
    gap = spot - defn.strike
    call = scale * price + defn.w_put_norm * gap
    put = scale * price - defn.w_call_norm * gap
    return call, put


def _straddles(spec: SynthSpec, path: _StockPath, fdates):
    day_index = {d: k for k, d in enumerate(path.days)}
    w_call, w_put = delta_neutral_weights(spec.call_delta, spec.put_delta)
    for f, e in zip(fdates[:-1], fdates[1:]):
        a, b = day_index[f], day_index[e]
        rets = path.returns[a:b]
        price = np.concatenate([[1.0], np.cumprod(1.0 + rets)])
        spot = path.spot[a:b + 1]
        strike = _atm_strike(spot[0], spec.strike_grid_spacing)
        defn = StraddleDefinition(path.underlying, f, e, strike, w_call, w_put,
                                  spec.call_delta, spec.put_delta)
        # premium scale: keeps both legs above intrinsic value plus a margin
        need = (max(w_call, w_put) * np.abs(spot - strike) + 0.02 * spot[0]
                + 4 * spec.half_spread) / price
        scale = max(0.08 * spot[0], float(need.max()))
        yield defn, path.days[a:b + 1], price, spot, scale


def generate_straddle_panel(spec: SynthSpec) -> list[StraddleSeries]:
    """Straddles whose prices start at 1.0 and compound AR(1) daily returns.

    Returns follow one continuous AR(1) process per stock, so consecutive
    monthly straddles of a stock are serially linked.
    """
    out = []
    for path, fdates in _stock_paths(spec):
        for defn, days, price, spot, scale in _straddles(spec, path, fdates):
            call, put = _legs(defn, price, spot, scale)
            out.append(make_series(defn, days, call / scale, put / scale, spot))
    return out


def generate_quotes(spec: SynthSpec) -> tuple[list[OptionQuote], list[StockPrice]]:
    quotes, stocks = [], []
    h = spec.half_spread
    for path, fdates in _stock_paths(spec):
        stocks.extend(StockPrice(d, path.underlying, float(s)) for d, s in zip(path.days, path.spot))
        for defn, days, price, spot, scale in _straddles(spec, path, fdates):
            call, put = _legs(defn, price, spot, scale)
            for d, c, p in zip(days, call, put):
                quotes.append(OptionQuote(d, defn.underlying, "C", defn.strike, defn.expiry,
                                          c - h, c + h, defn.delta0_call, 100, True))
                quotes.append(OptionQuote(d, defn.underlying, "P", defn.strike, defn.expiry,
                                          p - h, p + h, defn.delta0_put, 100, True))
            # farther strikes on formation day so strike selection has a choice to make
            s0 = spot[0]
            for k in (defn.strike - 2 * spec.strike_grid_spacing,
                      defn.strike + 2 * spec.strike_grid_spacing):
                c = max(0.0, s0 - k) + 0.05 * s0
                p = max(0.0, k - s0) + 0.05 * s0
                quotes.append(OptionQuote(days[0], defn.underlying, "C", k, defn.expiry,
                                          c - h, c + h, spec.call_delta, 50, True))
                quotes.append(OptionQuote(days[0], defn.underlying, "P", k, defn.expiry,
                                          p - h, p + h, spec.put_delta, 50, True))
    return quotes, stocks


def generate_option_chain_csv(spec: SynthSpec, out_dir) -> tuple[Path, Path]:
    """Write ``options.csv`` and ``stocks.csv`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    quotes, stocks = generate_quotes(spec)
    opt, stk = out_dir / "options.csv", out_dir / "stocks.csv"
    write_options_csv(opt, quotes)
    write_stocks_csv(stk, stocks)
    return opt, stk
