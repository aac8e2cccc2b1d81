"""Option-chain ingestion, data filters and straddle formation.

Straddles are formed on each monthly expiry day (third Friday) from the call/put
pair closest to at-the-money that expires on the following month's third
Friday. Leg weights are fixed at formation so that the initial position is
delta neutral, and the straddle is priced daily at leg midpoints until expiry.
"""

from __future__ import annotations

import calendar
import csv
import logging
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateDeltas,
    DuplicateKey,
    GapInSeries,
    MissingLeg,
    MissingStockPrice,
    NoEligibleStrike,
    NonPositivePrice,
    ParseError,
)

log = logging.getLogger(__name__)

OPTION_COLUMNS = (
    "date", "underlying", "type", "strike", "expiry", "bid", "ask", "delta",
    "open_interest", "standard_settlement",
)
STOCK_COLUMNS = ("date", "underlying", "close")

MONEYNESS_LOW = 0.95
MONEYNESS_HIGH = 1.05
DAYS_PER_YEAR = 365.0


@dataclass(frozen=True)
class OptionQuote:
    date: date
    underlying: str
    option_type: str  # "C" or "P"
    strike: float
    expiry: date
    bid: float
    ask: float
    delta: float
    open_interest: int
    settlement_standard: bool

    @property
    def mid(self) -> float:
        return 0.5 * (self.bid + self.ask)

    @property
    def is_call(self) -> bool:
        return self.option_type == "C"


@dataclass(frozen=True)
class StockPrice:
    date: date
    underlying: str
    close: float


@dataclass(frozen=True)
class StraddleDefinition:
    underlying: str
    formation_date: date
    expiry: date
    strike: float
    w_call_norm: float
    w_put_norm: float
    delta0_call: float
    delta0_put: float

    @property
    def initial_delta(self) -> float:
        return self.w_call_norm * self.delta0_call + self.w_put_norm * self.delta0_put


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class StraddleSeries:
    """A formed straddle and its daily track from formation to expiry.

    ``returns[t]`` is the simple return from day ``t`` to day ``t + 1``; the
    final entry (expiry day) is NaN.
    """

    definition: StraddleDefinition
    dates: tuple
    call_mid: np.ndarray
    put_mid: np.ndarray
    price: np.ndarray
    returns: np.ndarray = field(repr=False)
    log_moneyness_call: np.ndarray = field(repr=False)
    log_moneyness_put: np.ndarray = field(repr=False)
    dte_years: np.ndarray = field(repr=False)

    @property
    def underlying(self) -> str:
        return self.definition.underlying

    @property
    def formation_date(self) -> date:
        return self.definition.formation_date

    @property
    def expiry(self) -> date:
        return self.definition.expiry

    @property
    def hold_return(self) -> float:
        """Formation-to-expiry return."""
        return float(self.price[-1] / self.price[0] - 1.0)

    def __len__(self) -> int:
        return len(self.dates)


def make_series(defn: StraddleDefinition, dates: Sequence[date], call_mid, put_mid,
                stock_close) -> StraddleSeries:
    """Assemble a StraddleSeries from aligned leg midpoints and stock closes."""
    call_mid = np.asarray(call_mid, dtype=float)
    put_mid = np.asarray(put_mid, dtype=float)
    stock_close = np.asarray(stock_close, dtype=float)
    price = defn.w_call_norm * call_mid + defn.w_put_norm * put_mid
    if np.any(~(price > 0)):
        bad = dates[int(np.argmax(~(price > 0)))]
        raise NonPositivePrice(
            f"{defn.underlying} {defn.formation_date}: straddle price <= 0 on {bad}")
    returns = np.full(len(price), np.nan)
    returns[:-1] = price[1:] / price[:-1] - 1.0
    dte = np.array([(defn.expiry - d).days for d in dates], dtype=float) / DAYS_PER_YEAR
    return StraddleSeries(
        definition=defn,
        dates=tuple(dates),
        call_mid=_frozen(call_mid),
        put_mid=_frozen(put_mid),
        price=_frozen(price),
        returns=_frozen(returns),
        log_moneyness_call=_frozen(np.log(stock_close / defn.strike)),
        log_moneyness_put=_frozen(np.log(defn.strike / stock_close)),
        dte_years=_frozen(dte),
    )


# ---------------------------------------------------------------------------
# calendar helpers

def third_friday(year: int, month: int) -> date:
    first_weekday, _ = calendar.monthrange(year, month)
    # calendar.FRIDAY == 4
    offset = (calendar.FRIDAY - first_weekday) % 7
    return date(year, month, 1 + offset + 14)


def is_third_friday(d: date) -> bool:
    return d == third_friday(d.year, d.month)


def next_month_expiry(d: date) -> date:
    year, month = (d.year + 1, 1) if d.month == 12 else (d.year, d.month + 1)
    return third_friday(year, month)


def weekdays(start: date, end: date) -> list[date]:
    """Mon-Fri dates in [start, end]."""
    days = np.arange(np.datetime64(start, "D"), np.datetime64(end, "D") + 1)
    days = days[np.is_busday(days)]
    return [d.item() for d in days]


# ---------------------------------------------------------------------------
# ingestion

_ISO_DATE = re.compile(r"^\d{4}-\d{2}-\d{2}$")


def _parse_date(path, row, col, text):
    if not _ISO_DATE.match(text):
        raise ParseError(path, row, col, f"expected YYYY-MM-DD, got {text!r}")
    try:
        return date.fromisoformat(text)
    except ValueError as exc:
        raise ParseError(path, row, col, str(exc)) from None


def _parse_float(path, row, col, text):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(path, row, col, f"not a number: {text!r}") from None
    if not math.isfinite(value):
        raise ParseError(path, row, col, f"non-finite value {text!r}")
    return value


def _read_rows(path: Path, columns: tuple):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "", "empty file, header required") from None
        if tuple(h.strip() for h in header) != columns:
            raise ParseError(path, 1, "", f"header must be {','.join(columns)}")
        for lineno, raw in enumerate(reader, start=2):
            if not raw:
                continue
            if len(raw) != len(columns):
                raise ParseError(path, lineno, "",
                                 f"expected {len(columns)} fields, got {len(raw)}")
            yield lineno, dict(zip(columns, (x.strip() for x in raw)))


def read_options_csv(path) -> list[OptionQuote]:
    path = Path(path)
    quotes, seen = [], set()
    for row, rec in _read_rows(path, OPTION_COLUMNS):
        d = _parse_date(path, row, "date", rec["date"])
        expiry = _parse_date(path, row, "expiry", rec["expiry"])
        underlying = rec["underlying"]
        if not underlying:
            raise ParseError(path, row, "underlying", "empty identifier")
        kind = rec["type"]
        if kind not in ("C", "P"):
            raise ParseError(path, row, "type", f"expected C or P, got {kind!r}")
        strike = _parse_float(path, row, "strike", rec["strike"])
        if strike <= 0:
            raise ParseError(path, row, "strike", "strike must be positive")
        bid = _parse_float(path, row, "bid", rec["bid"])
        if bid < 0:
            raise ParseError(path, row, "bid", "bid must be >= 0")
        ask = _parse_float(path, row, "ask", rec["ask"])
        delta = _parse_float(path, row, "delta", rec["delta"])
        lo, hi = (0.0, 1.0) if kind == "C" else (-1.0, 0.0)
        if not lo <= delta <= hi:
            raise ParseError(path, row, "delta", f"{delta} outside [{lo}, {hi}]")
        oi_text = rec["open_interest"]
        if not oi_text.isdigit():
            raise ParseError(path, row, "open_interest",
                             f"expected a non-negative integer, got {oi_text!r}")
        flag = rec["standard_settlement"]
        if flag not in ("0", "1"):
            raise ParseError(path, row, "standard_settlement",
                             f"expected 0 or 1, got {flag!r}")
        key = (d, underlying, kind, strike, expiry)
        if key in seen:
            raise DuplicateKey(f"{path}: row {row}: duplicate quote {key}")
        seen.add(key)
        quotes.append(OptionQuote(d, underlying, kind, strike, expiry, bid, ask,
                                  delta, int(oi_text), flag == "1"))
    return quotes


def read_stocks_csv(path) -> list[StockPrice]:
    path = Path(path)
    prices, seen = [], set()
    for row, rec in _read_rows(path, STOCK_COLUMNS):
        d = _parse_date(path, row, "date", rec["date"])
        underlying = rec["underlying"]
        if not underlying:
            raise ParseError(path, row, "underlying", "empty identifier")
        close = _parse_float(path, row, "close", rec["close"])
        if close <= 0:
            raise ParseError(path, row, "close", "close must be positive")
        if (d, underlying) in seen:
            raise DuplicateKey(f"{path}: row {row}: duplicate close for {underlying} on {d}")
        seen.add((d, underlying))
        prices.append(StockPrice(d, underlying, close))
    return prices


def ingest_csv(options_path, stocks_path) -> tuple[list[OptionQuote], list[StockPrice]]:
    """Parse ``options.csv`` and ``stocks.csv``. No filtering happens here."""
    return read_options_csv(options_path), read_stocks_csv(stocks_path)


def write_options_csv(path, quotes: Iterable[OptionQuote]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OPTION_COLUMNS)
        for q in quotes:
            w.writerow([q.date.isoformat(), q.underlying, q.option_type, repr(float(q.strike)),
                        q.expiry.isoformat(), repr(float(q.bid)), repr(float(q.ask)), repr(float(q.delta)),
                        q.open_interest, int(q.settlement_standard)])


def write_stocks_csv(path, prices: Iterable[StockPrice]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STOCK_COLUMNS)
        for p in prices:
            w.writerow([p.date.isoformat(), p.underlying, repr(float(p.close))])


# ---------------------------------------------------------------------------
# filters and formation

def _close_lookup(stocks: Iterable[StockPrice]) -> dict:
    return {(s.date, s.underlying): s.close for s in stocks}


def within_american_bounds(q: OptionQuote, spot: float) -> bool:
    mid = q.mid
    if q.is_call:
        return max(0.0, spot - q.strike) <= mid <= spot
    return max(0.0, q.strike - spot) <= mid <= q.strike


def apply_filters(quotes: Iterable[OptionQuote], stocks: Iterable[StockPrice]) -> list[OptionQuote]:
    """Drop quotes that fail the liquidity, settlement, expiry and bound checks.

    Open interest is not checked here; it only matters on formation day.
    """
    closes = stocks if isinstance(stocks, dict) else _close_lookup(stocks)
    kept = []
    for q in quotes:
        try:
            spot = closes[(q.date, q.underlying)]
        except KeyError:
            raise MissingStockPrice(f"no close for {q.underlying} on {q.date}") from None
        if (q.bid > 0 and q.ask > q.bid and q.settlement_standard
                and is_third_friday(q.expiry) and within_american_bounds(q, spot)):
            kept.append(q)
    return kept


def select_atm_pair(chain: Iterable[OptionQuote], spot: float) -> tuple[OptionQuote, OptionQuote]:
    """Pick the call/put pair at the shared strike closest to the money.

    Both legs must have moneyness in [0.95, 1.05] (S/K for the call, K/S for
    the put) and positive open interest. Ties go to the lower strike.
    """
    by_strike: dict[float, dict[str, OptionQuote]] = defaultdict(dict)
    for q in chain:
        by_strike[q.strike][q.option_type] = q
    candidates = []
    for strike, legs in by_strike.items():
        if not (MONEYNESS_LOW <= spot / strike <= MONEYNESS_HIGH
                and MONEYNESS_LOW <= strike / spot <= MONEYNESS_HIGH):
            continue
        if any(q.open_interest <= 0 for q in legs.values()):
            continue
        candidates.append((abs(spot / strike - 1.0), strike))
    if not candidates:
        raise NoEligibleStrike(f"no strike within moneyness bounds for S={spot}")
    _, best = min(candidates)
    legs = by_strike[best]
    if "C" not in legs or "P" not in legs:
        side = "put" if "C" in legs else "call"
        raise MissingLeg(f"strike {best} has no {side}")
    return legs["C"], legs["P"]


def delta_neutral_weights(delta0_call: float, delta0_put: float) -> tuple[float, float]:
    """Normalized call/put weights that zero the initial straddle delta."""
    if not (0.0 < delta0_call <= 1.0 and -1.0 <= delta0_put < 0.0):
        raise DegenerateDeltas(
            f"need call delta in (0, 1] and put delta in [-1, 0), got "
            f"{delta0_call}, {delta0_put}")
    w_call, w_put = -delta0_put, delta0_call
    denom = w_call + w_put
    if denom <= 0:
        raise DegenerateDeltas(f"weight denominator {denom} <= 0")
    w_call_norm = w_call / denom
    return w_call_norm, 1.0 - w_call_norm


def define_straddle(call: OptionQuote, put: OptionQuote) -> StraddleDefinition:
    w_call, w_put = delta_neutral_weights(call.delta, put.delta)
    return StraddleDefinition(call.underlying, call.date, call.expiry, call.strike,
                              w_call, w_put, call.delta, put.delta)


def _trading_days(stocks) -> list[date]:
    return sorted({s.date for s in stocks})


def build_straddle_series(defn: StraddleDefinition, quotes, stocks,
                          trading_days: Sequence[date] | None = None) -> StraddleSeries:
    """Price the straddle on every trading day from formation to expiry.

    The trading calendar is the set of dates present in the stock file. Any
    day without a quote for either leg raises ``GapInSeries``.
    """
    closes = stocks if isinstance(stocks, dict) else _close_lookup(stocks)
    if trading_days is None:
        trading_days = sorted({d for d, _ in closes})
    if isinstance(quotes, dict):
        index = quotes
    else:
        index = {}
        for q in quotes:
            if q.underlying == defn.underlying and q.strike == defn.strike \
                    and q.expiry == defn.expiry:
                index[(q.date, q.option_type)] = q
    lo = np.searchsorted(np.array(trading_days, dtype="datetime64[D]"),
                         np.datetime64(defn.formation_date, "D"))
    days = [d for d in trading_days[lo:] if d <= defn.expiry]
    if not days or days[0] != defn.formation_date or days[-1] != defn.expiry:
        raise GapInSeries(f"{defn.underlying} {defn.formation_date}: formation or expiry "
                          "is not a trading day")
    call_mid, put_mid, spot = [], [], []
    for d in days:
        c = index.get((d, "C"))
        p = index.get((d, "P"))
        if c is None or p is None:
            raise GapInSeries(f"{defn.underlying} K={defn.strike} exp={defn.expiry}: "
                              f"missing {'call' if c is None else 'put'} on {d}")
        s = closes.get((d, defn.underlying))
        if s is None:
            raise MissingStockPrice(f"no close for {defn.underlying} on {d}")
        call_mid.append(c.mid)
        put_mid.append(p.mid)
        spot.append(s)
    return make_series(defn, days, call_mid, put_mid, spot)


def form_straddles(quotes: Iterable[OptionQuote], stocks: Iterable[StockPrice]) -> list[StraddleSeries]:
    """Filter the chain and form one straddle per (underlying, monthly expiry).

    Months where no straddle can be formed, or where the formed straddle has a
    gap, are skipped and logged.
    """
    stocks = list(stocks)
    closes = _close_lookup(stocks)
    days = _trading_days(stocks)
    filtered = apply_filters(quotes, closes)

    chains = defaultdict(list)          # (underlying, date, expiry) -> quotes
    contracts = defaultdict(dict)       # (underlying, strike, expiry) -> {(date, type): q}
    for q in filtered:
        chains[(q.underlying, q.date, q.expiry)].append(q)
        contracts[(q.underlying, q.strike, q.expiry)][(q.date, q.option_type)] = q

    underlyings = sorted({q.underlying for q in filtered})
    formation_days = [d for d in days if is_third_friday(d)]
    out = []
    for u in underlyings:
        for f in formation_days:
            expiry = next_month_expiry(f)
            chain = chains.get((u, f, expiry))
            spot = closes.get((f, u))
            if not chain or spot is None:
                continue
            try:
                call, put = select_atm_pair(chain, spot)
                defn = define_straddle(call, put)
                series = build_straddle_series(
                    defn, contracts[(u, defn.strike, expiry)], closes, days)
            except (NoEligibleStrike, MissingLeg, DegenerateDeltas, GapInSeries,
                    NonPositivePrice) as exc:
                log.info("skipping %s formed %s: %s", u, f, exc)
                continue
            out.append(series)
    return out
