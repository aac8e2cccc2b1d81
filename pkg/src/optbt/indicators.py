"""Volatility estimates, trend indicators and the per-day feature vector.

All indicators for a stock are computed on its *stream*: the chain of its
monthly straddles laid end to end, so that day ``t`` of a new straddle can see
the returns of the straddle it replaced. ``returns[t]`` always denotes the
return from day ``t`` to day ``t + 1``; quantities "at day t" only use
``returns[:t]``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from datetime import date
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import lfilter

from .errors import InsufficientHistory
from .market_data import StraddleSeries

TRADING_DAYS = 252
VOL_SPAN = 20
SIGMA_FLOOR_DAILY = 0.05 / np.sqrt(TRADING_DAYS)

RETURN_HORIZONS = (1, 5, 10, 15, 20)
MACD_PAIRS = ((2, 8), (4, 16), (8, 32))
MOMENTUM_MONTHS = (1, 3, 6, 12)
PRICE_STD_WINDOW = 6       # p[t-5 : t] inclusive
SIGNAL_STD_WINDOW = 21     # macd_norm[t-20 : t] inclusive
MACD_MIN_INDEX = PRICE_STD_WINDOW + SIGNAL_STD_WINDOW - 2  # 25: first t with a full Y

FEATURE_NAMES = (
    *(f"norm_ret_{k}d" for k in RETURN_HORIZONS),
    *(f"macd_{s}_{l}" for s, l in MACD_PAIRS),
    *(f"option_mom_{n}m" for n in MOMENTUM_MONTHS),
    "log_moneyness_call",
    "log_moneyness_put",
    "dte_years",
)
N_FEATURES = len(FEATURE_NAMES)
FEATURE_FINGERPRINT = hashlib.sha256(",".join(FEATURE_NAMES).encode()).hexdigest()[:16]

_REL_TOL = 1e-10


@dataclass(frozen=True)
class VolEstimate:
    sigma_daily: np.ndarray
    dates: tuple | None = None

    @property
    def sigma_ann(self) -> np.ndarray:
        return self.sigma_daily * np.sqrt(TRADING_DAYS)

    def __len__(self):
        return len(self.sigma_daily)


def ewm_volatility(returns, span: int = VOL_SPAN, floor: float = SIGMA_FLOOR_DAILY,
                   dates=None) -> VolEstimate:
    """Exponentially weighted standard deviation of daily returns.

    Entry ``j`` uses ``returns[: j + 1]``. The recursion is seeded with the
    first observation (mean = r0, variance = 0) and every estimate is floored.
    """
    r = np.asarray(returns, dtype=float)
    if r.size == 0:
        raise ValueError("ewm_volatility needs at least one return")
    alpha = 2.0 / (span + 1.0)
    out = np.empty_like(r)
    mean, var = r[0], 0.0
    out[0] = 0.0
    for j in range(1, r.size):
        diff = r[j] - mean
        mean += alpha * diff
        var = (1.0 - alpha) * (var + alpha * diff * diff)
        out[j] = var
    sigma = np.maximum(np.sqrt(out), floor)
    return VolEstimate(sigma, None if dates is None else tuple(dates))


def compound(returns) -> float:
    return float(np.prod(1.0 + np.asarray(returns, dtype=float)) - 1.0)


def normalized_return(returns, t: int, k: int, sigma_daily: float) -> float:
    """k-day compounded return into day t, scaled by sigma_daily * sqrt(k)."""
    if t < k:
        raise InsufficientHistory(f"need {k} returns before day {t}")
    r = compound(np.asarray(returns, dtype=float)[t - k:t])
    return r / (sigma_daily * np.sqrt(k))


def half_life(j: float) -> float:
    return float(np.log(0.5) / np.log(1.0 - 1.0 / j))


def ewm_mean(x, j: float) -> np.ndarray:
    """EWM average with decay (1 - 1/j), seeded at x[0]."""
    x = np.asarray(x, dtype=float)
    a = 1.0 / j
    y, _ = lfilter([a], [1.0, a - 1.0], x, zi=[(1.0 - a) * x[0]])
    return y


def _trailing_std(x: np.ndarray, window: int):
    """Population std over trailing windows; NaN where history is short.

    Also returns a flag for windows whose spread is numerically zero.
    """
    std = np.full(x.shape, np.nan)
    degenerate = np.zeros(x.shape, dtype=bool)
    if x.size >= window:
        win = sliding_window_view(x, window)
        s = win.std(axis=1)
        scale = np.abs(win).mean(axis=1)
        std[window - 1:] = s
        degenerate[window - 1:] = s <= _REL_TOL * scale
    return std, degenerate


@dataclass(frozen=True)
class MacdSeries:
    macd: np.ndarray
    macd_norm: np.ndarray
    signal: np.ndarray       # Y_t; 0 where undefined or degenerate
    valid: np.ndarray        # enough history for Y_t
    degenerate: np.ndarray   # a trailing std was zero


def macd_series(prices, short: int, long: int) -> MacdSeries:
    """Volatility-normalised MACD for every day of a price path."""
    p = np.asarray(prices, dtype=float)
    macd = ewm_mean(p, short) - ewm_mean(p, long)
    pstd, pdeg = _trailing_std(p, PRICE_STD_WINDOW)
    have_norm = ~np.isnan(pstd)
    ok = have_norm & ~pdeg
    norm = np.zeros_like(p)
    norm[ok] = macd[ok] / pstd[ok]
    nstd = np.full(p.shape, np.nan)
    ndeg = np.zeros(p.shape, dtype=bool)
    first = PRICE_STD_WINDOW - 1
    if p.size > first:
        s, d = _trailing_std(norm[first:], SIGNAL_STD_WINDOW)
        nstd[first:], ndeg[first:] = s, d
    valid = ~np.isnan(nstd)
    degenerate = valid & (ndeg | pdeg)
    good = valid & ~degenerate
    y = np.zeros_like(p)
    y[good] = norm[good] / nstd[good]
    return MacdSeries(macd, norm, y, valid, degenerate)


def macd_components(prices, t: int, short: int, long: int):
    """Return ``(macd, macd_norm, Y, degenerate)`` at day t from prices[: t + 1]."""
    if t < MACD_MIN_INDEX:
        raise InsufficientHistory(f"MACD signal needs {MACD_MIN_INDEX + 1} prices, day {t}")
    s = macd_series(np.asarray(prices, dtype=float)[: t + 1], short, long)
    return float(s.macd[t]), float(s.macd_norm[t]), float(s.signal[t]), bool(s.degenerate[t])


def phi(y):
    """MACD response function; odd, maximal at y = sqrt(2)."""
    y = np.asarray(y, dtype=float)
    out = y * np.exp(-y * y / 4.0) / 0.89
    return float(out) if out.ndim == 0 else out


def option_momentum_feature(history, formation_date: date | None, n: int) -> tuple[float, bool]:
    """Mean of the last ``n`` completed monthly straddle returns.

    ``history`` holds ``(expiry_date, hold_return)`` pairs; a straddle counts as
    completed when it expired on or before ``formation_date``. A plain list of
    returns is taken as already-completed chronological history. Returns
    ``(value, mask)``; with fewer than ``n`` months the value is 0 and the mask
    is False.
    """
    if formation_date is None:
        rets = [float(r) for r in history]
    else:
        done = sorted((d, r) for d, r in history if d <= formation_date)
        rets = [r for _, r in done]
    if len(rets) < n:
        return 0.0, False
    return float(np.mean(rets[-n:])), True


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray   # (15,) in FEATURE_NAMES order
    mask: np.ndarray     # (4,) momentum validity

    def as_dict(self) -> dict:
        return dict(zip(FEATURE_NAMES, self.values.tolist()))


@dataclass(frozen=True)
class StockStream:
    """One stock's chained straddle history with per-day indicators."""

    underlying: str
    straddles: tuple            # StraddleSeries in formation order
    dates: np.ndarray           # datetime64[D], tradable days only
    returns: np.ndarray         # r_{t,t+1}
    price_index: np.ndarray     # chained price, 1.0 on the first day
    sigma_daily: np.ndarray     # estimate available at day t
    straddle_pos: np.ndarray    # index into ``straddles``
    first_day: np.ndarray       # formation day of a straddle
    last_day: np.ndarray        # last tradable day before expiry
    features: np.ndarray        # (n, 15)
    masks: np.ndarray           # (n, 4)

    def __len__(self):
        return len(self.returns)

    @property
    def sigma_ann(self) -> np.ndarray:
        return self.sigma_daily * np.sqrt(TRADING_DAYS)


def _chain(straddles: Sequence[StraddleSeries]):
    straddles = sorted(straddles, key=lambda s: s.formation_date)
    for a, b in zip(straddles, straddles[1:]):
        if b.formation_date < a.expiry:
            raise ValueError(f"{a.underlying}: straddles {a.formation_date} and "
                             f"{b.formation_date} overlap")
    return tuple(straddles)


def build_stock_stream(straddles: Sequence[StraddleSeries]) -> StockStream:
    """Chain a stock's straddles and compute every indicator on the result."""
    chain = _chain(straddles)
    if not chain:
        raise ValueError("no straddles")
    underlying = chain[0].underlying
    dates, rets, pos, lmc, lmp, dte = [], [], [], [], [], []
    first, last = [], []
    for k, s in enumerate(chain):
        n = len(s) - 1            # expiry day has no next-day return
        dates.extend(s.dates[:n])
        rets.append(s.returns[:n])
        pos.append(np.full(n, k))
        lmc.append(s.log_moneyness_call[:n])
        lmp.append(s.log_moneyness_put[:n])
        dte.append(s.dte_years[:n])
        f = np.zeros(n, dtype=bool)
        f[0] = True
        first.append(f)
        last.append(f[::-1].copy())
    returns = np.concatenate(rets)
    n = returns.size
    straddle_pos = np.concatenate(pos)

    price_index = np.empty(n)
    price_index[0] = 1.0
    price_index[1:] = np.cumprod(1.0 + returns[:-1])

    sigma = np.full(n, SIGMA_FLOOR_DAILY)
    if n > 1:
        sigma[1:] = ewm_volatility(returns[:-1]).sigma_daily

    feats = np.zeros((n, N_FEATURES))
    for c, k in enumerate(RETURN_HORIZONS):
        t = np.arange(k, n)
        feats[t, c] = (price_index[t] / price_index[t - k] - 1.0) / (sigma[t] * np.sqrt(k))
    for c, (s_, l_) in enumerate(MACD_PAIRS, start=len(RETURN_HORIZONS)):
        feats[:, c] = macd_series(price_index, s_, l_).signal

    history = [(s.expiry, s.hold_return) for s in chain]
    mom = np.zeros((len(chain), len(MOMENTUM_MONTHS)))
    mom_mask = np.zeros((len(chain), len(MOMENTUM_MONTHS)), dtype=bool)
    for k, s in enumerate(chain):
        for c, m in enumerate(MOMENTUM_MONTHS):
            mom[k, c], mom_mask[k, c] = option_momentum_feature(history, s.formation_date, m)
    c0 = len(RETURN_HORIZONS) + len(MACD_PAIRS)
    feats[:, c0:c0 + 4] = mom[straddle_pos]
    feats[:, c0 + 4] = np.concatenate(lmc)
    feats[:, c0 + 5] = np.concatenate(lmp)
    feats[:, c0 + 6] = np.concatenate(dte)
    if not np.all(np.isfinite(feats)):
        raise ValueError(f"{underlying}: non-finite feature values")
    return StockStream(
        underlying=underlying,
        straddles=chain,
        dates=np.array(dates, dtype="datetime64[D]"),
        returns=returns,
        price_index=price_index,
        sigma_daily=sigma,
        straddle_pos=straddle_pos,
        first_day=np.concatenate(first),
        last_day=np.concatenate(last),
        features=feats,
        masks=mom_mask[straddle_pos],
    )


def build_feature_vector(stream: StockStream, t: int) -> FeatureVector:
    """Feature vector for day ``t`` of a stock stream."""
    return FeatureVector(stream.features[t].copy(), stream.masks[t].copy())
