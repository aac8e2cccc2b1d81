"""Calendar-aligned panel of straddle streams."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .indicators import MOMENTUM_MONTHS, N_FEATURES, TRADING_DAYS, StockStream, build_stock_stream
from .market_data import StraddleSeries


@dataclass(frozen=True)
class Panel:
    """Date x stock grid built from per-stock streams.

    Grid cells are active when the stock holds a straddle with a known
    next-day return; inactive cells hold NaN returns and zero features.
    """

    dates: np.ndarray          # (T,) datetime64[D]
    underlyings: tuple         # (N,)
    streams: tuple             # StockStream per underlying
    rows: tuple                # grid row of every stream day, per stock
    active: np.ndarray         # (T, N) bool
    returns: np.ndarray        # (T, N) r_{t,t+1}
    sigma_ann: np.ndarray      # (T, N) ex-ante annualized vol
    straddle_id: np.ndarray    # (T, N) int, -1 when inactive; unique per straddle
    first_day: np.ndarray      # (T, N)
    last_day: np.ndarray       # (T, N)
    features: np.ndarray       # (T, N, 15)
    masks: np.ndarray          # (T, N, 4)

    @property
    def shape(self):
        return self.active.shape

    def straddle(self, sid: int) -> StraddleSeries:
        i, k = self._sid_index[sid]
        return self.streams[i].straddles[k]

    @cached_property
    def _sid_index(self):
        out, sid = {}, 0
        for i, s in enumerate(self.streams):
            for k in range(len(s.straddles)):
                out[sid] = (i, k)
                sid += 1
        return out

    def date_mask(self, start=None, end=None) -> np.ndarray:
        """Rows with ``start <= date < end``."""
        m = np.ones(len(self.dates), dtype=bool)
        if start is not None:
            m &= self.dates >= np.datetime64(start, "D")
        if end is not None:
            m &= self.dates < np.datetime64(end, "D")
        return m


def build_panel(straddles: Sequence[StraddleSeries]) -> Panel:
    by_stock = defaultdict(list)
    for s in straddles:
        by_stock[s.underlying].append(s)
    underlyings = tuple(sorted(by_stock))
    streams = tuple(build_stock_stream(by_stock[u]) for u in underlyings)
    dates = np.unique(np.concatenate([s.dates for s in streams]))
    T, N = len(dates), len(streams)
    active = np.zeros((T, N), dtype=bool)
    returns = np.full((T, N), np.nan)
    sigma = np.full((T, N), np.nan)
    sid = np.full((T, N), -1, dtype=np.int64)
    first = np.zeros((T, N), dtype=bool)
    last = np.zeros((T, N), dtype=bool)
    feats = np.zeros((T, N, N_FEATURES))
    masks = np.zeros((T, N, len(MOMENTUM_MONTHS)), dtype=bool)
    rows = []
    offset = 0
    for i, s in enumerate(streams):
        r = np.searchsorted(dates, s.dates)
        rows.append(r)
        active[r, i] = True
        returns[r, i] = s.returns
        sigma[r, i] = s.sigma_daily * np.sqrt(TRADING_DAYS)
        sid[r, i] = offset + s.straddle_pos
        first[r, i] = s.first_day
        last[r, i] = s.last_day
        feats[r, i] = s.features
        masks[r, i] = s.masks
        offset += len(s.straddles)
    return Panel(dates, underlyings, streams, tuple(rows), active, returns, sigma, sid,
                 first, last, feats, masks)


def stream_to_grid(panel: Panel, values: Sequence[np.ndarray], fill=0.0) -> np.ndarray:
    """Scatter per-stream arrays onto the (T, N) grid."""
    out = np.full(panel.shape, fill, dtype=float)
    for i, (r, v) in enumerate(zip(panel.rows, values)):
        out[r, i] = v
    return out
