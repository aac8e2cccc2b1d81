"""Flattened (straddle, day) elements of a panel, ready for model training.

Every active panel cell becomes one element carrying its feature-window
pointer, vol-target factor sigma_tgt / sigma_t, next-day return and a link to
the previous day of the same straddle (for turnover).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptySplit
from .panel import Panel

MAX_WINDOW = 20
SIGMA_TGT = 0.15


@dataclass(frozen=True)
class ElementData:
    features: np.ndarray    # (rows, d) per-stock blocks, each preceded by zero padding
    ptr: np.ndarray         # row of the element's own feature vector
    stock: np.ndarray
    pos: np.ndarray         # position within the stock stream
    grid_row: np.ndarray    # row in the panel grid
    date: np.ndarray        # datetime64[D]
    next_date: np.ndarray   # date on which r_{t,t+1} is realised
    factor: np.ndarray      # sigma_tgt / sigma_t
    ret: np.ndarray
    prev: np.ndarray        # element index of the previous day of the same straddle, -1 at entry
    sigma_tgt: float

    def __len__(self):
        return len(self.ptr)

    def windows(self, idx, window: int) -> np.ndarray:
        """(len(idx), window, d) trailing feature windows, oldest first."""
        idx = np.asarray(idx)
        rows = self.ptr[idx][..., None] + np.arange(1 - window, 1)
        return self.features[rows]

    def rows(self, idx) -> np.ndarray:
        """Single-day feature vectors; -1 entries give zeros (padding)."""
        idx = np.asarray(idx)
        out = self.features[self.ptr[np.where(idx < 0, 0, idx)]]
        out[idx < 0] = 0.0
        return out

    def select(self, start=None, end=None, realised_by=None) -> np.ndarray:
        """Element indices with start <= date <= end (inclusive), optionally
        restricted to returns realised on or before ``realised_by``."""
        m = np.ones(len(self), dtype=bool)
        if start is not None:
            m &= self.date >= np.datetime64(start, "D")
        if end is not None:
            m &= self.date <= np.datetime64(end, "D")
        if realised_by is not None:
            m &= self.next_date <= np.datetime64(realised_by, "D")
        return np.flatnonzero(m)

    def with_prev(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        p = self.prev[idx]
        return np.union1d(idx, p[p >= 0])

    def chronological_split(self, idx, train_frac: float = 0.9):
        """Split by date: earliest ``train_frac`` of distinct dates train, rest validate."""
        idx = np.asarray(idx)
        days = np.unique(self.date[idx])
        if len(days) < 2:
            raise EmptySplit("need at least two distinct dates to split")
        cut = days[int(np.floor(train_frac * len(days)))] if train_frac < 1 else days[-1]
        train = idx[self.date[idx] < cut]
        val = idx[self.date[idx] >= cut]
        if len(train) < 2 or len(val) < 2:
            raise EmptySplit(f"split sizes train={len(train)}, val={len(val)}")
        return train, val

    def trajectories(self, idx, length: int) -> np.ndarray:
        """Chunk elements into per-stock runs of consecutive days.

        Returns an (n, length) index matrix padded with -1 at the end.
        """
        idx = np.sort(np.asarray(idx))
        if idx.size == 0:
            return np.empty((0, length), dtype=np.int64)
        brk = np.ones(idx.size, dtype=bool)
        brk[1:] = (self.stock[idx[1:]] != self.stock[idx[:-1]]) | \
                  (self.pos[idx[1:]] != self.pos[idx[:-1]] + 1)
        starts = np.flatnonzero(brk)
        ends = np.append(starts[1:], idx.size)
        out = []
        for s, e in zip(starts, ends):
            for c in range(s, e, length):
                chunk = idx[c:min(c + length, e)]
                out.append(np.pad(chunk, (0, length - chunk.size), constant_values=-1))
        return np.array(out, dtype=np.int64)


def build_elements(panel: Panel, sigma_tgt: float = SIGMA_TGT) -> ElementData:
    blocks = []
    ptr, stock, pos, grid_row, date, next_date = [], [], [], [], [], []
    factor, ret, prev = [], [], []
    offset = 0
    e0 = 0
    d = panel.features.shape[2]
    for i, s in enumerate(panel.streams):
        n = len(s)
        blocks.append(np.zeros((MAX_WINDOW - 1, d)))
        blocks.append(s.features)
        ptr.append(offset + MAX_WINDOW - 1 + np.arange(n))
        offset += MAX_WINDOW - 1 + n
        stock.append(np.full(n, i))
        pos.append(np.arange(n))
        grid_row.append(panel.rows[i])
        date.append(s.dates)
        expiries = np.array([st.expiry for st in s.straddles], dtype="datetime64[D]")
        nd = np.empty(n, dtype="datetime64[D]")
        nd[:-1] = s.dates[1:]
        nd[s.last_day] = expiries[s.straddle_pos[s.last_day]]
        next_date.append(nd)
        factor.append(sigma_tgt / s.sigma_ann)
        ret.append(s.returns)
        p = e0 + np.arange(n) - 1
        p[s.first_day] = -1
        prev.append(p)
        e0 += n
    return ElementData(
        features=np.concatenate(blocks),
        ptr=np.concatenate(ptr),
        stock=np.concatenate(stock),
        pos=np.concatenate(pos),
        grid_row=np.concatenate(grid_row),
        date=np.concatenate(date),
        next_date=np.concatenate(next_date),
        factor=np.concatenate(factor),
        ret=np.concatenate(ret),
        prev=np.concatenate(prev),
        sigma_tgt=sigma_tgt,
    )
