"""Run artifacts: JSON reports, CSV series and saved portfolios.

Every file is written atomically (temporary file + rename).
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .backtest import (
    DEFAULT_COST_GRID,
    SIGMA_TGT,
    PortfolioReturns,
    compute_metrics,
    cost_sweep,
    rescale_to_target_vol,
    turnover_series,
)
from .indicators import FEATURE_NAMES
from .panel import Panel


def atomic_write(path, data: str | bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise
    return path


def to_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.datetime64):
        return str(o.astype("datetime64[D]"))
    if hasattr(o, "isoformat"):
        return o.isoformat()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _iso(d) -> str:
    return str(np.datetime64(d, "D"))


def write_returns_csv(path, dates, returns) -> Path:
    return atomic_write(path, _csv_text(["date", "return"],
                                        [(_iso(d), repr(float(r))) for d, r in zip(dates, returns)]))


def write_cumulative_csv(path, dates, returns) -> Path:
    curve = np.cumprod(1.0 + np.asarray(returns, dtype=float))
    return atomic_write(path, _csv_text(["date", "cumulative"],
                                        [(_iso(d), repr(float(c))) for d, c in zip(dates, curve)]))


def write_sweep_csv(path, sweep) -> Path:
    return atomic_write(path, _csv_text(["cost_bps", "sharpe"],
                                        [(repr(c), repr(s)) for c, s in sweep]))


def write_training_log(path, history) -> Path:
    return atomic_write(path, _csv_text(["epoch", "train_loss", "val_loss", "elapsed_s"],
                                        [(e, repr(tr), repr(v), f"{el:.3f}")
                                         for e, tr, v, el in history]))


def write_feature_csv(path, panel: Panel) -> Path:
    header = ["underlying", "formation_date", "date",
              *(f"f{k + 1}" for k in range(len(FEATURE_NAMES))),
              *(f"mask{k + 1}" for k in range(panel.masks.shape[2]))]
    rows = []
    for s in panel.streams:
        formations = [st.formation_date.isoformat() for st in s.straddles]
        for t in range(len(s)):
            rows.append([s.underlying, formations[s.straddle_pos[t]], _iso(s.dates[t]),
                         *(repr(float(v)) for v in s.features[t]),
                         *(int(m) for m in s.masks[t])])
    return atomic_write(path, _csv_text(header, rows))


def save_portfolio(path, portfolio: PortfolioReturns) -> Path:
    buf = io.BytesIO()
    np.savez(buf, dates=portfolio.dates.astype("datetime64[D]").astype(np.int64),
             returns=portfolio.returns, n_active=portfolio.n_active,
             positions=portfolio.positions, sigma_ann=portfolio.sigma_ann,
             straddle_id=portfolio.straddle_id, sigma_tgt=portfolio.sigma_tgt)
    return atomic_write(path, buf.getvalue())


def load_portfolio(path) -> PortfolioReturns:
    with np.load(path) as z:
        return PortfolioReturns(
            dates=z["dates"].astype("datetime64[D]"), returns=z["returns"],
            n_active=z["n_active"], positions=z["positions"], sigma_ann=z["sigma_ann"],
            straddle_id=z["straddle_id"], sigma_tgt=float(z["sigma_tgt"]))


def portfolio_summary(portfolio: PortfolioReturns, cost_grid=DEFAULT_COST_GRID,
                      sigma_tgt: float = SIGMA_TGT) -> dict:
    """Raw and vol-rescaled metrics, mean turnover and the cost sweep."""
    r = portfolio.returns
    return {
        "n_days": int(r.size),
        "start": _iso(portfolio.dates[0]),
        "end": _iso(portfolio.dates[-1]),
        "metrics_raw": compute_metrics(r).to_dict(),
        "metrics_scaled": compute_metrics(rescale_to_target_vol(r, sigma_tgt)).to_dict(),
        "mean_daily_turnover": float(turnover_series(portfolio).mean()),
        "cost_sweep": [{"cost_bps": c, "sharpe": s}
                       for c, s in cost_sweep(portfolio, cost_grid, sigma_tgt)],
    }


def stamp(doc: dict) -> dict:
    return {"optbt_version": __version__, **doc}
