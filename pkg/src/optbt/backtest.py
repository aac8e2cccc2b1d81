"""Portfolio aggregation, costs, metrics and the expanding-window protocol."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import date

import numpy as np

from .dataset import ElementData, build_elements
from .errors import AlignmentError, MissingLinkage, SpanTooShort, ZeroVariance
from .models import WINDOW
from .panel import Panel
from .strategies import strategy_positions
from .training import SearchResult, TrainConfig, infer, random_search

log = logging.getLogger(__name__)

TRADING_DAYS = 252
SIGMA_TGT = 0.15
DEFAULT_COST_GRID = (0.0, 1.0, 2.0, 3.0, 5.0, 10.0, 20.0, 50.0)
BLOCK_YEARS = 5


# ---------------------------------------------------------------------------
# windows

@dataclass(frozen=True)
class BacktestWindow:
    """Inclusive date bounds of one train/test block."""

    train_start: date
    train_end: date
    test_start: date
    test_end: date


def _as_date(x, end=False) -> date:
    if isinstance(x, (int, np.integer)):
        return date(int(x), 12, 31) if end else date(int(x), 1, 1)
    if isinstance(x, np.datetime64):
        return x.astype("datetime64[D]").item()
    return x


def expanding_windows(panel_start, panel_end, block_years: int = BLOCK_YEARS) -> list[BacktestWindow]:
    """Train on every block of ``block_years`` more years, test on the next block.

    Bounds may be dates or calendar years (a year end bound means Dec 31).
    """
    start, end = _as_date(panel_start), _as_date(panel_end, end=True)
    y0 = start.year
    if end.year - y0 + 1 < 2 * block_years:
        raise SpanTooShort(f"{y0}-{end.year} spans fewer than {2 * block_years} years")
    out = []
    k = 1
    while y0 + k * block_years <= end.year:
        split = y0 + k * block_years
        out.append(BacktestWindow(
            train_start=date(y0, 1, 1),
            train_end=date(split - 1, 12, 31),
            test_start=date(split, 1, 1),
            test_end=min(date(split + block_years - 1, 12, 31), end),
        ))
        k += 1
    return out


# ---------------------------------------------------------------------------
# portfolio returns and costs

@dataclass(frozen=True)
class PortfolioReturns:
    dates: np.ndarray
    returns: np.ndarray         # (T,)
    n_active: np.ndarray        # (T,)
    positions: np.ndarray       # (T, N)
    sigma_ann: np.ndarray       # (T, N)
    straddle_id: np.ndarray | None
    sigma_tgt: float = SIGMA_TGT

    def restrict(self, rows) -> "PortfolioReturns":
        rows = np.asarray(rows)
        return replace(self, dates=self.dates[rows], returns=self.returns[rows],
                       n_active=self.n_active[rows], positions=self.positions[rows],
                       sigma_ann=self.sigma_ann[rows],
                       straddle_id=None if self.straddle_id is None else self.straddle_id[rows])


def portfolio_returns(signals, vol_estimates, straddle_returns, sigma_tgt: float = SIGMA_TGT,
                      active=None, dates=None, straddle_id=None) -> PortfolioReturns:
    """Equal-weight average of vol-targeted straddle returns per day.

    All inputs are (T, N) grids; ``vol_estimates`` are annualized. Days with
    no active straddle return 0.
    """
    X = np.asarray(signals, dtype=float)
    sig = np.asarray(vol_estimates, dtype=float)
    r = np.asarray(straddle_returns, dtype=float)
    if X.ndim == 1:
        X, sig, r = X[:, None], sig[:, None], r[:, None]
    if not (X.shape == sig.shape == r.shape):
        raise AlignmentError(f"shapes differ: signals {X.shape}, vols {sig.shape}, returns {r.shape}")
    act = np.isfinite(r) if active is None else np.asarray(active, dtype=bool)
    if act.shape != X.shape:
        raise AlignmentError(f"active mask shape {act.shape} != {X.shape}")
    if np.any(~np.isfinite(r[act])) or np.any(~(sig[act] > 0)) or np.any(~np.isfinite(X[act])):
        raise AlignmentError("active cells need finite returns, positive vols and finite signals")
    if np.any(np.abs(X) > 1 + 1e-12):
        raise AlignmentError("signals must lie in [-1, 1]")
    contrib = np.zeros_like(X)
    contrib[act] = X[act] * (sigma_tgt / sig[act]) * r[act]
    n = act.sum(axis=1)
    out = np.divide(contrib.sum(axis=1), n, out=np.zeros(len(n)), where=n > 0)
    pos = np.where(act, X, 0.0)
    dates = np.arange(len(n)) if dates is None else np.asarray(dates)
    return PortfolioReturns(dates, out, n, pos, np.where(act, sig, np.nan), straddle_id, sigma_tgt)


def panel_portfolio(panel: Panel, positions, sigma_tgt: float = SIGMA_TGT) -> PortfolioReturns:
    return portfolio_returns(positions, panel.sigma_ann, panel.returns, sigma_tgt,
                             active=panel.active, dates=panel.dates,
                             straddle_id=panel.straddle_id)


def turnover_series(portfolio: PortfolioReturns) -> np.ndarray:
    """Daily average of sigma_tgt * |X_t / sigma_t - X_{t-1} / sigma_{t-1}|.

    Positions start from 0 on a straddle's first day and return to 0 after
    its last day; the exit leg is charged on the last day.
    """
    if portfolio.straddle_id is None:
        raise MissingLinkage("turnover needs per-cell straddle ids")
    sid = portfolio.straddle_id
    act = sid >= 0
    scaled = np.zeros(sid.shape)
    scaled[act] = portfolio.positions[act] / portfolio.sigma_ann[act]
    cost = np.zeros(sid.shape)
    for j in range(sid.shape[1]):
        rows = np.flatnonzero(act[:, j])
        if rows.size == 0:
            continue
        ids = sid[rows, j]
        v = scaled[rows, j]
        same_prev = np.zeros(rows.size, dtype=bool)
        same_prev[1:] = ids[1:] == ids[:-1]
        prev = np.where(same_prev, np.roll(v, 1), 0.0)
        c = np.abs(v - prev)
        last = np.ones(rows.size, dtype=bool)
        last[:-1] = ids[:-1] != ids[1:]
        c[last] += np.abs(v[last])
        cost[rows, j] = c
    n = portfolio.n_active
    return portfolio.sigma_tgt * np.divide(cost.sum(axis=1), n, out=np.zeros(len(n)), where=n > 0)


def cost_adjusted_returns(portfolio: PortfolioReturns, c_bps: float) -> np.ndarray:
    return portfolio.returns - (c_bps * 1e-4) * turnover_series(portfolio)


def annualized_vol(returns) -> float:
    return float(np.std(np.asarray(returns, dtype=float)) * np.sqrt(TRADING_DAYS))


def vol_scale_factor(returns, sigma_tgt: float = SIGMA_TGT) -> float:
    r = np.asarray(returns, dtype=float)
    if r.size < 2:
        raise ZeroVariance("need at least two observations")
    vol = annualized_vol(r)
    if vol == 0:
        raise ZeroVariance("return series has zero variance")
    return sigma_tgt / vol


def rescale_to_target_vol(returns, sigma_tgt: float = SIGMA_TGT) -> np.ndarray:
    """Ex-post constant rescaling so the whole series realizes ``sigma_tgt``."""
    return np.asarray(returns, dtype=float) * vol_scale_factor(returns, sigma_tgt)


# ---------------------------------------------------------------------------
# metrics

@dataclass(frozen=True)
class MetricsReport:
    expected_return: float
    volatility: float
    downside_deviation: float | None
    mdd: float
    sharpe: float
    sortino: float | None
    calmar: float | None
    hit_rate: float
    avg_profit_over_avg_loss: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def max_drawdown(returns) -> float:
    """Largest peak-to-trough fall of the compounded equity curve (starting at 1)."""
    equity = np.concatenate([[1.0], np.cumprod(1.0 + np.asarray(returns, dtype=float))])
    peak = np.maximum.accumulate(equity)
    return float(np.max((peak - equity) / peak))


def sharpe_ratio(returns) -> float:
    r = np.asarray(returns, dtype=float)
    if r.size < 2:
        raise ZeroVariance("need at least two observations")
    sd = r.std()
    if sd == 0:
        raise ZeroVariance("return series has zero variance")
    return float(r.mean() / sd * np.sqrt(TRADING_DAYS))


def compute_metrics(returns) -> MetricsReport:
    """Annualized performance metrics of a daily return series.

    Undefined ratios (no losses, no drawdown) are reported as None.
    """
    r = np.asarray(returns, dtype=float)
    sharpe = sharpe_ratio(r)
    mean = r.mean()
    neg, pos = r[r < 0], r[r > 0]
    dd = float(neg.std() * np.sqrt(TRADING_DAYS)) if neg.size else None
    mdd = max_drawdown(r)
    return MetricsReport(
        expected_return=float(mean * TRADING_DAYS),
        volatility=annualized_vol(r),
        downside_deviation=dd,
        mdd=mdd,
        sharpe=sharpe,
        sortino=float(mean * TRADING_DAYS / dd) if dd else None,
        calmar=float(mean * TRADING_DAYS / mdd) if mdd > 0 else None,
        hit_rate=float(np.mean(r > 0)),
        avg_profit_over_avg_loss=(float((pos.mean() if pos.size else 0.0) / abs(neg.mean()))
                                  if neg.size else None),
    )


def cost_sweep(portfolio: PortfolioReturns, cost_grid=DEFAULT_COST_GRID,
               sigma_tgt: float = SIGMA_TGT) -> list[tuple[float, float]]:
    """Sharpe of the vol-rescaled, cost-adjusted series for each cost level (bps)."""
    k = vol_scale_factor(portfolio.returns, sigma_tgt)
    turnover = turnover_series(portfolio)
    out = []
    for c in cost_grid:
        adjusted = portfolio.returns - (float(c) * 1e-4) * turnover
        out.append((float(c), compute_metrics(adjusted * k).sharpe))
    return out


# ---------------------------------------------------------------------------
# walk-forward model evaluation

@dataclass
class WalkForwardResult:
    arch: str
    seeds: tuple
    windows: list
    positions: np.ndarray                 # (T, N) seed-averaged
    seed_positions: dict                  # seed -> (T, N)
    oos_rows: np.ndarray                  # bool (T,)
    searches: dict = field(default_factory=dict)   # (window index, seed) -> SearchResult


def panel_span(panel: Panel) -> tuple[date, date]:
    return panel.dates[0].item(), panel.dates[-1].item()


def walk_forward(panel: Panel, arch: str, seeds=(0,), n_trials: int = 100,
                 base: TrainConfig | None = None, block_years: int = BLOCK_YEARS,
                 data: ElementData | None = None, sigma_tgt: float = SIGMA_TGT,
                 search=random_search, workers: int = 1) -> WalkForwardResult:
    """Expanding-window training and frozen out-of-sample evaluation.

    For every window and seed a random search is run on the training block
    (90/10 chronological split); the winner then trades the test block.
    Seeds are independent, so ``workers > 1`` runs them on a thread pool.
    """
    base = base or TrainConfig()
    data = build_elements(panel, sigma_tgt) if data is None else data
    windows = expanding_windows(*panel_span(panel), block_years=block_years)
    T, N = panel.shape
    seed_pos = {s: np.zeros((T, N)) for s in seeds}
    oos = np.zeros(T, dtype=bool)
    searches = {}
    for w, win in enumerate(windows):
        fit_idx = data.select(win.train_start, win.train_end, realised_by=win.train_end)
        train_idx, val_idx = data.chronological_split(fit_idx)
        test_idx = np.sort(data.select(win.test_start, win.test_end))
        oos |= panel.date_mask(win.test_start, np.datetime64(win.test_end) + 1)
        def run(s):
            return search(arch, data, train_idx, val_idx, n_trials=n_trials, seed=s, base=base)

        if workers > 1 and len(seeds) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run, seeds))
        else:
            results = [run(s) for s in seeds]
        for s, res in zip(seeds, results):
            searches[(w, s)] = res
            x = infer(res.result.model, data, test_idx)
            seed_pos[s][data.grid_row[test_idx], data.stock[test_idx]] = x
            log.info("window %d seed %s: best val %.4f", w, s, res.result.best_val_loss)
    ens = np.mean([seed_pos[s] for s in seeds], axis=0)
    return WalkForwardResult(arch, tuple(seeds), windows, ens, seed_pos, oos, searches)


def strategy_portfolio(panel: Panel, name: str, sigma_tgt: float = SIGMA_TGT) -> PortfolioReturns:
    return panel_portfolio(panel, strategy_positions(panel, name), sigma_tgt)
