"""Sharpe-ratio training: losses, Adam, early stopping and random search."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .autodiff import Tensor, as_tensor, concat, gradient, no_grad
from .dataset import ElementData
from .errors import BatchTooSmall, EmptySplit, MissingLinkage
from .models import WINDOW, Model, init_model

log = logging.getLogger(__name__)

TRADING_DAYS = 252
SHARPE_EPS = 1e-12
PATIENCE = 25
MAX_EPOCHS = 300

SEARCH_SPACE = {
    "minibatch_size": (32, 64, 128, 256),
    "dropout_rate": (0.1, 0.2, 0.3, 0.4, 0.5),
    "hidden_size": (5, 10, 20, 40, 80, 160),
    "learning_rate": (1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0),
    "max_gradient_norm": (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0),
    "l1_coefficient": (1e-5, 1e-4, 1e-3, 1e-2, 1e-1),
}


@dataclass(frozen=True)
class TrainConfig:
    minibatch_size: int = 64
    dropout_rate: float = 0.1
    hidden_size: int = 10
    learning_rate: float = 1e-3
    max_gradient_norm: float = 1.0
    l1_coefficient: float = 0.0
    tc_reg_cost_bps: float = 0.0
    max_epochs: int = MAX_EPOCHS
    patience: int = PATIENCE
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# losses

def strategy_returns(positions, factors, returns) -> Tensor:
    """R = X * (sigma_tgt / sigma_t) * r."""
    return as_tensor(positions) * (np.asarray(factors, float) * np.asarray(returns, float))


def _sharpe(R: Tensor, eps: float) -> Tensor:
    if R.data.size < 2:
        raise BatchTooSmall(f"Sharpe loss needs >= 2 elements, got {R.data.size}")
    mean = R.mean()
    var = (R * R).mean() - mean * mean + eps
    return -(mean * np.sqrt(TRADING_DAYS)) / var.sqrt()


def sharpe_loss(positions, factors, returns, eps: float = SHARPE_EPS) -> Tensor:
    """Negative annualized Sharpe ratio of R = X * factor * r over the batch."""
    return _sharpe(strategy_returns(positions, factors, returns), eps)


def turnover_penalty(positions, factors, prev_positions, prev_factors, c_bps: float) -> Tensor:
    """c * sigma_tgt * |X_t / sigma_t - X_{t-1} / sigma_{t-1}|, written with factors."""
    if prev_positions is None or prev_factors is None:
        raise MissingLinkage("turnover regularisation needs previous positions and factors")
    f = np.asarray(factors, float)
    pf = np.asarray(prev_factors, float)
    X = as_tensor(positions)
    PX = as_tensor(prev_positions)
    if PX.shape != X.shape or pf.shape != f.shape or f.shape != X.shape:
        raise MissingLinkage(f"previous-day linkage shape {PX.shape} does not match {X.shape}")
    if not (np.all(np.isfinite(PX.data)) and np.all(np.isfinite(pf))):
        raise MissingLinkage("previous-day linkage contains missing values")
    return (X * f - PX * pf).abs() * (c_bps * 1e-4)


def turnover_adjusted_loss(positions, factors, returns, prev_positions, prev_factors,
                           c_bps: float, eps: float = SHARPE_EPS) -> Tensor:
    R = strategy_returns(positions, factors, returns)
    pen = turnover_penalty(positions, factors, prev_positions, prev_factors, c_bps)
    return _sharpe(R - pen, eps)


# ---------------------------------------------------------------------------
# optimiser

@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def clip_by_global_norm(grads, max_norm: float):
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        grads = [g * scale for g in grads]
    return grads, norm


def adam_step(params, grads, state: AdamState, lr: float, max_grad_norm: float | None) -> AdamState:
    """Clip to ``max_grad_norm`` (global L2 norm), then one bias-corrected Adam update in place."""
    grads, _ = clip_by_global_norm(grads, max_grad_norm)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


# ---------------------------------------------------------------------------
# forward passes over elements

def _forward(model: Model, data: ElementData, batch: np.ndarray, rng=None):
    """Positions for a batch. Returns (positions tensor, element indices).

    For LSTM ``batch`` is a (n, tau) trajectory matrix and padding is dropped.
    """
    if model.arch == "lstm":
        x = data.rows(batch)
        out = model.forward(x, rng)
        valid = np.nonzero(batch >= 0)
        return out[valid], batch[valid]
    return model.forward(data.windows(batch, model.window), rng), batch


def infer(model: Model, data: ElementData, idx, chunk: int = 4096) -> np.ndarray:
    """Inference-mode positions for elements ``idx`` (aligned with sorted ``idx``)."""
    idx = np.sort(np.asarray(idx))
    out = np.empty(idx.size)
    with no_grad():
        if model.arch == "lstm":
            traj = data.trajectories(idx, model.window)
            where = {e: k for k, e in enumerate(idx)}
            for s in range(0, len(traj), chunk // model.window + 1):
                X, el = _forward(model, data, traj[s:s + chunk // model.window + 1])
                out[[where[e] for e in el]] = X.data
        else:
            for s in range(0, idx.size, chunk):
                X, _ = _forward(model, data, idx[s:s + chunk])
                out[s:s + chunk] = X.data
    return out


def _prev_context(data: ElementData, el: np.ndarray, cache: dict):
    p = data.prev[el]
    has = p >= 0
    px = np.zeros(el.size)
    pf = np.zeros(el.size)
    if has.any():
        px[has] = [cache[i] for i in p[has]]
        pf[has] = data.factor[p[has]]
    return px, pf


def _linked_positions(model: Model, data: ElementData, batch: np.ndarray, rng, cache: dict):
    """Positions and previous-day positions of the same straddles, both from the
    current parameters so the turnover penalty is differentiated through X_{t-1}.

    Returns (X, X_prev, prev_factor, elements). For LSTM trajectories the previous
    day is the preceding step; only the first step of a chunk reads ``cache``.
    """
    if model.arch == "lstm":
        out = model.forward(data.rows(batch), rng)
        n, T = batch.shape
        safe = np.where(batch >= 0, batch, 0)
        prev = np.where(batch >= 0, data.prev[safe], -1)
        linked = prev >= 0
        first = np.zeros((n, 1))
        head = linked[:, 0]
        first[head, 0] = [cache[i] for i in prev[head, 0]]
        shifted = concat([Tensor(first), out[:, :-1]], axis=1) * linked.astype(float)
        valid = np.nonzero(batch >= 0)
        el = batch[valid]
        pf = np.where(linked[valid], data.factor[np.where(linked, prev, 0)[valid]], 0.0)
        return out[valid], shifted[valid], pf, el
    X = model.forward(data.windows(batch, model.window), rng)
    p = data.prev[batch]
    has = p >= 0
    PX = model.forward(data.windows(np.where(has, p, batch), model.window), rng) * has.astype(float)
    pf = np.where(has, data.factor[np.where(has, p, 0)], 0.0)
    return X, PX, pf, batch


def evaluate_loss(model: Model, data: ElementData, idx, c_bps: float = 0.0) -> float:
    """Inference-mode loss over a whole slice (exact previous-day positions)."""
    idx = np.sort(np.asarray(idx))
    if c_bps > 0:
        full = data.with_prev(idx)
        pos = dict(zip(full.tolist(), infer(model, data, full)))
        X = np.array([pos[i] for i in idx])
        px, pf = _prev_context(data, idx, pos)
        with no_grad():
            loss = turnover_adjusted_loss(X, data.factor[idx], data.ret[idx], px, pf, c_bps)
    else:
        X = infer(model, data, idx)
        with no_grad():
            loss = sharpe_loss(X, data.factor[idx], data.ret[idx])
    return loss.item()


# ---------------------------------------------------------------------------
# training loop

@dataclass
class TrainResult:
    model: Model
    best_epoch: int
    best_val_loss: float
    log: list = field(default_factory=list)   # (epoch, train_loss, val_loss, elapsed_s)


def _batches(model: Model, data: ElementData, train_idx, batch_size: int, rng):
    if model.arch == "lstm":
        units = data.trajectories(train_idx, model.window)
    else:
        units = np.asarray(train_idx)
    order = rng.permutation(len(units))
    for s in range(0, len(order), batch_size):
        yield units[order[s:s + batch_size]]


def train_with_early_stopping(model: Model, data: ElementData, train_idx, val_idx,
                              config: TrainConfig) -> TrainResult:
    """Minibatch Adam on the (turnover-adjusted) Sharpe loss with early stopping.

    Returns a copy of the model at its best validation epoch.
    """
    if len(train_idx) < 2 or len(val_idx) < 2:
        raise EmptySplit(f"train={len(train_idx)} val={len(val_idx)} observations")
    rng = np.random.default_rng(config.seed)
    c = config.tc_reg_cost_bps
    params = model.parameters()
    state = AdamState.for_params(params)
    best = model.copy()
    best_val, best_epoch, wait = np.inf, 0, 0
    history = []
    t0 = time.perf_counter()
    linkage = data.with_prev(train_idx) if c > 0 and model.arch == "lstm" else None
    for epoch in range(1, config.max_epochs + 1):
        cache = (dict(zip(linkage.tolist(), infer(model, data, linkage)))
                 if linkage is not None else None)
        losses = []
        for batch in _batches(model, data, train_idx, config.minibatch_size, rng):
            if c > 0:
                X, PX, pf, el = _linked_positions(model, data, batch, rng, cache)
            else:
                X, el = _forward(model, data, batch, rng)
            if el.size < 2:
                continue
            f, r = data.factor[el], data.ret[el]
            if c > 0:
                loss = turnover_adjusted_loss(X, f, r, PX, pf, c)
            else:
                loss = sharpe_loss(X, f, r)
            losses.append(loss.item())
            if config.l1_coefficient > 0 and model.arch == "linear":
                loss = loss + model.params["W"].abs().sum() * config.l1_coefficient
            grads = gradient(loss, params)
            adam_step(params, grads, state, config.learning_rate, config.max_gradient_norm)
        val = evaluate_loss(model, data, val_idx, c)
        if not np.isfinite(val):
            val = np.inf
        history.append((epoch, float(np.mean(losses)) if losses else float("nan"), val,
                        time.perf_counter() - t0))
        if val < best_val:
            best_val, best_epoch, wait = val, epoch, 0
            best = model.copy()
        else:
            wait += 1
            if wait >= config.patience:
                break
    return TrainResult(best, best_epoch, float(best_val), history)


# ---------------------------------------------------------------------------
# hyperparameter search

def sample_config(rng, arch: str, base: TrainConfig, space=SEARCH_SPACE) -> TrainConfig:
    picks = {k: space[k][int(rng.integers(len(space[k])))] for k in sorted(space)}
    if arch != "linear":
        picks["l1_coefficient"] = 0.0
    return replace(base, **{k: (type(getattr(base, k))(v)) for k, v in picks.items()})


@dataclass
class SearchResult:
    config: TrainConfig
    result: TrainResult
    trials: list


def _trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([seed, trial]).generate_state(1)[0])


def random_search(arch: str, data: ElementData, train_idx, val_idx, n_trials: int = 100,
                  seed: int = 0, base: TrainConfig | None = None,
                  space=SEARCH_SPACE) -> SearchResult:
    """Sample ``n_trials`` configs from the grid and keep the best on validation.

    Ties go to the earlier trial.
    """
    base = base or TrainConfig()
    rng = np.random.default_rng(seed)
    best = None
    trials = []
    for trial in range(n_trials):
        cfg = replace(sample_config(rng, arch, base, space), seed=_trial_seed(seed, trial))
        model = init_model(arch, hidden=cfg.hidden_size, dropout=cfg.dropout_rate,
                           seed=cfg.seed, n_features=data.features.shape[1],
                           window=WINDOW[arch])
        res = train_with_early_stopping(model, data, train_idx, val_idx, cfg)
        trials.append({"trial": trial, "config": cfg.to_dict(), "val_loss": res.best_val_loss,
                       "best_epoch": res.best_epoch, "epochs": len(res.log)})
        log.info("%s trial %d: val=%.4f epochs=%d", arch, trial, res.best_val_loss, len(res.log))
        if best is None or res.best_val_loss < best[1].best_val_loss:
            best = (cfg, res)
    return SearchResult(best[0], best[1], trials)
