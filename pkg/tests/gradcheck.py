"""Central finite-difference checks shared by the unit and acceptance tests."""

import numpy as np

from optbt.autodiff import gradient
from optbt.models import WINDOW, init_model
from optbt.training import sharpe_loss, turnover_adjusted_loss

H = 1e-5


def relative_error(analytic, numeric, floor=1e-6):
    a, n = np.ravel(analytic), np.ravel(numeric)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def numeric_gradient(f, p, h=H):
    g = np.zeros_like(p.data)
    it = np.nditer(p.data, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = p.data[i]
        p.data[i] = old + h
        up = f()
        p.data[i] = old - h
        down = f()
        p.data[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def random_problem(arch, rng, tc=False):
    """A small random model and batch. Returns (model, loss_fn)."""
    d = int(rng.integers(2, 5))
    hidden = int(rng.integers(2, 5))
    window = int(rng.integers(2, 5)) if arch != "linear" else int(rng.integers(1, 4))
    batch = int(rng.integers(3, 7))
    dropout = float(rng.choice([0.0, 0.3]))
    model = init_model(arch, hidden=hidden, dropout=dropout, seed=int(rng.integers(1 << 30)),
                       n_features=d, window=window)
    x = rng.normal(size=(batch, window, d))
    x_prev = rng.normal(size=(batch, window, d))
    factors = rng.uniform(0.5, 2.0, batch)
    rets = rng.normal(0.0, 0.03, batch)
    c_bps = float(rng.choice([5.0, 50.0]))
    drop_seed = int(rng.integers(1 << 30))

    def positions(window_batch):
        out = model.forward(window_batch, np.random.default_rng(drop_seed) if dropout else None)
        return out[:, -1] if arch == "lstm" else out

    def loss():
        X = positions(x)
        if not tc:
            return sharpe_loss(X, factors, rets)
        return turnover_adjusted_loss(X, factors, rets, positions(x_prev), factors[::-1], c_bps)

    return model, loss


def check(arch, rng, tc=False):
    model, loss = random_problem(arch, rng, tc)
    params = model.parameters()
    grads = gradient(loss(), params)
    worst = 0.0
    for p, g in zip(params, grads):
        num = numeric_gradient(lambda: loss().item(), p)
        worst = max(worst, relative_error(g, num))
    return worst


__all__ = ["check", "numeric_gradient", "relative_error", "random_problem", "WINDOW"]
