# %% [markdown]
# # Turnover regularisation
#
# Add the expected trading cost to the training loss and compare an LSTM
# trained with and without it. The regularised model should trade less and
# hold up better once costs are charged. One fixed configuration is used
# instead of a search, to keep the comparison clean and the runtime short.

# %%
from dataclasses import replace

import numpy as np

from optbt.backtest import cost_sweep, panel_portfolio, turnover_series, walk_forward
from optbt.dataset import build_elements
from optbt.models import init_model
from optbt.panel import build_panel
from optbt.synth import SynthSpec, generate_straddle_panel
from optbt.training import SearchResult, TrainConfig, train_with_early_stopping

# %%
def fixed_search(arch, data, train_idx, val_idx, n_trials=1, seed=0, base=None, **_):
    cfg = replace(base, seed=seed)
    model = init_model(arch, hidden=cfg.hidden_size, dropout=cfg.dropout_rate, seed=seed)
    return SearchResult(cfg, train_with_early_stopping(model, data, train_idx, val_idx, cfg), [])


panel = build_panel(generate_straddle_panel(SynthSpec(n_stocks=20, ar1_rho=-0.2, seed=0)))
data = build_elements(panel)

# %%
for c in (0.0, 50.0):
    cfg = TrainConfig(max_epochs=60, tc_reg_cost_bps=c)
    wf = walk_forward(panel, "lstm", seeds=(0,), base=cfg, data=data, search=fixed_search)
    p = panel_portfolio(panel, wf.positions).restrict(np.flatnonzero(wf.oos_rows))
    k = 0.15 / (p.returns.std() * np.sqrt(252))
    sweep = dict(cost_sweep(p, (0.0, 50.0)))
    print(f"tc_reg={c:4.0f}  turnover at 15% vol={turnover_series(p).mean() * k:.3f}  "
          f"sharpe 0bps={sweep[0.0]:.2f}  50bps={sweep[50.0]:.2f}")
