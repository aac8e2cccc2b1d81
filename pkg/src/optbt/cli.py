"""``optbt`` command line: ingest, synth, backtest, train, sweep, report.

Exit codes: 0 success, 2 bad configuration, 3 bad or missing data.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .backtest import (
    BLOCK_YEARS,
    DEFAULT_COST_GRID,
    SIGMA_TGT,
    compute_metrics,
    cost_sweep,
    panel_portfolio,
    rescale_to_target_vol,
    strategy_portfolio,
    walk_forward,
)
from .errors import ConfigError, DataError, MissingInput
from .market_data import form_straddles, ingest_csv
from .models import ARCHITECTURES
from .panel import Panel, build_panel
from .report import (
    atomic_write,
    load_portfolio,
    portfolio_summary,
    save_portfolio,
    stamp,
    to_json,
    write_cumulative_csv,
    write_feature_csv,
    write_returns_csv,
    write_sweep_csv,
    write_training_log,
)
from .strategies import STRATEGY_NAMES
from .synth import SynthSpec, generate_option_chain_csv
from .training import MAX_EPOCHS, PATIENCE, TrainConfig

log = logging.getLogger("optbt")

EXIT_CONFIG = 2
EXIT_DATA = 3


def thread_cap() -> int:
    raw = os.environ.get("OPTBT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"OPTBT_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"OPTBT_THREADS must be a positive integer, got {raw!r}")
    return n


def _float_list(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"--costs expects comma-separated numbers, got {text!r}") from None
    if not vals or any(v < 0 or not np.isfinite(v) for v in vals):
        raise ConfigError(f"--costs must be non-empty and non-negative, got {text!r}")
    return vals


def _seed_list(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"--seeds expects comma-separated integers, got {text!r}") from None
    if not seeds:
        raise ConfigError("--seeds must name at least one seed")
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"--seeds contains duplicates: {text!r}")
    return seeds


def load_panel(data_dir) -> Panel:
    data_dir = Path(data_dir)
    opt, stk = data_dir / "options.csv", data_dir / "stocks.csv"
    for p in (opt, stk):
        if not p.is_file():
            raise MissingInput(f"{p}: file not found")
    quotes, stocks = ingest_csv(opt, stk)
    straddles = form_straddles(quotes, stocks)
    if not straddles:
        raise DataError(f"{data_dir}: no straddle could be formed from the option chain")
    return build_panel(straddles)


def _write_series(out: Path, name: str, portfolio):
    write_returns_csv(out / f"returns_{name}.csv", portfolio.dates, portfolio.returns)
    write_cumulative_csv(out / f"cumulative_{name}.csv", portfolio.dates, portfolio.returns)


# ---------------------------------------------------------------------------
# subcommands

def cmd_ingest(args) -> int:
    panel = load_panel(args.data_dir)
    out = Path(args.out)
    rows = ["underlying,formation_date,expiry,strike,w_call,w_put,delta0_call,delta0_put,"
            "n_days,hold_return"]
    for s in panel.streams:
        for st in s.straddles:
            d = st.definition
            rows.append(",".join([d.underlying, d.formation_date.isoformat(), d.expiry.isoformat(),
                                  repr(d.strike), repr(d.w_call_norm), repr(d.w_put_norm),
                                  repr(d.delta0_call), repr(d.delta0_put), str(len(st)),
                                  repr(st.hold_return)]))
    atomic_write(out / "straddles.csv", "\n".join(rows) + "\n")
    write_feature_csv(out / "features.csv", panel)
    print(f"{sum(len(s.straddles) for s in panel.streams)} straddles over "
          f"{len(panel.underlyings)} underlyings -> {out}")
    return 0


def cmd_synth(args) -> int:
    try:
        spec = SynthSpec(n_stocks=args.stocks, n_months=args.months, ar1_rho=args.rho,
                         daily_vol=args.daily_vol, seed=args.seed,
                         strike_grid_spacing=args.strike_spacing,
                         half_spread=args.half_spread, call_delta=args.call_delta)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    opt, stk = generate_option_chain_csv(spec, args.out)
    print(f"wrote {opt} and {stk}")
    return 0


def cmd_backtest(args) -> int:
    if args.strategy not in STRATEGY_NAMES:
        raise ConfigError(f"unknown strategy {args.strategy!r}; valid: {', '.join(STRATEGY_NAMES)}")
    costs = _float_list(args.costs)
    panel = load_panel(args.data_dir)
    portfolio = strategy_portfolio(panel, args.strategy, args.sigma_tgt)
    out = Path(args.out)
    summary = portfolio_summary(portfolio, costs, args.sigma_tgt)
    config = {"command": "backtest", "strategy": args.strategy,
              "data_dir": str(args.data_dir), "sigma_tgt": args.sigma_tgt, "cost_grid": costs}
    save_portfolio(out / "portfolio.npz", portfolio)
    _write_series(out, args.strategy, portfolio)
    write_sweep_csv(out / "cost_sweep.csv", [(r["cost_bps"], r["sharpe"])
                                             for r in summary["cost_sweep"]])
    atomic_write(out / "report.json", to_json(stamp({"config": config, "seed": None,
                                                     "strategies": {args.strategy: summary}})))
    _print_metrics(args.strategy, summary)
    return 0


def cmd_train(args) -> int:
    if args.model not in ARCHITECTURES:
        raise ConfigError(f"unknown model {args.model!r}; valid: {', '.join(ARCHITECTURES)}")
    seeds = _seed_list(args.seeds)
    costs = _float_list(args.costs)
    if args.trials < 1:
        raise ConfigError("--trials must be >= 1")
    if args.tc_reg < 0:
        raise ConfigError("--tc-reg must be >= 0")
    base = TrainConfig(tc_reg_cost_bps=args.tc_reg, max_epochs=args.max_epochs,
                       patience=args.patience)
    panel = load_panel(args.data_dir)
    wf = walk_forward(panel, args.model, seeds=seeds, n_trials=args.trials, base=base,
                      block_years=args.block_years, sigma_tgt=args.sigma_tgt,
                      workers=thread_cap())
    out = Path(args.out)
    rows = np.nonzero(wf.oos_rows)[0]
    portfolio = panel_portfolio(panel, wf.positions, args.sigma_tgt).restrict(rows)
    summary = portfolio_summary(portfolio, costs, args.sigma_tgt)

    per_seed = {}
    for s in seeds:
        p = panel_portfolio(panel, wf.seed_positions[s], args.sigma_tgt).restrict(rows)
        per_seed[str(s)] = {"metrics_raw": compute_metrics(p.returns).to_dict(),
                            "metrics_scaled": compute_metrics(
                                rescale_to_target_vol(p.returns, args.sigma_tgt)).to_dict()}

    windows = []
    for w, win in enumerate(wf.windows):
        entry = {"train_start": win.train_start, "train_end": win.train_end,
                 "test_start": win.test_start, "test_end": win.test_end, "seeds": {}}
        for s in seeds:
            res = wf.searches[(w, s)]
            tag = f"window{w}_seed{s}"
            best = {**res.config.to_dict(), "search_seed": s}
            ckpt = res.result.model.to_dict(extra={"train_config": res.config.to_dict()})
            atomic_write(out / "checkpoints" / f"{tag}.json", json.dumps(ckpt, sort_keys=True))
            atomic_write(out / "best_config" / f"{tag}.json", to_json(best))
            write_training_log(out / "logs" / f"{tag}.csv", res.result.log)
            entry["seeds"][str(s)] = {"best_config": best,
                                      "best_val_loss": res.result.best_val_loss,
                                      "best_epoch": res.result.best_epoch,
                                      "trials": res.trials}
        windows.append(entry)

    config = {"command": "train", "model": args.model, "seeds": seeds, "trials": args.trials,
              "tc_reg_cost_bps": args.tc_reg, "max_epochs": args.max_epochs,
              "patience": args.patience, "block_years": args.block_years,
              "data_dir": str(args.data_dir), "sigma_tgt": args.sigma_tgt, "cost_grid": costs}
    name = args.model if args.tc_reg == 0 else f"{args.model}_tcreg{args.tc_reg:g}"
    save_portfolio(out / "portfolio.npz", portfolio)
    _write_series(out, name, portfolio)
    write_sweep_csv(out / "cost_sweep.csv", [(r["cost_bps"], r["sharpe"])
                                             for r in summary["cost_sweep"]])
    doc = {"config": config, "seed": list(seeds), "strategies": {name: summary},
           "per_seed": per_seed, "windows": windows}
    atomic_write(out / "report.json", to_json(stamp(doc)))
    _print_metrics(name, summary)
    return 0


def cmd_sweep(args) -> int:
    run = Path(args.run)
    path = run / "portfolio.npz"
    if not path.is_file():
        raise MissingInput(f"{path}: file not found (run backtest or train first)")
    costs = _float_list(args.costs)
    sweep = cost_sweep(load_portfolio(path), costs, args.sigma_tgt)
    write_sweep_csv(run / "cost_sweep.csv", sweep)
    for c, s in sweep:
        print(f"{c:8.1f} bps  sharpe {s:8.4f}")
    return 0


_METRIC_ORDER = ("expected_return", "volatility", "downside_deviation", "mdd", "sharpe",
                 "sortino", "calmar", "hit_rate", "avg_profit_over_avg_loss")


def _fmt(v) -> str:
    return "undefined" if v is None else f"{v:.4f}"


def _print_metrics(name: str, summary: dict):
    print(f"{name}: {summary['start']} .. {summary['end']} ({summary['n_days']} days)")
    for key in ("metrics_raw", "metrics_scaled"):
        m = summary[key]
        print(f"  {key:15s} " + "  ".join(f"{k}={_fmt(m[k])}" for k in _METRIC_ORDER))


def cmd_report(args) -> int:
    run = Path(args.run)
    path = run / "report.json"
    if not path.is_file():
        raise MissingInput(f"{path}: file not found")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: not valid JSON ({e})") from None
    lines = ["strategy,series," + ",".join(_METRIC_ORDER)]
    for name, summary in sorted(doc.get("strategies", {}).items()):
        _print_metrics(name, summary)
        for key in ("metrics_raw", "metrics_scaled"):
            m = summary[key]
            lines.append(",".join([name, key.split("_")[1]] +
                                  ["" if m[k] is None else repr(m[k]) for k in _METRIC_ORDER]))
    atomic_write(run / "metrics.csv", "\n".join(lines) + "\n")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="optbt", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"optbt {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def data_flags(sp):
        sp.add_argument("--data-dir", default="./data",
                        help="directory holding options.csv and stocks.csv")
        sp.add_argument("--out", required=True, help="run output directory")
        sp.add_argument("--sigma-tgt", type=float, default=SIGMA_TGT)
        sp.add_argument("--costs", default=",".join(f"{c:g}" for c in DEFAULT_COST_GRID),
                        help="cost grid in bps, comma separated")

    sp = sub.add_parser("ingest", help="form straddles and export the feature panel")
    sp.add_argument("--data-dir", default="./data")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("synth", help="write a synthetic option chain")
    sp.add_argument("--stocks", type=int, default=20)
    sp.add_argument("--months", type=int, default=119)
    sp.add_argument("--rho", type=float, default=0.0)
    sp.add_argument("--daily-vol", type=float, default=0.04)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--strike-spacing", type=float, default=1.0)
    sp.add_argument("--half-spread", type=float, default=0.01)
    sp.add_argument("--call-delta", type=float, default=0.5)
    sp.add_argument("--out", default="./data")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("backtest", help="run a rules-based strategy")
    sp.add_argument("--strategy", required=True, help=f"one of: {', '.join(STRATEGY_NAMES)}")
    data_flags(sp)
    sp.set_defaults(func=cmd_backtest)

    sp = sub.add_parser("train", help="walk-forward training of a position-sizing model")
    sp.add_argument("--model", required=True, help=f"one of: {', '.join(ARCHITECTURES)}")
    sp.add_argument("--seeds", default="0")
    sp.add_argument("--tc-reg", type=float, default=0.0,
                    help="turnover penalty in bps used during training (0 disables)")
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--max-epochs", type=int, default=MAX_EPOCHS)
    sp.add_argument("--patience", type=int, default=PATIENCE)
    sp.add_argument("--block-years", type=int, default=BLOCK_YEARS)
    data_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sweep", help="Sharpe against transaction cost for a finished run")
    sp.add_argument("--run", required=True)
    sp.add_argument("--costs", default=",".join(f"{c:g}" for c in DEFAULT_COST_GRID))
    sp.add_argument("--sigma-tgt", type=float, default=SIGMA_TGT)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("report", help="print metrics of a finished run and write metrics.csv")
    sp.add_argument("--run", required=True)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"optbt: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"optbt: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"optbt: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
