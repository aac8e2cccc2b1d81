"""End-to-end options trading research engine.

Delta-neutral straddle panels, rules-based trend benchmarks, neural position
sizing trained on a Sharpe-ratio objective, and walk-forward evaluation with
transaction-cost sweeps.
"""

__version__ = "0.1.0"
