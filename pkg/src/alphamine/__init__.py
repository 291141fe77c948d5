"""alphamine: mine formulaic alpha factors, re-weight them daily, backtest."""

from .backtest import BacktestConfig, BacktestResult, run_backtest
from .combiner import (
    CombinerConfig,
    MegaAlphaSnapshot,
    run_combination,
    run_static_combination,
)
from .errors import AlphamineError
from .estimators import AlphaMiner, MegaAlphaCombiner
from .evaluator import cross_sectional_zscore, evaluate
from .expr import parse_text, to_text
from .metrics import (
    FactorMetrics,
    FitnessConfig,
    daily_ic_series,
    factor_metrics,
    fitness_pi,
    psi,
    qualify,
)
from .miner import MinerConfig, run_mining
from .panel import DateRange, PanelData, compute_label, load_panel, save_panel
from .rpn import (
    RpnProgram,
    Vocabulary,
    from_onehot,
    legality_mask,
    rpn_decode,
    rpn_encode,
    sample_random,
    to_onehot,
)
from .synthetic import make_synthetic
from .zoo import FactorZoo, ZooEntry

__version__ = "0.1.0"

__all__ = [
    "AlphaMiner",
    "AlphamineError",
    "BacktestConfig",
    "BacktestResult",
    "CombinerConfig",
    "DateRange",
    "FactorMetrics",
    "FactorZoo",
    "FitnessConfig",
    "MegaAlphaCombiner",
    "MegaAlphaSnapshot",
    "MinerConfig",
    "PanelData",
    "RpnProgram",
    "Vocabulary",
    "ZooEntry",
    "compute_label",
    "cross_sectional_zscore",
    "daily_ic_series",
    "evaluate",
    "factor_metrics",
    "fitness_pi",
    "from_onehot",
    "legality_mask",
    "load_panel",
    "make_synthetic",
    "parse_text",
    "psi",
    "qualify",
    "rpn_decode",
    "rpn_encode",
    "run_backtest",
    "run_combination",
    "run_mining",
    "run_static_combination",
    "sample_random",
    "save_panel",
    "to_onehot",
    "to_text",
]
