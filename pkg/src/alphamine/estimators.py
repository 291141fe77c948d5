"""Scikit-learn style facade over the mining and combination pipelines.

Both classes follow the estimator protocol: plain-attribute __init__,
get_params/set_params via BaseEstimator, fit() setting trailing-underscore
attributes and returning self. X is a PanelData rather than a 2-D array.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .combiner import CombinerConfig, run_combination
from .metrics import FitnessConfig
from .miner import MinerConfig, run_mining
from .panel import DateRange, PanelData
from .rpn import DEFAULT_MAX_LEN, Vocabulary
from .validation import check_fitted, check_panel, check_zoo
from .zoo import FactorZoo


class AlphaMiner(BaseEstimator):
    """Mines a zoo of mutually low-correlation formulaic factors.

    fit(panel, date_range) runs the generative mining loop on the panel's
    labelled training range and exposes the result as ``zoo_``.
    """

    def __init__(
        self,
        target_factors=10,
        library_size=2000,
        epochs_per_round=200,
        predictor_epochs=40,
        batch_size=128,
        latent_dim=64,
        max_len=DEFAULT_MAX_LEN,
        lambda_onehot=0.1,
        lambda_hidden=0.1,
        temperature=1.0,
        learning_rate=1e-3,
        max_rounds=50,
        corr_cap=0.7,
        min_ic=0.03,
        min_icir=0.1,
        seed=0,
        jobs=1,
    ):
        self.target_factors = target_factors
        self.library_size = library_size
        self.epochs_per_round = epochs_per_round
        self.predictor_epochs = predictor_epochs
        self.batch_size = batch_size
        self.latent_dim = latent_dim
        self.max_len = max_len
        self.lambda_onehot = lambda_onehot
        self.lambda_hidden = lambda_hidden
        self.temperature = temperature
        self.learning_rate = learning_rate
        self.max_rounds = max_rounds
        self.corr_cap = corr_cap
        self.min_ic = min_ic
        self.min_icir = min_icir
        self.seed = seed
        self.jobs = jobs

    def _config(self) -> MinerConfig:
        return MinerConfig(
            target_factors=self.target_factors,
            library_size=self.library_size,
            epochs_per_round=self.epochs_per_round,
            predictor_epochs=self.predictor_epochs,
            batch_size=self.batch_size,
            latent_dim=self.latent_dim,
            max_len=self.max_len,
            lambda_onehot=self.lambda_onehot,
            lambda_hidden=self.lambda_hidden,
            temperature=self.temperature,
            learning_rate=self.learning_rate,
            max_rounds=self.max_rounds,
            fitness=FitnessConfig(self.corr_cap, self.min_ic, self.min_icir),
            seed=self.seed,
            jobs=self.jobs,
        )

    def fit(self, panel: PanelData, date_range: DateRange | None = None,
            vocab: Vocabulary | None = None):
        check_panel(panel, require_label=True)
        self.zoo_ = run_mining(panel, date_range, self._config(), vocab)
        return self


class MegaAlphaCombiner(BaseEstimator):
    """Turns a factor zoo into a daily combined prediction signal.

    fit(panel, zoo) caches factor values on the panel; predict(panel,
    date_range) returns the (T, n) score matrix and stores the per-day
    snapshots as ``snapshots_``.
    """

    def __init__(self, max_factors=10, window=120, min_ic=0.01, min_icir=0.05,
                 ridge=1e-4, horizon=21, lag=1):
        self.max_factors = max_factors
        self.window = window
        self.min_ic = min_ic
        self.min_icir = min_icir
        self.ridge = ridge
        self.horizon = horizon
        self.lag = lag

    def _config(self) -> CombinerConfig:
        return CombinerConfig(
            max_factors=self.max_factors,
            window=self.window,
            min_ic=self.min_ic,
            min_icir=self.min_icir,
            ridge=self.ridge,
            horizon=self.horizon,
            lag=self.lag,
        )

    def fit(self, panel: PanelData, zoo: FactorZoo):
        check_panel(panel, require_label=True)
        check_zoo(zoo)
        shape = (panel.n_days, panel.n_symbols)
        if any(e.values is None or e.values.shape != shape for e in zoo.entries):
            zoo = zoo.revalue(panel)
        self.zoo_ = zoo
        return self

    def predict(self, panel: PanelData, date_range: DateRange) -> np.ndarray:
        check_fitted(self, "zoo_")
        check_panel(panel, require_label=True)
        scores, snapshots = run_combination(self.zoo_, panel, date_range, self._config())
        self.snapshots_ = snapshots
        return scores
