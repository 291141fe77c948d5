import numpy as np
import pytest
from sklearn.base import clone

from alphamine.errors import DataError, NotFittedError
from alphamine.estimators import AlphaMiner, MegaAlphaCombiner
from alphamine.metrics import daily_ic_series
from alphamine.panel import DateRange
from alphamine.synthetic import make_synthetic
from alphamine.zoo import FactorZoo

from .conftest import build_random_panel


def test_get_set_params_round_trip():
    miner = AlphaMiner(target_factors=3, seed=11)
    params = miner.get_params()
    assert params["target_factors"] == 3 and params["seed"] == 11
    miner.set_params(target_factors=5)
    assert miner.target_factors == 5
    combiner = MegaAlphaCombiner(max_factors=4)
    assert clone(combiner).get_params() == combiner.get_params()


def test_miner_fit_sets_zoo():
    panel = make_synthetic(10, 120, ["ts_mean(volume,5)"], [1.0], 0.3, seed=1)
    miner = AlphaMiner(
        target_factors=1, library_size=200, epochs_per_round=30, predictor_epochs=8,
        batch_size=32, latent_dim=12, max_len=10, max_rounds=4,
        min_ic=0.3, min_icir=0.1, seed=2,
    )
    miner.fit(panel)
    assert isinstance(miner.zoo_, FactorZoo)
    assert len(miner.zoo_) == 1


def test_miner_rejects_unlabelled_panel():
    with pytest.raises(DataError):
        AlphaMiner(target_factors=1).fit(build_random_panel(80, 6, seed=0))


def test_combiner_fit_predict_flow():
    panel = make_synthetic(10, 160, ["ts_mean(volume,5)"], [1.0], 0.0, seed=3)
    zoo = FactorZoo.from_expressions(["ts_mean(volume,5)"], panel)
    combiner = MegaAlphaCombiner(max_factors=2, window=40, horizon=5, lag=1)
    combiner.fit(panel, zoo)
    test_range = DateRange(panel.dates[120], panel.dates[150])
    scores = combiner.predict(panel, test_range)
    assert scores.shape == (panel.n_days, panel.n_symbols)
    assert len(combiner.snapshots_) == 31
    days = panel.day_mask(test_range)
    daily = daily_ic_series(scores, panel.label)[days]
    assert np.nanmean(daily) > 0.9


def test_combiner_predict_before_fit_raises():
    panel = make_synthetic(6, 80, ["ts_mean(volume,5)"], [1.0], 0.0, seed=4)
    with pytest.raises(NotFittedError):
        MegaAlphaCombiner().predict(panel, DateRange(panel.dates[60], panel.dates[70]))


def test_combiner_rejects_empty_zoo():
    panel = make_synthetic(6, 80, ["ts_mean(volume,5)"], [1.0], 0.0, seed=5)
    with pytest.raises(DataError):
        MegaAlphaCombiner().fit(panel, FactorZoo())
