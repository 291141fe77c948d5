import numpy as np
import pytest

from alphamine.panel import PanelData
from alphamine.rpn import Vocabulary
from alphamine.synthetic import trading_days


@pytest.fixture(scope="session")
def vocab():
    return Vocabulary.default()


def build_random_panel(n_days, n_symbols, seed=0, missing_frac=0.0):
    """Positive random features, optional missing holes; no label."""
    rng = np.random.default_rng(seed)
    feats = {}
    for name in ("open", "high", "low", "close", "vwap"):
        feats[name] = np.exp(rng.normal(3.0, 0.3, (n_days, n_symbols)))
    feats["volume"] = np.exp(rng.normal(2.0, 1.0, (n_days, n_symbols)))
    if missing_frac > 0:
        for name in feats:
            holes = rng.random((n_days, n_symbols)) < missing_frac
            feats[name] = np.where(holes, np.nan, feats[name])
    return PanelData(
        trading_days(n_days),
        [f"S{i:03d}" for i in range(n_symbols)],
        feats,
    )


@pytest.fixture
def small_panel():
    return build_random_panel(30, 5, seed=42)
