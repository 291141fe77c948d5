"""Input validation helpers shared by the estimator facade and the CLI."""

from __future__ import annotations

from .errors import DataError, NotFittedError
from .panel import PanelData
from .zoo import FactorZoo


def check_panel(panel, require_label: bool = False) -> PanelData:
    if not isinstance(panel, PanelData):
        raise DataError(f"expected a PanelData, got {type(panel).__name__}")
    if require_label and panel.label is None:
        raise DataError("panel has no label; call compute_label or plant one first")
    return panel


def check_zoo(zoo) -> FactorZoo:
    if not isinstance(zoo, FactorZoo):
        raise DataError(f"expected a FactorZoo, got {type(zoo).__name__}")
    if not zoo.entries:
        raise DataError("the factor zoo is empty")
    return zoo


def check_fitted(estimator, attribute: str) -> None:
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first"
        )
