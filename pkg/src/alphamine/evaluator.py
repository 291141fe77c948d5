"""Evaluate formula ASTs over a panel into date x symbol value matrices.

Operator semantics (all total functions into values-or-missing, NaN = missing):

Elementwise: Abs |x|; Neg -x; S_log1p sign(x)*ln(1+|x|); Inv 1/x with
|x| < 1e-9 missing; Add/Sub/Mul; Div a/b with |b| < 1e-9 missing; Pow
sign(a)*|a|**b with non-finite or |result| > 1e12 missing. Any non-finite
output of any operator becomes missing.

Rolling over the trailing window of w days ending at and including day t,
per stock, oldest day first:
  Ref(x,w) = x(t-w);  ts_delta = x(t) - x(t-w)          (first w days missing)
  ts_sum   = sum(x);  ts_mean = sum(x)/w                 (first w-1 days missing)
  ts_var   = sum((x-mean)^2)/(w-1);  ts_std = sqrt(ts_var)   (w >= 2)
  ts_mad   = sum(|x-mean|)/w
  ts_min / ts_max = running minimum / maximum
  ts_cov(a,b) = sum((a-mean_a)*(b-mean_b))/(w-1)             (w >= 2)
  ts_corr     = ts_cov / (ts_std(a)*ts_std(b)), missing when either
                sample std < 1e-9
Sums accumulate oldest-to-newest so results are reproducible by a plain
scalar loop. A missing operand anywhere in a window makes the output missing.
"""

from __future__ import annotations

import csv
import math

import numpy as np

from ._kernels import log1p64, pow64
from .errors import EvaluationError
from .expr import BinaryOp, Constant, Expr, Feature, RollingOp, UnaryOp
from .panel import PanelData

_TINY = 1e-9
_POW_CAP = 1e12


def _finite_or_nan(x: np.ndarray) -> np.ndarray:
    x[~np.isfinite(x)] = np.nan
    return x


def _unary(op: str, x: np.ndarray) -> np.ndarray:
    with np.errstate(all="ignore"):
        if op == "Abs":
            out = np.abs(x)
        elif op == "Neg":
            out = -x
        elif op == "S_log1p":
            out = np.sign(x) * log1p64(np.abs(x))
        elif op == "Inv":
            out = 1.0 / x
            out[np.abs(x) < _TINY] = np.nan
        else:
            raise EvaluationError(f"unknown unary operator {op!r}")
    return _finite_or_nan(out)


def _binary(op: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    with np.errstate(all="ignore"):
        if op == "Add":
            out = a + b
        elif op == "Sub":
            out = a - b
        elif op == "Mul":
            out = a * b
        elif op == "Div":
            out = a / b
            out[np.abs(b) < _TINY] = np.nan
        elif op == "Pow":
            out = np.sign(a) * pow64(np.abs(a), b)
            out[np.abs(out) > _POW_CAP] = np.nan
            out[np.isnan(a) | np.isnan(b)] = np.nan  # pow(1, nan) is 1 in IEEE
        else:
            raise EvaluationError(f"unknown binary operator {op!r}")
    return _finite_or_nan(out)


def _shifted(x: np.ndarray, w: int, j: int) -> np.ndarray:
    # window position j (0 = oldest) for every output day t >= w-1
    return x[j : x.shape[0] - w + 1 + j]


def _window_sum(x: np.ndarray, w: int) -> np.ndarray:
    acc = _shifted(x, w, 0).copy()
    for j in range(1, w):
        acc += _shifted(x, w, j)
    return acc


def _rolling(op: str, args, w: int) -> np.ndarray:
    T, n = args[0].shape
    out = np.full((T, n), np.nan)
    if op == "Ref":
        if w < T:
            out[w:] = args[0][:-w]
        return out
    if op == "ts_delta":
        if w < T:
            out[w:] = args[0][w:] - args[0][:-w]
        return _finite_or_nan(out)
    if w > T:
        return out

    with np.errstate(all="ignore"):
        if op in ("ts_sum", "ts_mean"):
            acc = _window_sum(args[0], w)
            out[w - 1 :] = acc if op == "ts_sum" else acc / w
        elif op in ("ts_std", "ts_var", "ts_mad"):
            x = args[0]
            mean = _window_sum(x, w) / w
            acc = np.zeros_like(mean)
            for j in range(w):
                d = _shifted(x, w, j) - mean
                acc += np.abs(d) if op == "ts_mad" else d * d
            if op == "ts_mad":
                out[w - 1 :] = acc / w
            elif w < 2:
                pass  # sample statistic undefined
            else:
                var = acc / (w - 1)
                out[w - 1 :] = np.sqrt(var) if op == "ts_std" else var
        elif op in ("ts_min", "ts_max"):
            fn = np.minimum if op == "ts_min" else np.maximum
            acc = _shifted(args[0], w, 0).copy()
            for j in range(1, w):
                fn(acc, _shifted(args[0], w, j), out=acc)
            out[w - 1 :] = acc
        elif op in ("ts_cov", "ts_corr"):
            if w < 2:
                return out
            a, b = args
            mean_a = _window_sum(a, w) / w
            mean_b = _window_sum(b, w) / w
            acc_ab = np.zeros_like(mean_a)
            acc_aa = np.zeros_like(mean_a)
            acc_bb = np.zeros_like(mean_a)
            for j in range(w):
                da = _shifted(a, w, j) - mean_a
                db = _shifted(b, w, j) - mean_b
                acc_ab += da * db
                acc_aa += da * da
                acc_bb += db * db
            cov = acc_ab / (w - 1)
            if op == "ts_cov":
                out[w - 1 :] = cov
            else:
                std_a = np.sqrt(acc_aa / (w - 1))
                std_b = np.sqrt(acc_bb / (w - 1))
                corr = cov / (std_a * std_b)
                corr[(std_a < _TINY) | (std_b < _TINY)] = np.nan
                out[w - 1 :] = corr
        else:
            raise EvaluationError(f"unknown rolling operator {op!r}")
    return _finite_or_nan(out)


def _eval(expr: Expr, panel: PanelData) -> np.ndarray:
    if isinstance(expr, Feature):
        if expr.name not in panel.features:
            raise EvaluationError(f"unknown feature {expr.name!r}")
        return panel.features[expr.name]
    if isinstance(expr, Constant):
        return np.full((panel.n_days, panel.n_symbols), float(expr.value))
    if isinstance(expr, UnaryOp):
        return _unary(expr.op, _eval(expr.child, panel).copy())
    if isinstance(expr, BinaryOp):
        return _binary(expr.op, _eval(expr.left, panel), _eval(expr.right, panel))
    if isinstance(expr, RollingOp):
        return _rolling(expr.op, [_eval(a, panel) for a in expr.args], expr.window)
    raise EvaluationError(f"not an expression node: {expr!r}")


def evaluate(expr: Expr, panel: PanelData) -> np.ndarray:
    """Factor value matrix of shape (n_days, n_symbols); NaN marks missing."""
    return np.array(_eval(expr, panel))


def cross_sectional_zscore(values: np.ndarray) -> np.ndarray:
    """Per-day z-score across stocks (population std over non-missing entries).

    Days whose cross-sectional std is below 1e-9, or with no observations,
    come back all-missing; missing inputs stay missing.
    """
    v = np.asarray(values, dtype=np.float64)
    mask = np.isfinite(v)
    cnt = mask.sum(axis=1)
    safe_cnt = np.maximum(cnt, 1)
    filled = np.where(mask, v, 0.0)
    mean = filled.sum(axis=1) / safe_cnt
    dev = np.where(mask, v - mean[:, None], 0.0)
    std = np.sqrt((dev * dev).sum(axis=1) / safe_cnt)
    with np.errstate(all="ignore"):
        out = (v - mean[:, None]) / std[:, None]
    out[(cnt == 0) | (std < _TINY)] = np.nan
    out[~mask] = np.nan
    return out


def write_factor_csv(values: np.ndarray, panel: PanelData, path) -> None:
    """Debug dump as date,symbol,value rows (empty value = missing)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "symbol", "value"])
        for t, day in enumerate(panel.dates):
            for i, sym in enumerate(panel.symbols):
                x = values[t, i]
                writer.writerow(
                    [day.isoformat(), sym, "" if math.isnan(x) else repr(float(x))]
                )
