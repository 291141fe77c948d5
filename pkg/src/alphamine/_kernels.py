"""Elementwise transcendental kernels, bit-compatible with scalar libm.

numpy's SIMD-vectorized log1p/pow can differ from the scalar C library by
an ulp, and an ulp amplifies past any tolerance through Inv/Div near their
guards. These kernels evaluate element by element against libm so the
vectorized evaluator reproduces a plain scalar loop bit for bit.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import vectorize

    @vectorize(nopython=True, cache=True)
    def log1p64(x):
        return math.log1p(x)

    @vectorize(nopython=True, cache=True)
    def pow64(a, b):
        return a**b

except ImportError:  # pragma: no cover - slow but identical fallback

    def _pow_scalar(a, b):
        try:
            return a**b
        except (OverflowError, ZeroDivisionError, ValueError):
            return math.inf

    _log1p_ufunc = np.frompyfunc(math.log1p, 1, 1)
    _pow_ufunc = np.frompyfunc(_pow_scalar, 2, 1)

    def log1p64(x):
        return _log1p_ufunc(x).astype(np.float64)

    def pow64(a, b):
        return _pow_ufunc(a, b).astype(np.float64)
