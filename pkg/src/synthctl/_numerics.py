"""Small numerical helpers shared across modules."""

from __future__ import annotations

import numpy as np
import scipy.linalg


def fit_log_slope(taus, values) -> float:
    """Least-squares slope of ``log|values|`` against ``taus``.

    Returns ``-inf`` when any value is zero or non-finite (a decayed-to-zero
    or underflowed signal cannot be fitted).
    """
    taus = np.asarray(taus, dtype=float)
    v = np.abs(np.asarray(values, dtype=float))
    if v.size < 2 or np.any(~np.isfinite(v)) or np.any(v == 0):
        return float("-inf")
    slope, _ = np.polyfit(taus, np.log(v), 1)
    return float(slope)


class ScaledLU:
    """LU factorisation of ``Dr @ A @ Dc`` with row/column equilibration.

    ``cond`` is the 2-norm condition number of the equilibrated matrix,
    which is the meaningful figure for badly scaled physical systems.
    """

    def __init__(self, A: np.ndarray):
        A = np.asarray(A, dtype=float)
        cn = np.linalg.norm(A, axis=0)
        cn[cn == 0] = 1.0
        As = A / cn
        rn = np.linalg.norm(As, axis=1)
        rn[rn == 0] = 1.0
        As = As / rn[:, None]
        self.col_scale = 1.0 / cn
        self.row_scale = 1.0 / rn
        self.cond = float(np.linalg.cond(As))
        self._lu = scipy.linalg.lu_factor(As, check_finite=False) if np.isfinite(self.cond) else None

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        rs = self.row_scale if b.ndim == 1 else self.row_scale[:, None]
        y = scipy.linalg.lu_solve(self._lu, b * rs, check_finite=False)
        cs = self.col_scale if y.ndim == 1 else self.col_scale[:, None]
        return y * cs
