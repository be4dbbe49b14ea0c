"""Successive state shifts that push control-free terms to high exponential order.

After the time change ``t = 1 - exp(-alpha*tau)`` the deviation ``c`` from
the target obeys ``dc/dtau = alpha*E*f(xbar + c, d)`` with ``E = exp(-alpha*tau)``.
Writing ``c = c_K + s(tau)`` with the offset

    s(tau) = -E f(xbar, 0) + sum_{k=2..K} E**k phi_k

and choosing each ``phi_k`` to cancel the ``E**k`` coefficient of the
control-free term leaves a residual of order ``E**(K+1)``.  The coefficient
of ``E**(k-1)`` in ``f(xbar + s(E), 0)`` only involves ``phi_1..phi_(k-1)``,
which gives the recursion ``phi_k = -(1/k) [E**(k-1)] f(xbar + s, 0)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ._numerics import fit_log_slope
from .errors import CascadeDiverged
from .exp_poly import ExpPolyMatrix
from .expr import DualJet, TaylorJet, _bind, evaluate
from .system_model import SystemModel

__all__ = ["ShiftCascade", "TruncatedLinearPart", "compute_phis", "build_PQ",
           "initial_state", "free_term_residual", "residual_slope", "default_depth"]

log = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e2


def default_depth(n: int) -> int:
    return 4 * n - 1


@dataclass(frozen=True)
class ShiftCascade:
    """Result of the shift recursion.

    Attributes
    ----------
    phi : ndarray, shape (K, n)
        Row 0 is ``f(xbar, 0)``; row ``k-1`` (k >= 2) is the stage-k shift.
    offset : ExpPolyMatrix
        The n-by-1 offset ``s(tau)``.
    c0 : ndarray
        Initial value of the shifted state, ``-xbar - s(0)``.
    """

    depth: int
    alpha: float
    xbar: np.ndarray
    phi: np.ndarray
    offset: ExpPolyMatrix
    c0: np.ndarray

    def offset_at(self, tau) -> np.ndarray:
        return self.offset.eval(tau)[:, 0]

    def offset_rate(self, tau) -> np.ndarray:
        return self._rate.eval(tau)[:, 0]

    @property
    def _rate(self):
        rate = self.__dict__.get("_rate_cache")
        if rate is None:
            rate = self.offset.diff()
            object.__setattr__(self, "_rate_cache", rate)
        return rate


def _shift_coefficients(model: SystemModel, xbar, depth: int, params, zero):
    """Offset coefficients ``s[k]`` (k = 0..depth) in the number type of ``zero``."""
    n = model.n
    obj = not isinstance(zero, float)
    dtype = object if obj else float
    s = [[zero] * n for _ in range(depth + 1)]
    u0 = [zero] * model.r
    f0 = model.f_generic(list(xbar), u0, params)
    s[1] = [-v for v in f0]
    for k in range(2, depth + 1):
        order = k - 1
        xj = [TaylorJet(np.array([xbar[i]] + [s[m][i] for m in range(1, k)], dtype=dtype))
              for i in range(n)]
        uj = [TaylorJet.constant(zero, order, dtype) for _ in range(model.r)]
        fj = model.f_jets(xj, uj, params)
        s[k] = [-fj[i][order] / k for i in range(n)]
    return s


def compute_phis(model: SystemModel, xbar, alpha: float, K: int | None = None) -> ShiftCascade:
    """Run the shift recursion to depth ``K`` (default ``4n - 1``)."""
    xbar = np.asarray(xbar, dtype=float).reshape(model.n)
    K = default_depth(model.n) if K is None else int(K)
    if K < 1:
        raise ValueError("shift depth must be at least 1")
    n = model.n
    if not np.any(xbar):
        # f(0, 0) = 0 makes every stage vanish identically
        coeffs = np.zeros((K + 1, n, 1))
        return ShiftCascade(K, float(alpha), xbar, np.zeros((K, n)),
                            ExpPolyMatrix(alpha, coeffs), np.zeros(n))

    s = np.array(_shift_coefficients(model, xbar, K, model.params, 0.0), dtype=float)
    scale = np.linalg.norm(xbar)
    for k in range(2, K + 1):
        size = np.linalg.norm(s[k])
        if not np.isfinite(size) or size > DIVERGENCE_FACTOR * scale:
            raise CascadeDiverged(
                f"stage {k} shift has norm {size:.3g}, target norm {scale:.3g}")
    phi = s[1:].copy()
    phi[0] = -s[1]
    offset = ExpPolyMatrix(alpha, s[:, :, None])
    c0 = -xbar - s.sum(axis=0)
    log.debug("cascade depth %d, |c0| = %.6g", K, np.linalg.norm(c0))
    return ShiftCascade(K, float(alpha), xbar, phi, offset, c0)


def initial_state(cascade: ShiftCascade, xbar=None) -> np.ndarray:
    """``c_K(0) = -xbar - s(0)``, i.e. ``-xbar + f(xbar,0) - phi_2 - ... - phi_K``."""
    xbar = cascade.xbar if xbar is None else np.asarray(xbar, dtype=float)
    return -xbar - cascade.offset_at(0.0)


@dataclass(frozen=True)
class TruncatedLinearPart:
    """Exponential-polynomial coefficients of the linear part of the shifted system.

    ``P`` carries degrees 1..n and ``Q`` degrees 1..2n; the degree-1 blocks
    are ``alpha`` times the Jacobians at ``(xbar, 0)``.
    """

    P: ExpPolyMatrix
    Q: ExpPolyMatrix


def _jacobian_series(model: SystemModel, cascade: ShiftCascade, order: int, wrt: str):
    """Series in E of the Jacobian columns along the curve ``xbar + s(E)``."""
    n, r = model.n, model.r
    s = cascade.offset.coeffs[:, :, 0]
    base = np.zeros((order + 1, n))
    take = min(order + 1, s.shape[0])
    base[:take] = s[:take]
    base[0] += cascade.xbar
    width = n if wrt == "x" else r
    out = np.zeros((order + 1, n, width))
    zero = TaylorJet.constant(0.0, order)
    one = TaylorJet.constant(1.0, order)
    for j in range(width):
        x = [DualJet(TaylorJet(base[:, i]), one if (wrt == "x" and i == j) else zero)
             for i in range(n)]
        u = [DualJet(zero, one if (wrt == "u" and i == j) else zero) for i in range(r)]
        env = _bind(x, u, model.params)
        for i, e in enumerate(model.rhs):
            val = evaluate(e, env)
            if isinstance(val, DualJet):
                out[:, i, j] = val.tangent.coeffs
    return out


def build_PQ(model: SystemModel, cascade: ShiftCascade) -> TruncatedLinearPart:
    """Linear part ``P c + Q d`` truncated at degrees n and 2n respectively."""
    alpha = cascade.alpha
    n = model.n
    jx = _jacobian_series(model, cascade, n - 1, "x")
    ju = _jacobian_series(model, cascade, 2 * n - 1, "u")
    P = np.zeros((n + 1, n, n))
    P[1:] = alpha * jx
    Q = np.zeros((2 * n + 1, n, model.r))
    Q[1:] = alpha * ju
    return TruncatedLinearPart(ExpPolyMatrix(alpha, P), ExpPolyMatrix(alpha, Q))


def free_term_residual(model: SystemModel, xbar, alpha: float, K: int, taus,
                       dps: int | None = None, cascade: ShiftCascade | None = None):
    """Norm of ``alpha*E*f(xbar + s, 0) - ds/dtau`` at each tau.

    With ``dps`` set the shifts and the residual are recomputed in mpmath at
    that many decimal digits; for badly scaled models the order-K
    cancellation lies below double-precision round-off.
    """
    taus = np.asarray(taus, dtype=float)
    if dps is None:
        if cascade is None:
            cascade = compute_phis(model, xbar, alpha, K)
        out = []
        for tau in taus:
            e = np.exp(-alpha * tau)
            s = cascade.offset_at(tau)
            F = alpha * e * model.f(cascade.xbar + s, np.zeros(model.r)) - cascade.offset_rate(tau)
            out.append(np.linalg.norm(F))
        return np.array(out)

    import mpmath
    with mpmath.workdps(dps):
        mp = mpmath.mpf
        params = {k: mp(v) for k, v in model.params.items()}
        xb = [mp(float(v)) for v in np.asarray(xbar, dtype=float)]
        a = mp(alpha)
        s = _shift_coefficients(model, xb, K, params, mp(0))
        out = []
        for tau in taus:
            e = mpmath.exp(-a * mp(float(tau)))
            pos = [xb[i] + sum(s[k][i] * e ** k for k in range(1, K + 1))
                   for i in range(model.n)]
            rate = [sum(-k * a * s[k][i] * e ** k for k in range(1, K + 1))
                    for i in range(model.n)]
            f = model.f_generic(pos, [mp(0)] * model.r, params)
            F = [a * e * f[i] - rate[i] for i in range(model.n)]
            out.append(float(mpmath.sqrt(sum(v * v for v in F))))
        return np.array(out)


def residual_slope(model: SystemModel, xbar, alpha: float, K: int,
                   window=(5.0, 20.0), samples: int = 31, dps: int | None = None) -> float:
    taus = np.linspace(window[0], window[1], samples)
    return fit_log_slope(taus, free_term_residual(model, xbar, alpha, K, taus, dps=dps))
