"""Controllable stationary systems ``dx/dt = f(x, u)`` and their rank tests."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, NotControllableAtTarget
from .expr import Expr, Signature, TaylorJet, eval_jet, eval_plain, parse_expr

__all__ = [
    "SystemModel", "LinearizationPair", "KalmanResult", "BlockStructure",
    "jacobian_x", "jacobian_u", "kalman_rank", "rank_S1", "select_chains",
    "EQUILIBRIUM_TOL", "DEFAULT_CONTROL_BOUND", "DEFAULT_STATE_BOUND",
]

log = logging.getLogger(__name__)

EQUILIBRIUM_TOL = 1e-12
DEFAULT_CONTROL_BOUND = 1e3
DEFAULT_STATE_BOUND = 1e6
RANK_RTOL = 1e-9
CHAIN_TOL = 1e-8


@dataclass(frozen=True)
class SystemModel:
    """Stationary system with ``n`` states and ``r <= n`` inputs.

    ``rhs`` holds one parsed expression per state.  ``control_bound`` and
    ``state_bound`` are the norm limits monitored during integration.
    """

    n: int
    r: int
    rhs: tuple
    params: Mapping[str, float] = field(default_factory=dict)
    control_bound: float = DEFAULT_CONTROL_BOUND
    state_bound: float = DEFAULT_STATE_BOUND
    name: str = "system"

    def __post_init__(self):
        if self.n < 1 or self.r < 1:
            raise ConfigError("state and input dimensions must be positive")
        if self.r > self.n:
            raise ConfigError(f"input dimension r={self.r} exceeds n={self.n}")
        if len(self.rhs) != self.n:
            raise ConfigError(f"expected {self.n} right-hand sides, got {len(self.rhs)}")
        if not (self.control_bound > 0 and self.state_bound > 0):
            raise ConfigError("bounds must be positive")
        object.__setattr__(self, "rhs", tuple(self.rhs))
        object.__setattr__(self, "params", dict(self.params))
        f0 = self.f(np.zeros(self.n), np.zeros(self.r))
        if np.max(np.abs(f0)) > EQUILIBRIUM_TOL:
            raise ConfigError(f"origin is not an equilibrium: f(0,0) = {f0.tolist()}")

    @classmethod
    def from_strings(cls, rhs: Sequence[str], r: int, params=None, **kwargs):
        params = dict(params or {})
        sig = Signature(len(rhs), r, frozenset(params))
        exprs = tuple(parse_expr(text, sig) for text in rhs)
        return cls(len(rhs), r, exprs, params, **kwargs)

    @property
    def signature(self) -> Signature:
        return Signature(self.n, self.r, frozenset(self.params))

    def f(self, x, u) -> np.ndarray:
        return np.array([eval_plain(e, x, u, self.params) for e in self.rhs], dtype=float)

    def f_generic(self, x, u, params=None) -> list:
        """Evaluate without coercing to float (jets, mpmath values)."""
        p = self.params if params is None else params
        return [eval_plain(e, x, u, p) for e in self.rhs]

    def f_jets(self, x: Sequence[TaylorJet], u: Sequence[TaylorJet], params=None):
        p = self.params if params is None else params
        return [eval_jet(e, x, u, p) for e in self.rhs]

    def linearization(self, x=None) -> "LinearizationPair":
        x = np.zeros(self.n) if x is None else np.asarray(x, dtype=float)
        u = np.zeros(self.r)
        return LinearizationPair(jacobian_x(self, x, u), jacobian_u(self, x, u))


@dataclass(frozen=True)
class LinearizationPair:
    A: np.ndarray
    B: np.ndarray


def _jacobian(m: SystemModel, x, u, wrt: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    width = m.n if wrt == "x" else m.r
    J = np.empty((m.n, width))
    for j in range(width):
        xj = [TaylorJet.variable(v, 1, slope=float(wrt == "x" and i == j))
              for i, v in enumerate(x)]
        uj = [TaylorJet.variable(v, 1, slope=float(wrt == "u" and i == j))
              for i, v in enumerate(u)]
        J[:, j] = [jet[1] for jet in m.f_jets(xj, uj)]
    return J


def jacobian_x(m: SystemModel, x, u) -> np.ndarray:
    """``df/dx`` at ``(x, u)`` from first-order jets along coordinate axes."""
    return _jacobian(m, x, u, "x")


def jacobian_u(m: SystemModel, x, u) -> np.ndarray:
    return _jacobian(m, x, u, "u")


@dataclass(frozen=True)
class KalmanResult:
    rank: int
    S: np.ndarray
    singular_values: np.ndarray


def kalman_rank(A, B, rtol: float = RANK_RTOL) -> KalmanResult:
    """Numerical rank of ``S = [B, AB, ..., A^(n-1) B]``.

    Columns are normalised before the SVD because physical models mix
    wildly different scales; zero columns are left as zeros.  A singular
    value counts toward the rank when it exceeds ``rtol * sigma_max``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    S = np.hstack(blocks)
    norms = np.linalg.norm(S, axis=0)
    Sn = S / np.where(norms > 0, norms, 1.0)
    sv = np.linalg.svd(Sn, compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return KalmanResult(0, S, sv)
    return KalmanResult(int(np.sum(sv > rtol * sv[0])), S, sv)


@dataclass(frozen=True)
class BlockStructure:
    """Outcome of a greedy chain selection."""

    rank: int
    block_sizes: tuple
    basis: np.ndarray  # accepted normalised vectors, one per column


def select_chains(chains, n: int, tol: float = CHAIN_TOL) -> BlockStructure:
    """Greedy block-ordered column selection.

    ``chains[j]`` is an iterable yielding the candidate vectors for input
    ``j`` in order.  A candidate is accepted when its normalised residual
    against the span of already accepted vectors exceeds ``tol``; the first
    rejection ends that chain.
    """
    Q = np.zeros((n, 0))
    kept = []
    sizes = []
    for chain in chains:
        k = 0
        for v in chain:
            if len(kept) == n:
                break
            v = np.asarray(v, dtype=float)
            nv = np.linalg.norm(v)
            if nv == 0:
                break
            w = v / nv
            # two passes of Gram-Schmidt for stability
            for _ in range(2):
                w = w - Q @ (Q.T @ w)
            res = np.linalg.norm(w)
            if res <= tol:
                break
            Q = np.hstack([Q, (w / res)[:, None]])
            kept.append(v / nv)
            k += 1
        sizes.append(k)
    basis = np.array(kept).T if kept else np.zeros((n, 0))
    return BlockStructure(len(kept), tuple(sizes), basis)


def _kalman_chain(P1, q, n):
    v = q
    for _ in range(n):
        yield v
        v = P1 @ v


def rank_S1(m: SystemModel, xbar) -> BlockStructure:
    """Block structure of ``[q_j, P1 q_j, ...]`` with ``P1, Q1`` the Jacobians at ``(xbar, 0)``.

    Raises
    ------
    NotControllableAtTarget
        When the accepted columns do not span the state space.
    """
    xbar = np.asarray(xbar, dtype=float)
    if np.linalg.norm(xbar) >= m.state_bound:
        raise ConfigError("target lies outside the state bound")
    u0 = np.zeros(m.r)
    P1 = jacobian_x(m, xbar, u0)
    Q1 = jacobian_u(m, xbar, u0)
    res = select_chains([_kalman_chain(P1, Q1[:, j], m.n) for j in range(m.r)], m.n)
    log.debug("S1 block sizes at target: %s", res.block_sizes)
    if res.rank < m.n:
        err = NotControllableAtTarget(
            f"rank S1 = {res.rank} < n = {m.n} (block sizes {res.block_sizes})")
        err.result = res
        raise err
    return res
