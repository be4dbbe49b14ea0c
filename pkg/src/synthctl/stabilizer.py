"""Stabilisation of the truncated linear time-varying system ``c' = P c + Q d``.

The controllability columns ``L_1 = q_j``, ``L_(i+1) = P L_i - L_i'`` are
exponential polynomials.  Each one carries a factor ``E**i`` at leading
order, so the raw matrix ``S2`` of accepted columns is extremely badly
scaled for small ``E``.  We therefore factor ``S2 = G U`` where ``U`` is unit
upper triangular over exponential polynomials and the columns of ``G`` have
pairwise independent leading coefficients.  All numerical solves go
through ``G`` with row and column equilibration; ``U`` is inverted exactly.

In the coordinates ``c = S2 y`` each input block becomes a companion chain
driven by one scalar ``psi``, which is stabilised by pole placement.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
import numpy as np

from ._numerics import ScaledLU
from .errors import DuplicatePoles, PoleConditionViolated, RankDeficient, SingularAtTau
from .exp_poly import ExpPolyMatrix

__all__ = ["S2Structure", "build_S2", "rank_check_S2", "solve_phi_jets",
           "CompanionReduction", "companion_reduce", "place_poles", "pole_bound",
           "FeedbackLaw", "build_feedback", "default_poles"]

log = logging.getLogger(__name__)

LEAD_TOL = 1e-8       # Gram-Schmidt threshold on normalised leading vectors
SPAN_RTOL = 1e-6      # a coefficient counts as "in span" below this relative residual
CANCEL_RTOL = 1e-13   # coefficients cancelled below this are treated as exact zeros
MAX_COND = 1e12


@dataclass(frozen=True)
class S2Structure:
    """Accepted controllability columns and their reduced factorisation.

    Attributes
    ----------
    block_sizes : tuple of int
        ``k_j`` per input; columns are ordered block by block.
    labels : tuple of (int, int)
        ``(j, i)`` for each accepted column ``L_i^j`` (0-based input index).
    S2, G, U, Uinv : ExpPolyMatrix
        ``S2 = G @ U`` with ``U`` unit upper triangular.
    lead_degrees : tuple of int
        Degree of the leading coefficient of each column of ``G``.
    leads : ndarray
        Leading coefficient vectors of ``G`` as columns.
    next_columns : ExpPolyMatrix
        ``L_(k_j+1)^j`` for each input (zero column when ``k_j = 0``).
    """

    alpha: float
    n: int
    r: int
    block_sizes: tuple
    labels: tuple
    S2: ExpPolyMatrix
    G: ExpPolyMatrix
    U: ExpPolyMatrix
    Uinv: ExpPolyMatrix
    lead_degrees: tuple
    leads: np.ndarray
    next_columns: ExpPolyMatrix
    complete: bool = True
    P: ExpPolyMatrix | None = None
    Q: ExpPolyMatrix | None = None

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.block_sizes)]).astype(int)


def _chain(P: ExpPolyMatrix, q: ExpPolyMatrix, count: int):
    out = [q]
    for _ in range(count - 1):
        v = out[-1]
        out.append(P @ v - v.diff())
    return out


def _pad(c: np.ndarray, size: int) -> np.ndarray:
    if c.shape[0] >= size:
        return c
    return np.concatenate([c, np.zeros((size - c.shape[0], *c.shape[1:]))])


def _reduce(v: np.ndarray, accepted: list, upto: int):
    """Eliminate the low-degree coefficients of ``v`` against accepted columns.

    ``accepted`` holds ``(G_m, d_m, lead_m)``.  Returns the reduced column, the
    multipliers ``{m: poly}`` with ``v_in = v_out + sum_m poly_m * G_m``, and
    the degree of the first coefficient that is not in the span of the
    admissible leading vectors (``None`` if every degree up to ``upto`` is).
    """
    v = v.copy()
    mult = {}
    ref = np.linalg.norm(v, axis=1)
    for d in range(upto + 1):
        if d >= v.shape[0]:
            break
        c = v[d]
        nc = np.linalg.norm(c)
        if nc == 0:
            continue
        if nc <= CANCEL_RTOL * ref[d]:
            v[d] = 0.0
            continue
        idx = [m for m, (_, dm, _) in enumerate(accepted) if dm <= d]
        if idx:
            Lm = np.column_stack([accepted[m][2] for m in idx])
            a, *_ = np.linalg.lstsq(Lm, c, rcond=None)
            res = np.linalg.norm(c - Lm @ a)
        else:
            a, res = np.zeros(0), nc
        if res > SPAN_RTOL * nc:
            return v, mult, d
        for m, coef in zip(idx, a):
            if coef == 0:
                continue
            Gm, dm, _ = accepted[m]
            shift = d - dm
            size = max(v.shape[0], Gm.shape[0] + shift)
            v = _pad(v, size)
            v[shift: shift + Gm.shape[0]] -= coef * Gm
            p = mult.setdefault(m, np.zeros(0))
            if p.size <= shift:
                p = np.concatenate([p, np.zeros(shift + 1 - p.size)])
            p[shift] += coef
            mult[m] = p
        v[d] = 0.0
    return v, mult, None


def _independent(lead: np.ndarray, basis: np.ndarray) -> bool:
    w = lead / np.linalg.norm(lead)
    for _ in range(2):
        w = w - basis @ (basis.T @ w)
    return np.linalg.norm(w) > LEAD_TOL


def build_S2(P: ExpPolyMatrix, Q: ExpPolyMatrix, strict: bool = True) -> S2Structure:
    """Greedy block-ordered selection of controllability columns.

    Each candidate ``L_i^j`` is reduced against the columns accepted so far
    (exponential-polynomial combinations that cancel its low-degree
    coefficients).  It is accepted when the first surviving coefficient is
    independent of all accepted leading vectors; the first rejection ends
    that input's chain.

    Raises
    ------
    RankDeficient
        When the accepted columns number fewer than ``n`` and ``strict``.
    """
    if P.alpha != Q.alpha:
        from .errors import AlphaMismatch
        raise AlphaMismatch("P and Q must share alpha")
    n, r = Q.shape
    if P.shape != (n, n):
        from .errors import ShapeMismatch
        raise ShapeMismatch(f"P has shape {P.shape}, expected {(n, n)}")
    alpha = P.alpha

    accepted = []   # (G coefficients (D+1, n), lead degree, lead vector)
    raw = []        # raw L columns as (D+1, n)
    labels = []
    mults = []      # multipliers per accepted column
    sizes = []
    basis = np.zeros((n, 0))
    next_cols = []
    for j in range(r):
        chain = _chain(P, Q.column(j), n + 1)
        k = 0
        nxt = None
        for i, col in enumerate(chain, start=1):
            v = col.coeffs[:, :, 0]
            if len(accepted) == n:
                nxt = v
                break
            red, mult, d = _reduce(v, accepted, i)
            if d is None or not _independent(red[d], basis):
                nxt = v
                break
            lead = red[d]
            w = lead / np.linalg.norm(lead)
            for _ in range(2):
                w = w - basis @ (basis.T @ w)
            basis = np.column_stack([basis, w / np.linalg.norm(w)])
            accepted.append((red, d, lead))
            raw.append(v)
            labels.append((j, i))
            mults.append(mult)
            k += 1
        next_cols.append(nxt if k else np.zeros((1, n)))
        sizes.append(k)
        if len(accepted) == n and j < r - 1:
            for _ in range(j + 1, r):
                sizes.append(0)
                next_cols.append(np.zeros((1, n)))
            break

    rank = len(accepted)
    log.debug("S2 block sizes %s, lead degrees %s", sizes, [a[1] for a in accepted])
    if rank < n and strict:
        raise RankDeficient(f"accepted {rank} of {n} columns (block sizes {tuple(sizes)})")

    width = max(rank, 1)
    D = max([g.shape[0] for g, _, _ in accepted] + [v.shape[0] for v in raw] + [1])
    Gc = np.zeros((D, n, width))
    Sc = np.zeros((D, n, width))
    for m, (g, _, _) in enumerate(accepted):
        Gc[: g.shape[0], :, m] = g
        Sc[: raw[m].shape[0], :, m] = raw[m]
    Du = max([p.size for mult in mults for p in mult.values()] + [1])
    Uc = np.zeros((Du, width, width))
    for m in range(rank):
        Uc[0, m, m] = 1.0
        for src, p in mults[m].items():
            Uc[: p.size, src, m] = p
    U = ExpPolyMatrix(alpha, Uc)
    # U = I + N with N strictly upper triangular, so the Neumann series terminates
    N = U - ExpPolyMatrix.constant(alpha, np.eye(width))
    Uinv = ExpPolyMatrix.constant(alpha, np.eye(width))
    term = Uinv
    for _ in range(width - 1):
        term = -(term @ N)
        Uinv = Uinv + term
    Dn = max(c.shape[0] for c in next_cols)
    Nc = np.zeros((Dn, n, len(next_cols)))
    for j, c in enumerate(next_cols):
        Nc[: c.shape[0], :, j] = c
    leads = np.column_stack([a[2] for a in accepted]) if accepted else np.zeros((n, 0))
    return S2Structure(alpha, n, len(sizes), tuple(sizes), tuple(labels),
                       ExpPolyMatrix(alpha, Sc), ExpPolyMatrix(alpha, Gc), U, Uinv,
                       tuple(a[1] for a in accepted), leads, ExpPolyMatrix(alpha, Nc),
                       complete=rank == n, P=P, Q=Q)


def rank_check_S2(s: S2Structure, rtol: float = 1e-9) -> dict:
    """Rank and condition number of the degree-normalised limit matrix.

    Columns are the leading coefficient vectors (the ``E -> 0`` limit of each
    column divided by its leading power), normalised to unit length.
    """
    if s.leads.shape[1] == 0:
        return {"ok": False, "rank": 0, "condition": float("inf")}
    L = s.leads / np.linalg.norm(s.leads, axis=0)
    sv = np.linalg.svd(L, compute_uv=False)
    rank = int(np.sum(sv > rtol * sv[0]))
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 and L.shape[1] == s.n else float("inf")
    return {"ok": rank == s.n and s.complete, "rank": rank, "condition": cond}


def _jet_products(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Cauchy product of matrix jets ``A[m]``, ``B[m]`` truncated at the shorter order."""
    order = min(A.shape[0], B.shape[0]) - 1
    out = np.zeros((order + 1, A.shape[1], B.shape[2]))
    for m in range(order + 1):
        for j in range(m + 1):
            out[m] += A[j] @ B[m - j]
    return out


def solve_phi_jets(s: S2Structure, tau: float, order: int):
    """Taylor jets in tau of ``phi`` solving ``S2 phi = -L_next``.

    Returns an array of shape ``(order + 1, n, r)``: ``out[m][:, j]`` is
    ``(d/dtau)^m phi^(j) / m!`` at ``tau``.

    Raises
    ------
    SingularAtTau
        When the equilibrated ``G(tau)`` has condition number above 1e12.
    """
    G = s.G.jet(tau, order)
    rhs = -s.next_columns.jet(tau, order)
    lu = ScaledLU(G[0])
    if not lu.cond < MAX_COND:
        raise SingularAtTau(f"S2 solve at tau={tau:g} has condition {lu.cond:.3g}")
    w = np.zeros_like(rhs)
    for m in range(order + 1):
        acc = rhs[m].copy()
        for j in range(1, m + 1):
            acc -= G[j] @ w[m - j]
        w[m] = lu.solve(acc)
    return _jet_products(s.Uinv.jet(tau, order), w)


def _jet_diff(a: np.ndarray) -> np.ndarray:
    """Jet of the derivative; loses one order."""
    m = np.arange(1, a.shape[0])
    return a[1:] * m.reshape(-1, *([1] * (a.ndim - 1)))


@dataclass(frozen=True)
class CompanionReduction:
    """Companion form of one input block at a fixed tau.

    ``T`` maps ``(psi^(k-1), ..., psi)`` to the block coordinates ``y``;
    ``eps[b]`` is the coefficient of ``psi^(b)`` in
    ``d = psi^(k) + sum_b eps[b] psi^(b)``.
    """

    T: np.ndarray
    eps: np.ndarray
    T_rate: np.ndarray | None = None


def companion_reduce(phi_jets: np.ndarray) -> CompanionReduction:
    """Build ``T`` and the ``eps`` coefficients from jets of one block's ``phi``.

    ``phi_jets[m, i]`` is the m-th Taylor coefficient of ``phi^(i+1)``.  The
    recursion is ``y_k = psi``, ``y_(i-1) = y_i' + phi^i psi`` and
    ``d = y_1' + phi^1 psi``.
    """
    k = phi_jets.shape[1]
    size = phi_jets.shape[0]
    # y as coefficients over psi^(b), b = 0..k, each coefficient a jet
    y = np.zeros((size, k + 1))
    y[0, 0] = 1.0
    rows = {k: y}
    for i in range(k, 0, -1):
        cur = rows[i]
        d = np.zeros((cur.shape[0] - 1, k + 1))
        dc = _jet_diff(cur)
        d[:, :] += dc
        d[:, 1:] += cur[: dc.shape[0], :-1]
        d[:, 0] += phi_jets[: d.shape[0], i - 1]
        rows[i - 1] = d
    T = np.zeros((k, k))
    T_rate = np.zeros((k, k))
    for i in range(1, k + 1):
        # basis ordering (psi^(k-1), ..., psi)
        T[i - 1] = rows[i][0, k - 1::-1]
        if rows[i].shape[0] > 1:
            T_rate[i - 1] = rows[i][1, k - 1::-1]
    eps = rows[0][0, :k]
    if abs(rows[0][0, k] - 1.0) > 1e-12:
        raise ArithmeticError("companion reduction lost the leading coefficient")
    return CompanionReduction(T, eps, T_rate)


def place_poles(poles) -> np.ndarray:
    """Characteristic coefficients ``(gamma_(k-1), ..., gamma_0)`` for real poles."""
    p = np.asarray(poles, dtype=float).reshape(-1)
    if p.size == 0:
        return np.zeros(0)
    if len(set(p.tolist())) != p.size:
        raise DuplicatePoles(f"poles must be distinct, got {p.tolist()}")
    if np.any(p >= 0):
        from .errors import ConfigError
        raise ConfigError(f"poles must be negative, got {p.tolist()}")
    return np.real(np.poly(p))[1:]


def pole_bound(n: int, alpha: float) -> float:
    """Upper bound ``-(2n+1)*alpha - 1`` that the convergence proof requires of every pole."""
    return -(2 * n + 1) * alpha - 1.0


def default_poles(n: int) -> tuple:
    return tuple(-float(i) for i in range(1, n + 1))


@dataclass(frozen=True)
class ChainFrame:
    """Everything the feedback needs at one tau.

    In chain coordinates ``y = S2^-1 c`` the truncated linear system reads
    ``y' = A y + E d`` with ``A`` block-companion (shift columns plus
    ``-phi``) and ``E`` selecting the first coordinate of each block; the
    control is ``d = Ky y``.
    """

    tau: float
    phi: np.ndarray
    A: np.ndarray
    E: np.ndarray
    Ky: np.ndarray
    G: np.ndarray
    U: np.ndarray
    Uinv: np.ndarray
    M: np.ndarray
    blocks: list
    condition: float
    _lu: ScaledLU = field(repr=False, compare=False, default=None)

    def to_chain(self, c) -> np.ndarray:
        return self.Uinv @ self._lu.solve(c)

    def from_chain(self, y) -> np.ndarray:
        return self.G @ (self.U @ y)


@dataclass(frozen=True)
class FeedbackLaw:
    """Time-varying gain ``d = M(tau) c`` built blockwise from companion forms."""

    structure: S2Structure
    poles: tuple
    gammas: tuple
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def n(self):
        return self.structure.n

    @property
    def r(self):
        return self.structure.r

    def frame(self, tau: float) -> ChainFrame:
        tau = float(tau)
        fr = self._cache.get(tau)
        if fr is None:
            fr = self._frame(tau)
            if len(self._cache) > 4096:
                self._cache.clear()
            self._cache[tau] = fr
        return fr

    def _frame(self, tau: float) -> ChainFrame:
        s = self.structure
        n = s.n
        order = max(s.block_sizes)
        phi = solve_phi_jets(s, tau, order)
        G = s.G.eval(tau)
        lu = ScaledLU(G)
        if not lu.cond < MAX_COND:
            raise SingularAtTau(f"S2 solve at tau={tau:g} has condition {lu.cond:.3g}")
        U = s.U.eval(tau)
        Uinv = s.Uinv.eval(tau)
        A = np.zeros((n, n))
        E = np.zeros((n, s.r))
        Ky = np.zeros((s.r, n))
        blocks = []
        off = s.offsets
        for j, k in enumerate(s.block_sizes):
            if k == 0:
                blocks.append(None)
                continue
            o = off[j]
            for i in range(k - 1):
                A[o + i + 1, o + i] = 1.0
            A[:, o + k - 1] = -phi[0, :, j]
            E[o, j] = 1.0
            red = companion_reduce(phi[:, o:o + k, j])
            delta = red.eps[::-1] - self.gammas[j]
            Ky[j, o:o + k] = np.linalg.solve(red.T.T, delta)
            blocks.append(red)
        M = (Ky @ Uinv) @ lu.solve(np.eye(n))
        return ChainFrame(tau, phi[0], A, E, Ky, G, U, Uinv, M, blocks, lu.cond, lu)

    def details(self, tau: float) -> dict:
        fr = self.frame(tau)
        return {"M": fr.M, "phi": fr.phi, "blocks": fr.blocks, "condition": fr.condition}

    def gain(self, tau: float) -> np.ndarray:
        return self.frame(tau).M

    def __call__(self, tau, c):
        return self.gain(tau) @ np.asarray(c, dtype=float)


def build_feedback(s: S2Structure, poles=None) -> FeedbackLaw:
    """Partition ``poles`` over the input blocks and compute characteristic coefficients.

    Warns with :class:`PoleConditionViolated` when a pole is not below
    ``pole_bound(n, alpha)``.
    """
    poles = default_poles(s.n) if poles is None else tuple(float(p) for p in poles)
    if len(poles) != s.n:
        from .errors import ConfigError
        raise ConfigError(f"expected {s.n} poles, got {len(poles)}")
    bound = pole_bound(s.n, s.alpha)
    bad = [p for p in poles if p >= bound]
    if bad:
        warnings.warn(PoleConditionViolated(
            f"poles {bad} are not below {bound:.4g}; convergence is not guaranteed"),
            stacklevel=2)
    off = s.offsets
    parts = tuple(poles[off[j]: off[j + 1]] for j in range(len(s.block_sizes)))
    gammas = tuple(place_poles(p) for p in parts)
    return FeedbackLaw(s, parts, gammas)
