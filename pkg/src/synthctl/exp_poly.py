"""Exponential polynomials ``sum_k a_k * exp(-k*alpha*tau)`` and matrices of them.

With ``E = exp(-alpha*tau)`` an exponential polynomial is an ordinary
polynomial in ``E``, so sums and products are coefficient arithmetic and
``d/dtau`` maps ``a_k`` to ``-k*alpha*a_k``.  Only non-negative degrees are
representable, which keeps every element bounded on ``tau >= 0``.

Two operands may be combined only if their ``alpha`` values are identical
floats.  Trailing coefficients are trimmed only when they are exactly zero.
"""

from __future__ import annotations

from math import factorial

import numpy as np

from .errors import AlphaMismatch, ShapeMismatch

__all__ = ["ExpPoly", "ExpPolyMatrix", "ep_add", "ep_mul", "ep_diff", "ep_eval",
           "ep_truncate"]


def _check_alpha(a, b):
    if a.alpha != b.alpha:
        raise AlphaMismatch(f"alpha mismatch: {a.alpha!r} != {b.alpha!r}")


def _trim(c: np.ndarray) -> np.ndarray:
    """Drop trailing exactly-zero degree slices, keeping at least one."""
    flat = c.reshape(c.shape[0], -1)
    nz = np.flatnonzero(np.any(flat != 0, axis=1))
    last = nz[-1] + 1 if nz.size else 1
    return c[:last]


class ExpPoly:
    """Scalar exponential polynomial.

    Parameters
    ----------
    alpha : float
        Positive rate of the base exponential ``E = exp(-alpha*tau)``.
    coeffs : array_like
        ``coeffs[k]`` multiplies ``E**k``.
    """

    __slots__ = ("alpha", "coeffs")

    def __init__(self, alpha: float, coeffs=(0.0,)):
        if not alpha > 0:
            raise ValueError("alpha must be positive")
        c = np.array(coeffs, dtype=float).reshape(-1)
        if c.size == 0:
            c = np.zeros(1)
        self.alpha = float(alpha)
        self.coeffs = _trim(c)
        self.coeffs.setflags(write=False)

    @classmethod
    def monomial(cls, alpha, degree, value=1.0):
        c = np.zeros(degree + 1)
        c[degree] = value
        return cls(alpha, c)

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def lowest_degree(self):
        nz = np.flatnonzero(self.coeffs)
        return int(nz[0]) if nz.size else None

    def coefficient(self, k: int) -> float:
        return float(self.coeffs[k]) if 0 <= k < self.coeffs.size else 0.0

    def is_zero(self) -> bool:
        return not np.any(self.coeffs)

    def _coerce(self, other):
        if isinstance(other, ExpPoly):
            _check_alpha(self, other)
            return other
        return ExpPoly(self.alpha, [float(other)])

    def __add__(self, other):
        o = self._coerce(other)
        size = max(self.coeffs.size, o.coeffs.size)
        c = np.zeros(size)
        c[: self.coeffs.size] += self.coeffs
        c[: o.coeffs.size] += o.coeffs
        return ExpPoly(self.alpha, c)

    __radd__ = __add__

    def __neg__(self):
        return ExpPoly(self.alpha, -self.coeffs)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, ExpPoly):
            return ExpPoly(self.alpha, self.coeffs * float(other))
        _check_alpha(self, other)
        return ExpPoly(self.alpha, np.convolve(self.coeffs, other.coeffs))

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, ExpPoly):
            return NotImplemented
        return self.alpha == other.alpha and np.array_equal(self.coeffs, other.coeffs)

    __hash__ = None

    def diff(self) -> "ExpPoly":
        k = np.arange(self.coeffs.size)
        return ExpPoly(self.alpha, -k * self.alpha * self.coeffs)

    def __call__(self, tau):
        return self.eval(tau)

    def eval(self, tau):
        tau = np.asarray(tau, dtype=float)
        e = np.exp(-self.alpha * tau)
        # Horner in E
        acc = np.zeros_like(e) + self.coeffs[-1]
        for a in self.coeffs[-2::-1]:
            acc = acc * e + a
        return float(acc) if acc.ndim == 0 else acc

    def truncate(self, max_degree: int) -> "ExpPoly":
        if max_degree < 0:
            raise ValueError("max_degree must be non-negative")
        return ExpPoly(self.alpha, self.coeffs[: max_degree + 1])

    def __repr__(self):
        return f"ExpPoly(alpha={self.alpha!r}, coeffs={self.coeffs.tolist()!r})"

    def __str__(self):
        return _render(self.coeffs)


def _render(coeffs) -> str:
    parts = []
    for k, a in enumerate(coeffs):
        if a == 0 and len(coeffs) > 1:
            continue
        parts.append(repr(float(a)) if k == 0 else f"{float(a)!r}*E^{k}")
    return " + ".join(parts) if parts else "0.0"


def ep_add(a: ExpPoly, b: ExpPoly) -> ExpPoly:
    return a + b


def ep_mul(a: ExpPoly, b: ExpPoly) -> ExpPoly:
    return a * b


def ep_diff(a: ExpPoly) -> ExpPoly:
    return a.diff()


def ep_eval(a: ExpPoly, tau):
    return a.eval(tau)


def ep_truncate(a: ExpPoly, max_degree: int) -> ExpPoly:
    return a.truncate(max_degree)


class ExpPolyMatrix:
    """Matrix whose entries are exponential polynomials with a shared alpha.

    Stored densely as ``coeffs[k, i, j]`` = coefficient of ``E**k`` in entry
    ``(i, j)``, which makes evaluation and Taylor expansion single tensor
    contractions.
    """

    __slots__ = ("alpha", "coeffs")

    def __init__(self, alpha: float, coeffs):
        if not alpha > 0:
            raise ValueError("alpha must be positive")
        c = np.array(coeffs, dtype=float)
        if c.ndim != 3 or c.shape[1] == 0 or c.shape[2] == 0:
            raise ShapeMismatch("coefficient array must have shape (degree+1, rows, cols)")
        self.alpha = float(alpha)
        self.coeffs = _trim(c)
        self.coeffs.setflags(write=False)

    @classmethod
    def zeros(cls, alpha, rows, cols):
        return cls(alpha, np.zeros((1, rows, cols)))

    @classmethod
    def constant(cls, alpha, matrix):
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls(alpha, m[None])

    @classmethod
    def from_entries(cls, entries):
        rows, cols = len(entries), len(entries[0])
        alpha = entries[0][0].alpha
        deg = max(e.degree for row in entries for e in row)
        c = np.zeros((deg + 1, rows, cols))
        for i, row in enumerate(entries):
            if len(row) != cols:
                raise ShapeMismatch("ragged entry list")
            for j, e in enumerate(row):
                if e.alpha != alpha:
                    raise AlphaMismatch("entries must share alpha")
                c[: e.coeffs.size, i, j] = e.coeffs
        return cls(alpha, c)

    @property
    def shape(self):
        return self.coeffs.shape[1:]

    @property
    def degree(self) -> int:
        return self.coeffs.shape[0] - 1

    def entry(self, i, j) -> ExpPoly:
        return ExpPoly(self.alpha, self.coeffs[:, i, j])

    def column(self, j) -> "ExpPolyMatrix":
        return ExpPolyMatrix(self.alpha, self.coeffs[:, :, j:j + 1])

    def coefficient(self, k) -> np.ndarray:
        if 0 <= k <= self.degree:
            return self.coeffs[k].copy()
        return np.zeros(self.shape)

    def _same(self, other):
        if not isinstance(other, ExpPolyMatrix):
            raise TypeError("expected an ExpPolyMatrix")
        _check_alpha(self, other)

    def __add__(self, other):
        self._same(other)
        if self.shape != other.shape:
            raise ShapeMismatch(f"{self.shape} vs {other.shape}")
        d = max(self.degree, other.degree) + 1
        c = np.zeros((d, *self.shape))
        c[: self.degree + 1] += self.coeffs
        c[: other.degree + 1] += other.coeffs
        return ExpPolyMatrix(self.alpha, c)

    def __neg__(self):
        return ExpPolyMatrix(self.alpha, -self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def scale(self, factor: float) -> "ExpPolyMatrix":
        return ExpPolyMatrix(self.alpha, self.coeffs * factor)

    def shift(self, k: int) -> "ExpPolyMatrix":
        """Multiply by ``E**k`` (k >= 0)."""
        pad = np.zeros((k, *self.shape))
        return ExpPolyMatrix(self.alpha, np.concatenate([pad, self.coeffs]))

    def __matmul__(self, other):
        self._same(other)
        if self.shape[1] != other.shape[0]:
            raise ShapeMismatch(f"cannot multiply {self.shape} by {other.shape}")
        da, db = self.degree, other.degree
        c = np.zeros((da + db + 1, self.shape[0], other.shape[1]))
        for a in range(da + 1):
            if not np.any(self.coeffs[a]):
                continue
            c[a: a + db + 1] += np.einsum("ij,kjl->kil", self.coeffs[a], other.coeffs)
        return ExpPolyMatrix(self.alpha, c)

    def __eq__(self, other):
        if not isinstance(other, ExpPolyMatrix):
            return NotImplemented
        return self.alpha == other.alpha and np.array_equal(self.coeffs, other.coeffs)

    __hash__ = None

    def diff(self) -> "ExpPolyMatrix":
        k = np.arange(self.degree + 1)[:, None, None]
        return ExpPolyMatrix(self.alpha, -k * self.alpha * self.coeffs)

    def truncate(self, max_degree: int) -> "ExpPolyMatrix":
        return ExpPolyMatrix(self.alpha, self.coeffs[: max_degree + 1])

    def __call__(self, tau):
        return self.eval(tau)

    def eval(self, tau: float) -> np.ndarray:
        p = np.exp(-self.alpha * float(tau)) ** np.arange(self.degree + 1)
        return np.tensordot(p, self.coeffs, axes=1)

    def jet(self, tau: float, order: int) -> np.ndarray:
        """Taylor coefficients in tau about ``tau``: ``out[m] = M^(m)(tau)/m!``."""
        k = np.arange(self.degree + 1)
        p = np.exp(-self.alpha * float(tau)) ** k
        rate = -self.alpha * k
        w = np.array([rate ** m / factorial(m) for m in range(order + 1)]) * p
        return np.tensordot(w, self.coeffs, axes=1)

    def render(self) -> str:
        lines = []
        rows, cols = self.shape
        for i in range(rows):
            for j in range(cols):
                lines.append(f"[{i + 1},{j + 1}] = {_render(_trim(self.coeffs[:, i, j]))}")
        return "\n".join(lines)

    def __repr__(self):
        return f"ExpPolyMatrix(alpha={self.alpha!r}, shape={self.shape}, degree={self.degree})"
