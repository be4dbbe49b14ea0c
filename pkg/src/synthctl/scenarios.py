"""Built-in reference systems.

The orbital model describes radial and angular-momentum deviations from a
circular orbit of radius ``r0``, driven by a single thrust-like control.
Its closed-form shift coefficients serve as an independent oracle for the
generic shift recursion.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial, sqrt

import numpy as np

from .system_model import SystemModel

__all__ = ["OrbitalParams", "Scenario", "orbital_model", "g_derivatives",
           "reference_shifts", "reference_initial_values", "test_systems",
           "get_scenario", "random_polynomial_system"]


@dataclass(frozen=True)
class OrbitalParams:
    """Orbital transfer parameters (SI units).

    ``nu`` is the standard Earth gravitational parameter; ``a_r`` and
    ``a_psi`` are relative-velocity projections whose values are
    conventional defaults, not measured quantities.
    """

    r0: float = 7e6
    nu: float = 3.986004418e14
    a_r: float = 1.0
    a_psi: float = 1e-3
    xbar1: float = 10.0

    def __post_init__(self):
        if not self.r0 > 0:
            raise ValueError("r0 must be positive")

    @property
    def chi0(self) -> float:
        return sqrt(self.nu * self.r0)

    def as_params(self) -> dict:
        return {"r0": self.r0, "nu": self.nu, "ar": self.a_r, "apsi": self.a_psi,
                "chi0": self.chi0}


ORBITAL_RHS = (
    "x2",
    "-nu/(r0 + x1)^2 + (chi0 + x3)^2/(r0 + x1)^3 + ar*u1",
    "(x1 + r0)*apsi*u1",
)


def orbital_model(p: OrbitalParams = OrbitalParams(), **kwargs) -> SystemModel:
    kwargs.setdefault("name", "orbital")
    return SystemModel.from_strings(ORBITAL_RHS, 1, p.as_params(), **kwargs)


def g_derivatives(p: OrbitalParams, xbar1: float, order: int = 3) -> np.ndarray:
    """``g(c1) = -nu/R^2 + chi0^2/R^3`` with ``R = r0 + xbar1 + c1`` and its c1-derivatives at 0.

    Closed form: the m-th derivative of ``R^-k`` is
    ``(-1)^m (k+m-1)!/(k-1)! R^-(k+m)``.
    """
    R = p.r0 + xbar1
    chi2 = p.chi0 ** 2
    out = np.empty(order + 1)
    for m in range(order + 1):
        d2 = (-1) ** m * factorial(m + 1) / R ** (m + 2)
        d3 = (-1) ** m * factorial(m + 2) / 2 / R ** (m + 3)
        out[m] = -p.nu * d2 + chi2 * d3
    return out


def _gbars(g, g1, g2, g3):
    gbar = g1 * g1 * g / 120 + g2 * g * g / 40
    gbb = g1 * g1 * g / 720 + g2 * g * g / 240
    gbbb = (g1 ** 3 * g / 720 + g1 * g2 * g * g / 40 + g3 * g ** 3 / 48) / 7
    return gbar, gbb, gbbb


def reference_shifts(p: OrbitalParams, xbar1: float | None = None,
                     as_printed: bool = False) -> np.ndarray:
    """Seven-stage shift coefficients of the orbital model, shape (7, 3).

    Row 0 holds ``f(xbar, 0) = (0, g, 0)``; row ``k-1`` holds the stage-k
    shift, in the same layout as :attr:`ShiftCascade.phi`.

    ``as_printed=True`` reproduces the published closed forms verbatim,
    which use the second derivative of g in the stage-4 term and a minus
    sign inside the stage-5 combination.  The default returns the
    corrected expressions that agree with the generic recursion.
    """
    xbar1 = p.xbar1 if xbar1 is None else xbar1
    g, g1, g2, g3 = g_derivatives(p, xbar1, 3)
    gbar, gbb, gbbb = _gbars(g, g1, g2, g3)
    stage4 = g1 * g / 24
    if as_printed:
        stage4 = g2 * g / 24
        gbar = g1 * g1 * g / 120 - g2 * g * g / 40
    out = np.zeros((7, 3))
    out[0, 1] = g
    out[1, 0] = g / 2
    out[2, 1] = -g1 * g / 6
    out[3, 0] = stage4
    out[4, 1] = -gbar
    out[5, 0] = gbb
    out[6, 1] = -gbbb
    return out


def reference_initial_values(p: OrbitalParams, xbar1: float | None = None):
    """Closed-form ``(v1(0), u2(0), c3(0))`` for the seven-stage orbital cascade."""
    xbar1 = p.xbar1 if xbar1 is None else xbar1
    g, g1, g2, g3 = g_derivatives(p, xbar1, 3)
    gbar, gbb, gbbb = _gbars(g, g1, g2, g3)
    v1 = -xbar1 - g / 2 - g1 * g / 24 - gbb
    u2 = g + g1 * g / 6 + gbar + gbbb
    return v1, u2, 0.0


@dataclass(frozen=True)
class Scenario:
    """A model with default synthesis settings."""

    name: str
    model: SystemModel
    xbar: tuple
    alpha: float = 0.1
    depth: int | None = None
    tau_max: float = 12.5
    poles: tuple | None = None
    controllable: bool = True
    block_sizes: tuple | None = None
    description: str = ""
    extras: dict = field(default_factory=dict)


def _orbital_scenario() -> Scenario:
    p = OrbitalParams()
    return Scenario("orbital", orbital_model(p), (p.xbar1, 0.0, 0.0), alpha=0.1, depth=7,
                    tau_max=12.5, poles=(-1.0, -2.0, -3.0), block_sizes=(3,),
                    description="circular-orbit radius change by 10 m",
                    extras={"params": p})


def test_systems() -> dict:
    """Registry of built-in scenarios keyed by name."""
    return {
        "orbital": _orbital_scenario(),
        "double_integrator": Scenario(
            "double_integrator", SystemModel.from_strings(["x2", "u1"], 1, name="double_integrator"),
            (0.1, 0.0), alpha=0.1, tau_max=40.0, block_sizes=(2,),
            description="x1'' = u"),
        "two_input": Scenario(
            "two_input",
            SystemModel.from_strings(["x2", "u1 + 0.5*x3 + 0.1*x1^2", "-0.2*x3 + u2"], 2,
                                     name="two_input"),
            (0.05, 0.0, 0.02), alpha=0.1, tau_max=40.0, block_sizes=(2, 1),
            description="chain of two plus a coupled first-order state"),
        "scalar": Scenario(
            "scalar", SystemModel.from_strings(["x1 + u1"], 1, name="scalar"),
            (0.1,), alpha=0.1, tau_max=40.0, block_sizes=(1,)),
        "uncontrollable": Scenario(
            "uncontrollable", SystemModel.from_strings(["x1*x1", "x2*u1"], 1, name="uncontrollable"),
            (0.1, 0.0), controllable=False,
            description="zero linearization at the origin"),
    }


def get_scenario(name: str) -> Scenario:
    reg = test_systems()
    try:
        return reg[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(reg)}") from None


def random_polynomial_system(seed: int, scale: float = 0.5) -> SystemModel:
    """Random controllable two-state system with quadratic drift terms.

    ``x1' = x2 + a*x1^2``, ``x2' = b*x1 + c*x1*x2 + d*x2^2 + u1``; the chain
    structure keeps it controllable at every target.
    """
    rng = np.random.default_rng(seed)
    a, b, c, d = (scale * rng.uniform(-1, 1, 4)).tolist()
    rhs = [f"x2 + ({a!r})*x1^2", f"({b!r})*x1 + ({c!r})*x1*x2 + ({d!r})*x2^2 + u1"]
    return SystemModel.from_strings(rhs, 1, name=f"poly{seed}")
