"""Integration of the closed-loop shifted system and decay diagnostics.

The state is the shifted deviation ``c`` with ``x = xbar + c + s(tau)``:

    dc/dtau = alpha*E*(f(xbar + c + s(tau), M(tau) c) + F) - ds/dtau

which is the exact nonlinear right-hand side, so every neglected term of
the truncated linear model is accounted for by the integrator.

For badly scaled models the closed-loop matrix ``P + Q M`` is extremely
non-normal and explicit steps in ``c`` are unstable at any practical step
size.  By default the integrator therefore works in chain coordinates
``y = S2^-1 c``, where the linear part is the well-scaled block-companion
matrix and only the remainder ``dc/dtau - P c - Q d`` is mapped through
``S2^-1``.  The trajectory is the same; only the coordinates differ.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import RK45, solve_ivp

from ._numerics import fit_log_slope
from .errors import ConfigError, StepRejectionLimit
from .shift_cascade import ShiftCascade
from .system_model import SystemModel

__all__ = ["IntegrationConfig", "AuxTrajectory", "integrate", "decay_fit",
           "fundamental_matrix", "fundamental_matrix_check"]

log = logging.getLogger(__name__)

SLOPE_TOL = 1e-9  # fitted slopes closer to zero count as non-decaying


@dataclass(frozen=True)
class IntegrationConfig:
    """Integrator settings.

    ``method`` is ``"RK45"`` (adaptive, dense output onto the sampling grid)
    or ``"RK4"`` (classical fixed step of size at most ``step``).
    """

    tau_max: float = 12.5
    method: str = "RK45"
    rtol: float = 1e-9
    atol: float = 1e-12
    step: float = 0.01
    samples: int = 251
    perturbation: tuple | None = None
    max_steps: int = 20_000
    blowup: float = 1e6
    abort_factor: float = 1e3
    coordinates: str = "chain"

    def __post_init__(self):
        if not (np.isfinite(self.tau_max) and self.tau_max > 0):
            raise ConfigError("tau_max must be finite and positive")
        if self.method not in ("RK45", "RK4"):
            raise ConfigError(f"unknown integrator {self.method!r}")
        if not (self.rtol > 0 and self.atol > 0 and self.step > 0):
            raise ConfigError("tolerances and step must be positive")
        if self.coordinates not in ("chain", "direct"):
            raise ConfigError(f"unknown coordinates {self.coordinates!r}")
        if self.samples < 2:
            raise ConfigError("need at least two samples")

    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.tau_max, self.samples)


@dataclass(frozen=True)
class AuxTrajectory:
    """Sampled solution in tau-time.

    ``d[i]`` is recomputed as ``M(tau[i]) @ c[i]`` rather than stored from the
    integrator, so the feedback identity holds by construction.
    """

    tau: np.ndarray
    c: np.ndarray
    d: np.ndarray
    offset: np.ndarray
    control_bound_hit: bool = False
    state_bound_hit: bool = False
    stats: dict = field(default_factory=dict)

    @property
    def deviation(self) -> np.ndarray:
        """``c + s(tau)``, the deviation of the original state from the target."""
        return self.c + self.offset


def _closed_loop_rhs(model: SystemModel, cascade: ShiftCascade, gain, F):
    xbar = cascade.xbar
    alpha = cascade.alpha

    def rhs(tau, c):
        e = np.exp(-alpha * tau)
        d = gain(tau) @ c
        f = model.f(xbar + c + cascade.offset_at(tau), d)
        if F is not None:
            f = f + F
        return alpha * e * f - cascade.offset_rate(tau)

    return rhs


def _chain_rhs(model: SystemModel, cascade: ShiftCascade, law, F):
    xbar = cascade.xbar
    alpha = cascade.alpha
    P, Q = law.structure.P, law.structure.Q

    def rhs(tau, y):
        fr = law.frame(tau)
        e = np.exp(-alpha * tau)
        c = fr.from_chain(y)
        d = fr.Ky @ y
        f = model.f(xbar + c + cascade.offset_at(tau), d)
        if F is not None:
            f = f + F
        rest = alpha * e * f - cascade.offset_rate(tau) - P.eval(tau) @ c - Q.eval(tau) @ d
        return fr.A @ y + fr.E @ d + fr.to_chain(rest)

    return rhs


def _rk4(rhs, grid, y0, step, on_sample=None):
    out = np.empty((grid.size, y0.size))
    out[0] = y = y0.astype(float)
    steps = 0
    for i in range(1, grid.size):
        t0, t1 = grid[i - 1], grid[i]
        m = max(1, int(np.ceil((t1 - t0) / step - 1e-9)))
        h = (t1 - t0) / m
        t = t0
        for _ in range(m):
            k1 = rhs(t, y)
            k2 = rhs(t + h / 2, y + h / 2 * k1)
            k3 = rhs(t + h / 2, y + h / 2 * k2)
            k4 = rhs(t + h, y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        steps += m
        out[i] = y
        if on_sample is not None:
            on_sample(t1, y)
    return out, steps


def _rk45(rhs, grid, y0, cfg: IntegrationConfig, on_step):
    # absolute tolerance relative to the initial size: the solution decays
    # from y0, and round-off in the remainder sets a floor proportional to it
    atol = max(cfg.atol, cfg.rtol * float(np.max(np.abs(y0), initial=0.0)))
    solver = RK45(rhs, 0.0, y0.astype(float), grid[-1], rtol=cfg.rtol, atol=atol)
    limit = cfg.blowup * max(1.0, float(np.max(np.abs(y0), initial=0.0)))
    out = np.empty((grid.size, y0.size))
    out[0] = y0
    filled = 1
    steps = 0
    while solver.status == "running":
        msg = solver.step()
        if solver.status == "failed":
            raise StepRejectionLimit(f"adaptive integrator failed at tau={solver.t:g}: {msg}")
        steps += 1
        if steps > cfg.max_steps:
            raise StepRejectionLimit(
                f"more than {cfg.max_steps} steps; reached tau={solver.t:.6g} of {grid[-1]:g}")
        on_step(solver.t, solver.y)
        if not np.max(np.abs(solver.y)) < limit:
            raise StepRejectionLimit(f"solution left every reasonable range at tau={solver.t:g}")
        if filled < grid.size and grid[filled] <= solver.t:
            dense = solver.dense_output()
            while filled < grid.size and grid[filled] <= solver.t:
                out[filled] = solver.y if grid[filled] == solver.t else dense(grid[filled])
                filled += 1
    if filled < grid.size:
        out[filled:] = solver.y
    return out, steps


def integrate(model: SystemModel, cascade: ShiftCascade, law, cfg: IntegrationConfig = IntegrationConfig(),
              c0=None) -> AuxTrajectory:
    """Integrate the closed loop from ``c0`` (default ``cascade.c0``) to ``cfg.tau_max``.

    ``law`` is a :class:`~synthctl.stabilizer.FeedbackLaw` or any object with
    a ``gain(tau)`` method.  Exceeding ``model.control_bound`` or
    ``model.state_bound`` raises a flag but does not stop the run.
    """
    gain = law.gain
    F = None if cfg.perturbation is None else np.asarray(cfg.perturbation, dtype=float)
    if F is not None and F.shape != (model.n,):
        raise ConfigError(f"perturbation must have length {model.n}")
    c0 = cascade.c0 if c0 is None else np.asarray(c0, dtype=float)
    chain = cfg.coordinates == "chain"
    if chain:
        rhs = _chain_rhs(model, cascade, law, F)
        to_c = lambda tau, y: law.frame(tau).from_chain(y)
        y0 = law.frame(0.0).to_chain(c0)
    else:
        rhs = _closed_loop_rhs(model, cascade, gain, F)
        to_c = lambda tau, y: y
        y0 = c0
    grid = cfg.grid()
    flags = {"control": False, "state": False}

    def check(tau, y):
        c = to_c(tau, y)
        if not flags["control"] and np.linalg.norm(gain(tau) @ c) >= model.control_bound:
            flags["control"] = True
            log.warning("control bound %g exceeded at tau=%.4g", model.control_bound, tau)
        size = np.linalg.norm(c + cascade.offset_at(tau))
        if not flags["state"] and size >= model.state_bound:
            flags["state"] = True
            log.warning("state bound %g exceeded at tau=%.4g", model.state_bound, tau)
        if size >= cfg.abort_factor * model.state_bound:
            raise StepRejectionLimit(
                f"deviation {size:.3g} at tau={tau:.4g} exceeds {cfg.abort_factor:g} times "
                "the state bound; the closed loop has left its region of validity")

    check(0.0, y0)
    if cfg.method == "RK4":
        ys, steps = _rk4(rhs, grid, y0, cfg.step, check)
    else:
        ys, steps = _rk45(rhs, grid, y0, cfg, check)
    c = np.array([to_c(tau, yi) for tau, yi in zip(grid, ys)])
    c[0] = c0
    if not np.all(np.isfinite(c)):
        raise StepRejectionLimit("trajectory became non-finite")
    d = np.array([gain(tau) @ ci for tau, ci in zip(grid, c)]).reshape(grid.size, -1)
    offset = np.array([cascade.offset_at(tau) for tau in grid])
    log.info("integrated to tau=%g in %d steps", cfg.tau_max, steps)
    return AuxTrajectory(grid, c, d, offset, flags["control"], flags["state"],
                         {"steps": steps, "method": cfg.method})


def decay_fit(traj: AuxTrajectory, window=(5.0, 12.5)) -> dict:
    """Least-squares slopes of ``log||c + s||`` and ``log||d||`` over ``window``.

    A slope of ``-inf`` marks a fit that is impossible because a norm is
    exactly zero (for example the zero-target run).
    """
    lo, hi = window
    if lo < traj.tau[0] or hi > traj.tau[-1] + 1e-12 or lo >= hi:
        raise ValueError(f"window {window} outside sampled range [{traj.tau[0]}, {traj.tau[-1]}]")
    sel = (traj.tau >= lo) & (traj.tau <= hi)
    if sel.sum() < 10:
        raise ValueError("decay fit needs at least 10 samples in the window")
    taus = traj.tau[sel]
    state = np.linalg.norm(traj.deviation[sel], axis=1)
    control = np.linalg.norm(traj.d[sel], axis=1)
    ss = fit_log_slope(taus, state)
    cs = fit_log_slope(taus, control)
    return {"state_slope": ss, "control_slope": cs,
            "state_decaying": ss < -SLOPE_TOL, "control_decaying": cs < -SLOPE_TOL}


def fundamental_matrix(P, Q, gain, taus, rtol: float = 1e-10, atol: float = 1e-13,
                       coordinates: str = "auto") -> np.ndarray:
    """Solve ``Phi' = (P + Q M) Phi``, ``Phi(0) = I`` and sample at ``taus``.

    With ``coordinates="chain"`` (the default when ``gain`` is a feedback law)
    the equivalent chain-coordinate system ``Y' = (A + E Ky) Y`` is
    integrated and mapped back as ``Phi = S2(tau) Y S2(0)^-1``.
    """
    n = P.shape[0]
    law = gain if hasattr(gain, "frame") else None
    if coordinates == "auto":
        coordinates = "chain" if law is not None else "direct"
    taus = np.asarray(taus, dtype=float)
    if coordinates == "chain":
        if law is None:
            raise ConfigError("chain coordinates need a feedback law")

        def rhs(tau, y):
            fr = law.frame(tau)
            return ((fr.A + fr.E @ fr.Ky) @ y.reshape(n, n)).ravel()
    else:
        g = gain.gain if hasattr(gain, "gain") else gain

        def rhs(tau, y):
            D = P.eval(tau) + Q.eval(tau) @ g(tau)
            return (D @ y.reshape(n, n)).ravel()

    sol = solve_ivp(rhs, (0.0, taus[-1]), np.eye(n).ravel(), t_eval=taus,
                    rtol=rtol, atol=atol, method="RK45")
    if not sol.success:
        raise StepRejectionLimit(f"fundamental matrix integration failed: {sol.message}")
    Y = sol.y.T.reshape(-1, n, n)
    if coordinates != "chain":
        return Y
    S0inv = law.frame(0.0).to_chain(np.eye(n))
    return np.array([law.frame(t).from_chain(Yi) @ S0inv for t, Yi in zip(taus, Y)])


def fundamental_matrix_check(P, Q, gain, tau_max: float, samples: int = 101,
                             window=None, coordinates: str = "auto") -> dict:
    """Norm profile of the closed-loop fundamental matrix and its fitted log-slope.

    The fit uses ``window`` (default: the second half of ``[0, tau_max]``).
    """
    taus = np.linspace(0.0, tau_max, samples)
    Phi = fundamental_matrix(P, Q, gain, taus, coordinates=coordinates)
    norms = np.linalg.norm(Phi, ord=2, axis=(1, 2))
    lo, hi = window if window is not None else (tau_max / 2, tau_max)
    sel = (taus >= lo) & (taus <= hi)
    return {"tau": taus, "max_norm_profile": norms,
            "fitted_slope": fit_log_slope(taus[sel], norms[sel])}
