"""End-to-end synthesis: rank checks, shifts, stabiliser, integration, back transform.

The physical time is recovered from ``t = 1 - exp(-alpha*tau)``; a finite
``tau_max`` ends the trajectory at ``t_end < 1``, so the result reports the
terminal error ``||x(t_end) - xbar||`` instead of claiming exact arrival.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .closed_loop import AuxTrajectory, IntegrationConfig, decay_fit, integrate
from .errors import NonPositiveAlpha, NotControllable, PoleConditionViolated, RankDeficient
from .shift_cascade import ShiftCascade, build_PQ, compute_phis, default_depth
from .stabilizer import build_feedback, build_S2, default_poles, pole_bound, rank_check_S2
from .system_model import SystemModel, kalman_rank, rank_S1

__all__ = ["RunOptions", "SynthesisResult", "validate_alpha", "back_transform", "run"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunOptions:
    alpha: float = 0.1
    poles: tuple | None = None
    depth: int | None = None
    integration: IntegrationConfig = field(default_factory=IntegrationConfig)
    fit_window: tuple | None = None


@dataclass
class SynthesisResult:
    """Trajectory in original variables plus the auxiliary run and a report.

    ``t``, ``x`` and ``u`` are sampled on the same grid as ``aux.tau``.
    """

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    aux: AuxTrajectory
    report: dict

    @property
    def terminal_error(self) -> float:
        return self.report["terminal_error"]


def validate_alpha(alpha: float, poles, n: int) -> dict:
    """Heuristic checks of the exponential rate against the pole set.

    The slowest pole magnitude stands in for the proof's decay rate, which
    is not computable, so the margin ``min|pole| - 3*n*alpha`` is only a
    surrogate.  Poles at or above ``-(2n+1)*alpha - 1`` also draw a warning.
    """
    if not alpha > 0:
        raise NonPositiveAlpha(f"alpha must be positive, got {alpha}")
    poles = np.asarray(poles, dtype=float)
    margin = float(np.min(np.abs(poles)) - 3 * n * alpha)
    warns = []
    if margin <= 0:
        warns.append(f"rate margin min|pole| - 3n*alpha = {margin:.4g} is not positive")
    bound = pole_bound(n, alpha)
    bad = sorted(float(p) for p in poles if p >= bound)
    if bad:
        warns.append(f"poles {bad} are not below {bound:.4g}")
    return {"ok": not warns, "margin": margin, "pole_bound": bound, "warnings": warns,
            "heuristic": True}


def back_transform(aux: AuxTrajectory, cascade: ShiftCascade, xbar, alpha: float):
    """Map the auxiliary samples to ``(t, x, u)`` and the terminal error."""
    xbar = np.asarray(xbar, dtype=float)
    t = -np.expm1(-alpha * aux.tau)
    x = xbar + aux.c + aux.offset
    u = aux.d.copy()
    return t, x, u, float(np.linalg.norm(x[-1] - xbar))


def run(model: SystemModel, xbar, options: RunOptions = RunOptions()) -> SynthesisResult:
    """Solve the steering problem ``x(0) = 0``, ``x(t -> 1) = xbar`` by synthesis.

    Raises the first fatal :class:`~synthctl.errors.StageError`; its
    ``stage`` attribute names the failing step.
    """
    xbar = np.asarray(xbar, dtype=float).reshape(model.n)
    alpha = float(options.alpha)
    poles = default_poles(model.n) if options.poles is None else tuple(options.poles)
    alpha_check = validate_alpha(alpha, poles, model.n)
    report: dict = {"model": model.name, "n": model.n, "r": model.r, "alpha": alpha,
                    "poles": [float(p) for p in poles], "xbar": xbar.tolist(),
                    "alpha_check": alpha_check, "warnings": list(alpha_check["warnings"])}

    lin = model.linearization()
    kal = kalman_rank(lin.A, lin.B)
    report["kalman_rank"] = kal.rank
    if kal.rank < model.n:
        raise NotControllable(f"Kalman rank {kal.rank} < n = {model.n}")
    s1 = rank_S1(model, xbar)
    report["S1_rank"] = s1.rank
    report["block_sizes"] = list(s1.block_sizes)

    depth = default_depth(model.n) if options.depth is None else int(options.depth)
    cascade = compute_phis(model, xbar, alpha, depth)
    report["depth"] = depth
    pq = build_PQ(model, cascade)
    s2 = build_S2(pq.P, pq.Q)
    s2_check = rank_check_S2(s2)
    report["S2_rank"] = s2_check["rank"]
    report["S2_condition"] = s2_check["condition"]
    report["S2_block_sizes"] = list(s2.block_sizes)
    if not s2_check["ok"]:
        raise RankDeficient(f"S2 rank {s2_check['rank']} < n = {model.n}", stage="rank_check_S2")

    with warnings.catch_warnings():
        # already reported by validate_alpha
        warnings.simplefilter("ignore", PoleConditionViolated)
        law = build_feedback(s2, poles)
    report["gammas"] = [g.tolist() for g in law.gammas]
    M0 = law.gain(0.0)
    report["gain_norm_at_0"] = float(np.linalg.norm(M0))

    cfg = options.integration
    aux = integrate(model, cascade, law, cfg)
    t, x, u, err = back_transform(aux, cascade, xbar, alpha)
    report["terminal_error"] = err
    report["t_end"] = float(t[-1])
    report["initial_error"] = float(np.linalg.norm(x[0]))
    report["peak_control"] = float(np.max(np.linalg.norm(u, axis=1)))
    report["control_bound_hit"] = aux.control_bound_hit
    report["state_bound_hit"] = aux.state_bound_hit
    report["integrator_steps"] = aux.stats.get("steps")
    window = options.fit_window or (min(5.0, cfg.tau_max / 2), cfg.tau_max)
    try:
        report["decay"] = {k: float(v) if isinstance(v, float) else v
                           for k, v in decay_fit(aux, window).items()}
        report["decay"]["window"] = list(window)
    except ValueError as exc:
        report["decay"] = {"error": str(exc)}
    log.info("terminal error %.3g at t=%.6f", err, t[-1])
    return SynthesisResult(t, x, u, aux, report)
