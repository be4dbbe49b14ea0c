"""Synthesizing feedback control for steering nonlinear systems to a target state.

Typical use::

    from synthctl import get_scenario, run, RunOptions
    sc = get_scenario("double_integrator")
    result = run(sc.model, sc.xbar, RunOptions(alpha=sc.alpha))
    result.report["terminal_error"]
"""

from .closed_loop import AuxTrajectory, IntegrationConfig, decay_fit, fundamental_matrix_check, integrate
from .errors import *  # noqa: F401,F403
from .exp_poly import ExpPolyMatrix
from .pipeline import RunOptions, SynthesisResult, back_transform, run, validate_alpha
from .scenarios import OrbitalParams, get_scenario, orbital_model
from .shift_cascade import build_PQ, compute_phis, initial_state
from .stabilizer import build_feedback, build_S2, companion_reduce, place_poles
from .system_model import SystemModel, kalman_rank, rank_S1

__version__ = "0.1.0"
