import numpy as np
import pytest
from scipy.interpolate import CubicSpline

from synthctl.closed_loop import AuxTrajectory, IntegrationConfig
from synthctl.errors import (NonPositiveAlpha, NotControllable, NotControllableAtTarget,
                             StepRejectionLimit)
from synthctl.pipeline import RunOptions, back_transform, run, validate_alpha
from synthctl.scenarios import get_scenario
from synthctl.shift_cascade import compute_phis
from synthctl.system_model import SystemModel


def _run(name, xbar=None, tau_max=None, samples=201, **kw):
    sc = get_scenario(name)
    xbar = sc.xbar if xbar is None else xbar
    cfg = IntegrationConfig(tau_max=tau_max or sc.tau_max, samples=samples)
    return run(sc.model, xbar, RunOptions(alpha=sc.alpha, poles=sc.poles, depth=sc.depth,
                                          integration=cfg, **kw))


def test_validate_alpha_reference_parameters():
    res = validate_alpha(0.1, (-1, -2, -3), 3)
    assert res["margin"] == pytest.approx(0.1)
    assert not res["ok"] and len(res["warnings"]) == 1
    assert "-1.0" in res["warnings"][0]


def test_validate_alpha_negative_margin():
    res = validate_alpha(0.5, (-1, -2, -3), 3)
    assert res["margin"] == pytest.approx(-3.5)
    assert any("margin" in w for w in res["warnings"])


@pytest.mark.parametrize("alpha", [0.0, -0.1])
def test_validate_alpha_rejects_nonpositive(alpha):
    with pytest.raises(NonPositiveAlpha):
        validate_alpha(alpha, (-1,), 1)


def test_back_transform_time_map():
    c = compute_phis(get_scenario("double_integrator").model, [0.1, 0], 0.1)
    taus = np.array([0.0, 12.5])
    aux = AuxTrajectory(taus, np.array([c.c0, np.zeros(2)]), np.zeros((2, 1)),
                        np.array([c.offset_at(t) for t in taus]))
    t, x, u, err = back_transform(aux, c, [0.1, 0], 0.1)
    assert t[0] == 0 and np.allclose(x[0], 0, atol=1e-15)
    assert t[1] == pytest.approx(0.713495, abs=1e-6)
    assert err == pytest.approx(np.linalg.norm(c.offset_at(12.5)))


def test_double_integrator_reaches_target():
    res = _run("double_integrator", tau_max=40)
    assert res.terminal_error <= 1e-4
    assert res.report["initial_error"] <= 1e-10
    assert np.allclose(res.x[0], 0, atol=1e-10)
    assert np.all(np.diff(res.t) > 0) and res.t[-1] < 1


def test_report_contents():
    rep = _run("two_input").report
    for key in ("kalman_rank", "S1_rank", "S2_rank", "S2_condition", "block_sizes", "decay",
                "terminal_error", "warnings", "alpha_check", "control_bound_hit"):
        assert key in rep
    assert rep["kalman_rank"] == 3 and rep["block_sizes"] == [2, 1]


def test_uncontrollable_stops_at_first_stage():
    sc = get_scenario("uncontrollable")
    with pytest.raises(NotControllable) as info:
        run(sc.model, sc.xbar)
    assert info.value.stage == "kalman_rank"


def test_target_rank_failure_is_tagged():
    # controllable at the origin, loses the input direction at x1 = 1
    m = SystemModel.from_strings(["(1 - x1)*u1"], 1)
    with pytest.raises(NotControllableAtTarget) as info:
        run(m, [1.0], RunOptions(poles=(-1.0,)))
    assert info.value.stage == "rank_S1"


def test_orbital_run_fails_in_integration():
    sc = get_scenario("orbital")
    with pytest.raises(StepRejectionLimit) as info:
        run(sc.model, sc.xbar, RunOptions(alpha=0.1, poles=sc.poles, depth=7))
    assert info.value.stage == "integrate"


def test_terminal_error_decreases_with_horizon():
    errs = [_run("double_integrator", tau_max=T / 0.1, samples=101).terminal_error
            for T in (0.5, 1.0, 1.5, 2.0)]
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_linear_scaling():
    a = _run("double_integrator", tau_max=20)
    b = _run("double_integrator", xbar=(0.05, 0.0), tau_max=20)
    assert b.terminal_error / a.terminal_error == pytest.approx(0.5, rel=0.05)
    assert b.report["peak_control"] / a.report["peak_control"] == pytest.approx(0.5, rel=0.05)


def test_sampled_trajectory_solves_original_ode():
    sc = get_scenario("two_input")
    res = _run("two_input", tau_max=20, samples=801)
    dx = CubicSpline(res.t, res.x).derivative()(res.t)
    f = np.array([sc.model.f(x, u) for x, u in zip(res.x, res.u)])
    inner = slice(20, -20)
    scale = np.abs(f).max()
    assert np.max(np.abs(dx[inner] - f[inner])) <= 1e-3 * scale
