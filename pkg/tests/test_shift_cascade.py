import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from synthctl._numerics import fit_log_slope
from synthctl.errors import CascadeDiverged
from synthctl.scenarios import OrbitalParams, g_derivatives, orbital_model, random_polynomial_system
from synthctl.shift_cascade import (build_PQ, compute_phis, default_depth, free_term_residual,
                                    initial_state, residual_slope)
from synthctl.system_model import SystemModel, jacobian_u, jacobian_x

ALPHA = 0.1
SCALAR = SystemModel.from_strings(["x1 + u1"], 1)


def test_zero_target_is_all_zero():
    c = compute_phis(orbital_model(), [0, 0, 0], ALPHA, 7)
    assert not np.any(c.phi) and not np.any(c.c0)
    assert not np.any(c.offset_at(2.0))


def test_scalar_stages():
    c = compute_phis(SCALAR, [0.1], ALPHA, 3)
    assert c.phi[0, 0] == pytest.approx(0.1)
    assert c.phi[1, 0] == pytest.approx(0.05)


def test_default_depth():
    assert default_depth(3) == 11
    assert compute_phis(SCALAR, [0.1], ALPHA).depth == 3


def test_orbital_stage2_is_half_g():
    g = g_derivatives(OrbitalParams(), 10.0, 0)[0]
    c = compute_phis(orbital_model(), [10.0, 0, 0], ALPHA, 7)
    assert c.phi[1, 0] == pytest.approx(g / 2, rel=1e-12)


def test_initial_state_depth_one():
    m = orbital_model()
    xbar = np.array([10.0, 0, 0])
    c = compute_phis(m, xbar, ALPHA, 1)
    assert np.allclose(initial_state(c), -xbar + m.f(xbar, np.zeros(1)), rtol=1e-15)


def test_initial_state_is_c0():
    c = compute_phis(orbital_model(), [10.0, 0, 0], ALPHA, 7)
    assert np.array_equal(initial_state(c), c.c0)
    # x(0) = xbar + c0 + s(0) = 0
    assert np.allclose(c.xbar + c.c0 + c.offset_at(0.0), 0, atol=1e-12)


def test_divergent_cascade_raises():
    m = SystemModel.from_strings(["10*x1^2 + u1"], 1)
    with pytest.raises(CascadeDiverged) as info:
        compute_phis(m, [1.0], ALPHA, 5)
    assert info.value.stage == "compute_phis"


def test_linear_PQ_single_degree():
    m = SystemModel.from_strings(["x2 - 0.3*x1", "2*x1 + u1"], 1)
    c = compute_phis(m, [0.2, 0.1], ALPHA)
    pq = build_PQ(m, c)
    A, B = m.linearization().A, m.linearization().B
    assert np.allclose(pq.P.coeffs[1], ALPHA * A) and np.allclose(pq.Q.coeffs[1], ALPHA * B)
    assert not np.any(pq.P.coeffs[2:]) and not np.any(pq.Q.coeffs[2:])


def test_degree_one_blocks_are_jacobians():
    m = random_polynomial_system(7)
    xbar = np.array([0.05, -0.03])
    pq = build_PQ(m, compute_phis(m, xbar, ALPHA))
    assert np.array_equal(pq.P.coeffs[1], ALPHA * jacobian_x(m, xbar, np.zeros(1)))
    assert np.array_equal(pq.Q.coeffs[1], ALPHA * jacobian_u(m, xbar, np.zeros(1)))


def test_orbital_Q_third_entry():
    p = OrbitalParams()
    g = g_derivatives(p, 10.0, 0)[0]
    pq = build_PQ(orbital_model(p), compute_phis(orbital_model(p), [10.0, 0, 0], ALPHA, 7))
    Q3 = pq.Q.coeffs[:, 2, 0]
    assert Q3[1] == pytest.approx(ALPHA * (p.r0 + 10.0) * p.a_psi, rel=1e-14)
    assert Q3[2] == 0
    assert Q3[3] == pytest.approx(ALPHA / 2 * p.a_psi * g, rel=1e-10)


def test_orbital_P_structure():
    # P carries degree 1 and 3: the degree-2 shift of c1 enters f2 through R = r0 + x1
    pq = build_PQ(orbital_model(), compute_phis(orbital_model(), [10.0, 0, 0], ALPHA, 7))
    P = pq.P.coeffs
    assert not np.any(P[2])
    assert np.any(P[3])
    assert np.max(np.abs(P[3])) < 1e-10 * np.max(np.abs(P[1]))


def test_residual_decays_at_cascade_order():
    m = random_polynomial_system(4)
    slope = residual_slope(m, [0.05, 0.02], ALPHA, 7)
    assert slope <= -0.95 * 8 * ALPHA


def test_residual_mp_and_double_agree_on_small_system():
    m = random_polynomial_system(5)
    taus = np.array([1.0, 3.0])
    a = free_term_residual(m, [0.05, 0.02], ALPHA, 5, taus)
    b = free_term_residual(m, [0.05, 0.02], ALPHA, 5, taus, dps=40)
    assert np.allclose(a, b, rtol=1e-6)


def test_shifts_vanish_with_target():
    m = random_polynomial_system(11)
    direction = np.array([0.6, -0.8])
    scales = np.array([1e-1, 1e-2, 1e-3])
    for k in range(1, 5):
        norms = [np.linalg.norm(compute_phis(m, s * direction, ALPHA, 5).phi[k]) for s in scales]
        if min(norms) == 0:
            continue
        slope = np.polyfit(np.log(scales), np.log(norms), 1)[0]
        assert slope >= 1 - 1e-6


@settings(max_examples=15)
@given(st.integers(0, 10_000), st.floats(0.01, 0.1))
def test_residual_order_random_systems(seed, size):
    m = random_polynomial_system(seed)
    xbar = size * np.array([1.0, -0.5])
    taus = np.linspace(5, 20, 16)
    r = free_term_residual(m, xbar, ALPHA, 5, taus, dps=30)
    assert fit_log_slope(taus, r) <= -0.95 * 6 * ALPHA
