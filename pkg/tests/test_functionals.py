import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dnls import EvenField
from dnls.functionals import (
    ThresholdError, action, cutoff, energy, generate_threshold_data, k_alpha_beta,
    k_mu_decomposition, localized_virial, mass, mu, nehari, report, scaled_action, virial,
)
from conftest import smooth_random_field


def test_report_on_ground_state(params, gs):
    r = report(gs.profile, params, gs)
    scale = gs.lp1
    assert abs(r.nehari) < 1e-10 * scale
    assert abs(r.K_gamma) < 1e-3 * scale  # O(dx^2) on the grid
    assert r.mu == 0.0
    assert r.action == pytest.approx(r.energy + 0.5 * params.omega * r.mass, rel=1e-15)


def test_report_phase_invariant(params, gs):
    a = report(gs.profile, params, gs).as_row()
    b = report(np.exp(2.1j) * gs.profile, params, gs).as_row()
    for key in a:
        assert b[key] == pytest.approx(a[key], rel=1e-13, abs=1e-13)


def test_doubled_state_has_negative_virial(params, gs):
    assert virial(2 * gs.profile, params) < 0


def test_aliases(params, grid, rng):
    u = EvenField(grid, smooth_random_field(grid, rng))
    r = report(u, params)
    assert r.K_gamma == k_alpha_beta(u, params, 0.5, 1.0)
    assert r.nehari == k_alpha_beta(u, params, 1.0, 0.0)


@settings(max_examples=10, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.integers(0, 10_000))
def test_scaling_derivative_oracle(alpha, beta, seed):
    from dnls import ModelParams, make_grid

    p = ModelParams(-1.0, 7.0, 1.0)
    g = make_grid(p, 30.0, 600)
    u = EvenField(g, smooth_random_field(g, np.random.default_rng(seed)))
    lam = 1e-6
    fd = (scaled_action(u, p, alpha, beta, lam) - scaled_action(u, p, alpha, beta, -lam)) / (2 * lam)
    k = k_alpha_beta(u, p, alpha, beta)
    scale = abs(action(u, p)) + mass(u) + 1.0
    assert fd == pytest.approx(k, abs=1e-6 * scale)


def test_decomposition_on_q(params, gs):
    lhs, rhs = k_mu_decomposition(gs.profile, params, 0.25, gs)
    assert abs(lhs) < 1e-3 and abs(rhs) < 1e-3


def test_decomposition_rejects_off_manifold(params, gs):
    with pytest.raises(ThresholdError, match="not on threshold manifold"):
        k_mu_decomposition(1.01 * gs.profile, params, 0.25, gs)
    with pytest.raises(ValueError):
        k_mu_decomposition(gs.profile, params, 5.0, gs)


@pytest.mark.parametrize("sign", [-1, 1])
def test_threshold_data(params, grid, gs, spec, sign):
    s = generate_threshold_data(spec.Y1, 0.05, sign, params, grid, gs)
    assert s.attained and np.sign(s.K_gamma) == sign
    assert abs(mass(s.field) - gs.mass) / gs.mass < 1e-10
    assert abs(energy(s.field, params) - gs.energy) / abs(gs.energy) < 1e-10
    c = (params.p - 5) / 8
    lhs, rhs = k_mu_decomposition(s.field, params, c, gs)
    assert lhs == pytest.approx(rhs, rel=1e-8)


def test_threshold_zero_direction(params, grid, gs):
    s = generate_threshold_data(EvenField(grid, np.zeros(grid.N + 1)), 0.05, 1, params, grid, gs)
    assert s.lam == 1.0 and s.sigma == 1.0
    assert np.allclose(s.field.values, gs.Q)
    assert abs(s.K_gamma) < 1e-3


def test_nehari_is_scaled_mu_on_threshold(params, grid, gs, spec):
    s = generate_threshold_data(spec.Y1, 0.05, 1, params, grid, gs)
    assert nehari(s.field, params) - nehari(gs.profile, params) == pytest.approx(
        0.5 * (params.p - 1) * mu(s.field, params, gs), rel=1e-6)


def test_cutoff_shape():
    y = np.linspace(0, 3, 3001)
    phi = cutoff(y)
    assert np.allclose(phi[y <= 1], y[y <= 1] ** 2)
    assert np.all(phi[y >= 2] == 0)
    for d in range(4):
        left, right = cutoff(np.array([1 - 1e-12, 1 + 1e-12]), d)
        assert left == pytest.approx(right, abs=1e-8)
        left, right = cutoff(np.array([2 - 1e-12, 2 + 1e-12]), d)
        assert left == pytest.approx(right, abs=1e-8)


def test_localized_virial_on_standing_wave(params, gs):
    v = localized_virial(np.exp(0.7j) * gs.profile, params, 8.0)
    assert abs(v.F_R) < 1e-2 and abs(v.A_R) < 1e-6
    assert v.dJ_R == pytest.approx(0.0, abs=1e-14)


def test_localized_virial_identity(params, grid, rng):
    for _ in range(5):
        u = EvenField(grid, smooth_random_field(grid, rng))
        v = localized_virial(u, params, 8.0)
        assert v.F_R - v.A_R - 8 * v.K_gamma == pytest.approx(0.0, abs=1e-9 * (1 + abs(v.F_R)))


def test_localized_virial_domain(params, gs):
    with pytest.raises(ValueError, match="cutoff exceeds domain"):
        localized_virial(gs.profile, params, 20.0)
