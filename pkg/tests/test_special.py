import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dnls import EvenField
from dnls.core import h1_norm, l2_norm
from dnls.special import (
    SeriesError, build_series, forcing, nonlinear_N, pr_eval, seed_and_residual, t0_for,
    taylor_coeffs,
)


def test_taylor_p7():
    a = taylor_coeffs(7.0, 4)
    assert (a[(2, 0)], a[(1, 1)], a[(0, 2)]) == (6.0, 12.0, 3.0)
    assert all(l + m >= 2 for l, m in a)


def test_taylor_matches_finite_differences():
    p, h = 7.0, 1e-3
    # d^2/dx^2 of N at 0 along the real axis equals 2 * (a20 + a11 + a02)
    fd = (nonlinear_N(np.array([h]), p) + nonlinear_N(np.array([-h]), p)).real / h**2
    a = taylor_coeffs(p, 2)
    assert fd[0] == pytest.approx(2 * (a[(2, 0)] + a[(1, 1)] + a[(0, 2)]), rel=1e-5)


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.2, 0.2))
def test_quadratic_term_real(eps):
    quad = sum(a for (l, m), a in taylor_coeffs(7.0, 2).items()) * eps**2
    assert quad == pytest.approx(21 * eps**2)
    exact = (1 + eps) ** 7 - 1 - 7 * eps
    # remaining terms sum to at most 35 |eps|^3 (1 + |eps|)^4
    assert abs(exact - quad) <= 35 * abs(eps) ** 3 * (1 + abs(eps)) ** 4 + 1e-15


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 0.7), st.floats(-np.pi, np.pi), st.sampled_from([6.0, 7.0, 9.5]))
def test_nonlinear_series_matches_direct(r, phi, p):
    z = np.array([r * np.exp(1j * phi)])
    direct = np.abs(1 + z) ** (p - 1) * (1 + z) - 1 - 0.5 * (p + 1) * z - 0.5 * (p - 1) * np.conj(z)
    assert nonlinear_N(z, p)[0] == pytest.approx(direct[0], abs=1e-13)


def test_pr_zero(gs, grid):
    P, R = pr_eval(EvenField(grid, np.zeros(grid.N + 1, dtype=complex)), gs)
    assert not np.any(P.values) and not np.any(R.values)


def test_pr_small_real(gs, grid):
    eps = 1e-4
    v = eps * gs.Q * np.exp(-grid.x**2)
    _, R = pr_eval(EvenField(grid, v.astype(complex)), gs)
    lead = 21 * gs.pow(5.0) * v**2
    err = l2_norm(EvenField(grid, R.values - lead))
    assert err < 1e-3 * l2_norm(EvenField(grid, lead))


def test_pr_sum_reconstructs_nonlinearity(gs, grid, rng):
    from conftest import smooth_random_field

    v = 0.3 * smooth_random_field(grid, rng)
    P, R = pr_eval(EvenField(grid, v), gs)
    w = gs.Q + v
    full = np.abs(w) ** 6 * w - gs.pow(7.0)
    assert np.max(np.abs(P.values + R.values - full)) < 1e-12 * np.max(np.abs(full))


def test_remainder_difference_is_quadratic(gs, grid, rng):
    from conftest import smooth_random_field

    f = 1e-2 * smooth_random_field(grid, rng) * gs.Q
    g = 1e-2 * smooth_random_field(grid, rng) * gs.Q
    diffs = []
    for scale in (1.0, 0.5, 0.25):
        Rf = pr_eval(EvenField(grid, scale * f), gs)[1]
        Rg = pr_eval(EvenField(grid, scale * g), gs)[1]
        diffs.append(l2_norm(Rf - Rg))
    assert diffs[0] / diffs[1] == pytest.approx(4, rel=0.05)
    assert diffs[1] / diffs[2] == pytest.approx(4, rel=0.05)


def test_first_order_is_eigenvector(spec, gs):
    s = build_series(1.0, 1, spec, gs)
    assert np.allclose(s.Z[0].values, spec.Yplus.values)
    # eps_1 has no s^1 term: residual is O(s^2)
    r = [h1_norm(s.residual_at_s(h)) for h in (1e-3, 5e-4)]
    assert r[0] / r[1] == pytest.approx(4, rel=0.05)


@pytest.mark.parametrize("k", [2, 3])
def test_residual_order(spec, gs, k):
    s = build_series(1.0, k, spec, gs)
    hs = (4e-3, 2e-3)
    r = [h1_norm(s.residual_at_s(h)) for h in hs]
    assert np.log2(r[0] / r[1]) == pytest.approx(k + 1, abs=0.1)
    assert s.vandermonde_defect < 1e-6


def test_recursion_solves_shifted_system(spec, gs):
    s = build_series(-1.0, 3, spec, gs)
    ops, e = s.ops, s.e_omega
    for j in (2, 3):
        z = s.Z[j - 1].values[:-1]
        F = forcing(s, j)
        res = -ops.apply_block(z) + j * e * z - F
        assert np.sqrt(np.dot(ops.w, np.abs(res) ** 2)) < 1e-9 * np.sqrt(np.dot(ops.w, np.abs(F) ** 2))


def test_zero_amplitude(spec, gs):
    s = build_series(0.0, 2, spec, gs)
    seed = seed_and_residual(s, 1.0)
    assert np.array_equal(seed.field.values, gs.Q.astype(complex))


def test_t0_too_small(spec, gs):
    s = build_series(1.0, 1, spec, gs)
    with pytest.raises(SeriesError, match="t0 too small"):
        seed_and_residual(s, 0.0)


def test_t0_rule(spec, gs):
    s = build_series(1.0, 2, spec, gs)
    t0 = t0_for(s, 0.1)
    assert h1_norm(s.V(t0)) <= 0.1 * h1_norm(gs.profile)
    assert h1_norm(s.V(t0 - 0.05)) > 0.1 * h1_norm(gs.profile)


def test_bad_order(spec, gs):
    with pytest.raises(ValueError):
        build_series(1.0, 0, spec, gs)
