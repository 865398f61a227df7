"""Conserved and variational functionals, localized virial quantities and
threshold (mass-energy) data."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial
from scipy.interpolate import CubicSpline

from .core import (
    DnlsError,
    EvenField,
    HalfLineGrid,
    ModelParams,
    dx_inner,
    integrate,
    lp_norm_pow,
)
from .groundstate import GroundState, ground_state

ME_TOL = 1e-8


class ThresholdError(DnlsError, ValueError):
    pass


@dataclass(frozen=True)
class Pieces:
    """The four quadratures every functional is built from."""

    grad: float  # ||f'||^2
    point: float  # |f(0)|^2
    mass: float  # ||f||^2
    lp1: float  # ||f||_{p+1}^{p+1}


def pieces(u: EvenField, params: ModelParams) -> Pieces:
    return Pieces(
        grad=dx_inner(u, u),
        point=float(abs(u.values[0]) ** 2),
        mass=integrate(np.abs(u.values) ** 2, u.grid),
        lp1=lp_norm_pow(u, params.p + 1.0),
    )


def _k(pc: Pieces, params: ModelParams, alpha: float, beta: float) -> float:
    p, g, w = params.p, params.gamma, params.omega
    return (
        0.5 * (2 * alpha + beta) * pc.grad
        - alpha * g * pc.point
        + 0.5 * w * (2 * alpha - beta) * pc.mass
        - ((p + 1) * alpha - beta) / (p + 1) * pc.lp1
    )


def energy(u: EvenField, params: ModelParams) -> float:
    pc = pieces(u, params)
    return 0.5 * (pc.grad - params.gamma * pc.point) - pc.lp1 / (params.p + 1)


def mass(u: EvenField) -> float:
    return integrate(np.abs(u.values) ** 2, u.grid)


def hdot_sq(u: EvenField, params: ModelParams) -> float:
    return dx_inner(u, u) - params.gamma * float(abs(u.values[0]) ** 2)


def k_alpha_beta(u: EvenField, params: ModelParams, alpha: float, beta: float) -> float:
    """Scaling derivative of the action along ``e^{alpha l} u(e^{beta l} x)``."""
    return _k(pieces(u, params), params, alpha, beta)


def virial(u: EvenField, params: ModelParams) -> float:
    return k_alpha_beta(u, params, 0.5, 1.0)


def nehari(u: EvenField, params: ModelParams) -> float:
    return k_alpha_beta(u, params, 1.0, 0.0)


def action(u: EvenField, params: ModelParams) -> float:
    pc = pieces(u, params)
    return (
        0.5 * (pc.grad - params.gamma * pc.point)
        - pc.lp1 / (params.p + 1)
        + 0.5 * params.omega * pc.mass
    )


def scaled_action(u: EvenField, params: ModelParams, alpha: float, beta: float,
                  lam: float) -> float:
    """``S(e^{alpha lam} u(e^{beta lam} .))`` from the exact scaling of each piece."""
    pc = pieces(u, params)
    a, s = math.exp(alpha * lam), math.exp(beta * lam)
    scaled = Pieces(
        grad=a**2 * s * pc.grad,
        point=a**2 * pc.point,
        mass=a**2 / s * pc.mass,
        lp1=a ** (params.p + 1) / s * pc.lp1,
    )
    return (
        0.5 * (scaled.grad - params.gamma * scaled.point)
        - scaled.lp1 / (params.p + 1)
        + 0.5 * params.omega * scaled.mass
    )


def reference_state(u: EvenField, params: ModelParams) -> GroundState:
    return ground_state(params, u.grid, discrete=True)


def mu(u: EvenField, params: ModelParams, gs: GroundState | None = None) -> float:
    gs = gs or reference_state(u, params)
    return gs.hdot_sq - hdot_sq(u, params)


@dataclass(frozen=True)
class FunctionalReport:
    mass: float
    energy: float
    action: float
    K_gamma: float
    nehari: float
    mu: float

    def as_row(self) -> dict:
        return {
            "mass": self.mass,
            "energy": self.energy,
            "action": self.action,
            "K": self.K_gamma,
            "nehari": self.nehari,
            "mu": self.mu,
        }


def report(u: EvenField, params: ModelParams, gs: GroundState | None = None) -> FunctionalReport:
    """Mass, energy, action, virial, Nehari and ``mu`` of ``u``.

    ``mu`` is measured against ``gs`` (default: the discrete ground state on
    ``u``'s grid, for which the Nehari identity is exact).
    """
    gs = gs or reference_state(u, params)
    pc = pieces(u, params)
    e = 0.5 * (pc.grad - params.gamma * pc.point) - pc.lp1 / (params.p + 1)
    return FunctionalReport(
        mass=pc.mass,
        energy=e,
        action=e + 0.5 * params.omega * pc.mass,
        K_gamma=_k(pc, params, 0.5, 1.0),
        nehari=_k(pc, params, 1.0, 0.0),
        mu=gs.hdot_sq - (pc.grad - params.gamma * pc.point),
    )


def me_defect(u: EvenField, params: ModelParams, gs: GroundState) -> tuple[float, float]:
    """Relative mass and energy defects against the ground state."""
    return (
        abs(mass(u) - gs.mass) / abs(gs.mass),
        abs(energy(u, params) - gs.energy) / abs(gs.energy),
    )


def on_threshold(u: EvenField, params: ModelParams, gs: GroundState, tol: float = ME_TOL) -> bool:
    return max(me_defect(u, params, gs)) <= tol


def k_mu_decomposition(u: EvenField, params: ModelParams, c: float,
                       gs: GroundState | None = None) -> tuple[float, float]:
    """``(K - c mu, K^{1/2 - 2c/(p-1), 1})`` for data on the threshold manifold."""
    gs = gs or reference_state(u, params)
    if not 0 < c < (params.p - 5) / 4:
        raise ValueError(f"c must lie in (0, (p-5)/4), got {c}")
    if not on_threshold(u, params, gs):
        raise ThresholdError(f"not on threshold manifold: defects {me_defect(u, params, gs)}")
    lhs = virial(u, params) - c * mu(u, params, gs)
    rhs = k_alpha_beta(u, params, 0.5 - 2 * c / (params.p - 1), 1.0)
    return lhs, rhs


def k_from_threshold(u: EvenField, params: ModelParams, alpha: float, beta: float,
                     gs: GroundState) -> float:
    """``K^{alpha,beta}(u)`` rewritten through the ground state's gradient and point
    values, valid on the threshold manifold.

    ``K^{alpha,beta}(Q)`` is added back so the identity stays exact when ``Q`` is
    only a grid approximation (there it is ``O(dx^2)`` instead of zero).
    """
    p, g = params.p, params.gamma
    a = ((p - 1) * alpha - 2 * beta) / 2
    b = ((p - 1) * alpha - beta) / 2
    q = gs.profile
    gq, pq = dx_inner(q, q), float(q.values[0] ** 2)
    gu, pu = dx_inner(u, u), float(abs(u.values[0]) ** 2)
    base = k_alpha_beta(q, params, alpha, beta)
    return base + a * gq + b * (-g) * pq - (a * gu + b * (-g) * pu)


def empirical_c(u: EvenField, params: ModelParams, gs: GroundState | None = None) -> float:
    """Largest ``c`` with ``K >= c mu`` (``K > 0``) or ``K <= c mu`` (``K < 0``): ``K / mu``."""
    return virial(u, params) / mu(u, params, gs)


def momentum_moment(u: EvenField, weight=None) -> float:
    """``Im int weight(x) u' conj(u)`` with cell differences; ``weight`` odd (default ``x``)."""
    grid = u.grid
    xm = 0.5 * (grid.x[1:] + grid.x[:-1])
    wt = xm if weight is None else weight(xm)
    v = u.values
    # Im(conj(u_j) (u_{j+1} - u_j)) / dx at the cell midpoint; the integrand is even
    return float(2.0 * np.sum(wt * np.imag(np.conj(v[:-1]) * v[1:])))


def variance(u: EvenField) -> float:
    return integrate(u.grid.x**2 * np.abs(u.values) ** 2, u.grid)


# --- localized virial --------------------------------------------------------

def _smoothstep_coeffs() -> Polynomial:
    # C^3 step: 0 -> 1 on [0, 1] with three vanishing derivatives at both ends
    return Polynomial([0, 0, 0, 0, 35, -84, 70, -20])


_STEP = _smoothstep_coeffs()
# phi(y) = y^2 (1 - S(y - 1)) on [1, 2]
_BLEND = Polynomial([0, 0, 1]) * (1 - _STEP(Polynomial([-1, 1])))


def cutoff(y: np.ndarray, deriv: int = 0) -> np.ndarray:
    """Even cutoff ``phi``: ``y^2`` on ``|y| <= 1``, zero on ``|y| >= 2``, C^3 in between.

    Only ``y >= 0`` is evaluated; derivatives are the right derivatives.
    """
    y = np.asarray(y, dtype=float)
    inner = Polynomial([0, 0, 1]).deriv(deriv) if deriv else Polynomial([0, 0, 1])
    blend = _BLEND.deriv(deriv) if deriv else _BLEND
    out = np.where(y <= 1.0, inner(y), np.where(y < 2.0, blend(y), 0.0))
    return out


@dataclass(frozen=True)
class VirialReport:
    R: float
    J_R: float
    dJ_R: float
    F_R: float
    A_R: float
    K_gamma: float


def localized_virial(u: EvenField, params: ModelParams, R: float) -> VirialReport:
    grid = u.grid
    if not 2 * R < grid.L:
        raise ValueError(f"cutoff exceeds domain: 2R={2 * R} >= L={grid.L}")
    x = grid.x
    xm = 0.5 * (x[1:] + x[:-1])
    v = u.values
    a2 = np.abs(v) ** 2
    ap = np.abs(v) ** (params.p + 1)
    du2 = np.abs(np.diff(v)) ** 2 / grid.dx  # |u'|^2 dx per cell
    d2_nodes = cutoff(x / R, 2)
    d2_mid = cutoff(xm / R, 2)
    d4 = cutoff(x / R, 4)
    c = 2.0 * (params.p - 1) / (params.p + 1)

    J = integrate(R**2 * cutoff(x / R) * a2, grid)
    dJ = 2.0 * R * momentum_moment(u, lambda y: cutoff(y / R, 1))
    grad_phi = 2.0 * np.sum(d2_mid * du2)
    F = (
        4.0 * grad_phi
        - 4.0 * params.gamma * a2[0]
        - c * integrate(d2_nodes * ap, grid)
        - integrate(d4 * a2, grid) / R**2
    )
    A = (
        4.0 * 2.0 * np.sum((d2_mid - 2.0) * du2)
        - c * integrate((d2_nodes - 2.0) * ap, grid)
        - integrate(d4 * a2, grid) / R**2
    )
    return VirialReport(R=R, J_R=J, dJ_R=dJ, F_R=float(F), A_R=float(A),
                        K_gamma=virial(u, params))


# --- threshold data ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ThresholdSample:
    field: EvenField
    lam: float
    sigma: float
    K_gamma: float
    eps: float  # signed amplitude actually used
    attained: bool
    iterations: int


def _resample(f: EvenField, sigma: float) -> np.ndarray:
    """Samples of ``f(sigma x)`` at the grid nodes; zero beyond ``L``."""
    grid = f.grid
    if sigma == 1.0:
        return f.values.copy()
    xs = sigma * grid.x
    inside = xs <= grid.L
    out = np.zeros(grid.N + 1, dtype=complex)
    sr = CubicSpline(grid.x, f.values.real)
    si = CubicSpline(grid.x, f.values.imag)
    out[inside] = sr(xs[inside]) + 1j * si(xs[inside])
    out[-1] = 0.0
    return out


def _solve_scaling(f: EvenField, params: ModelParams, gs: GroundState,
                   tol: float = 1e-12, maxiter: int = 50, seed=(1.0, 1.0)):
    lam, sig = seed
    p = params.p
    for it in range(1, maxiter + 1):
        u = EvenField(f.grid, lam * _resample(f, sig))
        pc = pieces(u, params)
        e = 0.5 * (pc.grad - params.gamma * pc.point) - pc.lp1 / (p + 1)
        r = np.array([(pc.mass - gs.mass) / gs.mass, (e - gs.energy) / abs(gs.energy)])
        if np.max(np.abs(r)) < tol:
            return u, lam, sig, it
        hd = pc.grad - params.gamma * pc.point
        jac = np.array(
            [
                [2 * pc.mass / lam / gs.mass, -pc.mass / sig / gs.mass],
                [(hd - pc.lp1) / lam / abs(gs.energy),
                 (0.5 * pc.grad + pc.lp1 / (p + 1)) / sig / abs(gs.energy)],
            ]
        )
        dl, ds = np.linalg.solve(jac, -r)
        # damp steps that would flip signs
        t = 1.0
        while lam + t * dl <= 0 or sig + t * ds <= 0:
            t *= 0.5
        lam, sig = lam + t * dl, sig + t * ds
    raise ThresholdError("Newton failed to reach the threshold manifold")


def generate_threshold_data(direction: EvenField, eps: float, sign: int, params: ModelParams,
                            grid: HalfLineGrid | None = None,
                            gs: GroundState | None = None) -> ThresholdSample:
    """``u = lam (Q + eps d)(sigma x)`` with ``(lam, sigma)`` fixing mass and energy to
    those of ``Q``; the sign of ``eps`` is flipped when that yields ``sign(K) == sign``."""
    grid = grid or direction.grid
    gs = gs or ground_state(params, grid, discrete=True)
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    tried = None
    for s in (1.0, -1.0):
        f = gs.profile + (s * eps) * direction
        f = EvenField(grid, f.values.astype(complex))
        u, lam, sig, its = _solve_scaling(f, params, gs)
        k = virial(u, params)
        cand = ThresholdSample(u, lam, sig, k, s * eps, bool(np.sign(k) == sign), its)
        if cand.attained or not np.any(direction.values):
            return cand
        tried = tried or cand
    return tried
