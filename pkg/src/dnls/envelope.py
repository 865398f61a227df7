"""Threshold curves ``(M(omega), E(omega))`` and their envelope structure.

Everything here is grid-free: the ground states are explicit, so masses and
energies reduce to one-dimensional integrals of ``Q_{1,0}`` evaluated with
adaptive quadrature and the scaling ``Q_{omega,gamma}(x) =
omega^{1/(p-1)} Q_{1,gamma/sqrt(omega)}(sqrt(omega) x)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .core import DnlsError
from .groundstate import atanh_guarded

QUAD_OPTS = dict(epsabs=0.0, epsrel=1e-13, limit=400)


class EnvelopeError(DnlsError, ValueError):
    pass


# --- the reference profile Q_{1,0} -------------------------------------------

def _log_q10(x: float, p: float) -> float:
    y = abs(0.5 * (p - 1.0) * x)
    log_sech = -y + math.log(2.0) - math.log1p(math.exp(-2.0 * y))
    return (math.log(0.5 * (p + 1.0)) + 2.0 * log_sech) / (p - 1.0)


def _q10_pow(x: float, p: float, e: float) -> float:
    return math.exp(e * _log_q10(x, p))


def _dq10_sq(x: float, p: float) -> float:
    return math.tanh(0.5 * (p - 1.0) * x) ** 2 * _q10_pow(x, p, 2.0)


def _half_integral(f, a: float) -> float:
    """``int_a^infty f`` for even, exponentially decaying ``f``."""
    if a >= 0:
        return quad(f, a, np.inf, **QUAD_OPTS)[0]
    return quad(f, 0.0, np.inf, **QUAD_OPTS)[0] + quad(f, 0.0, -a, **QUAD_OPTS)[0]


def xi_unit(omega: float, gamma: float, p: float) -> float:
    """``xi(1, gamma/sqrt(omega))``."""
    return 2.0 / (p - 1.0) * atanh_guarded(gamma / (2.0 * math.sqrt(omega)))


@dataclass(frozen=True)
class Invariants:
    mass: float
    grad: float  # ||Q'||^2
    point: float  # |Q(0)|^2
    lp1: float

    def energy(self, gamma: float, p: float) -> float:
        return 0.5 * (self.grad - gamma * self.point) - self.lp1 / (p + 1.0)

    def action(self, gamma: float, p: float, omega: float) -> float:
        return self.energy(gamma, p) + 0.5 * omega * self.mass


def invariants(omega: float, gamma: float, p: float) -> Invariants:
    """Full-line invariants of ``Q_{omega,gamma}`` (``gamma = 0`` allowed)."""
    if not omega > gamma**2 / 4.0:
        raise EnvelopeError(f"no ground state at omega={omega} for gamma={gamma}")
    a = xi_unit(omega, gamma, p) if gamma else -np.inf
    lo = a if gamma else 0.0
    factor = 2.0 if gamma else 2.0  # even extension
    m1 = factor * _half_integral(lambda x: _q10_pow(x, p, 2.0), lo)
    g1 = factor * _half_integral(lambda x: _dq10_sq(x, p), lo)
    l1 = factor * _half_integral(lambda x: _q10_pow(x, p, p + 1.0), lo)
    pt1 = _q10_pow(a, p, 2.0) if gamma else _q10_pow(0.0, p, 2.0)
    s = 2.0 / (p - 1.0)
    return Invariants(
        mass=omega ** (s - 0.5) * m1,
        grad=omega ** (s + 0.5) * g1,
        point=omega**s * pt1,
        lp1=omega ** ((p + 1.0) / (p - 1.0) - 0.5) * l1,
    )


# --- curve ---------------------------------------------------------------------

@dataclass(frozen=True)
class EnvelopePoint:
    omega: float
    M: float
    E: float
    branch: str  # "high" | "low"
    r: float  # action level r_{omega,gamma}

    @property
    def F(self) -> float:
        return self.E + 0.5 * self.omega * self.M - self.r


def point(omega: float, gamma: float, p: float) -> EnvelopePoint:
    if omega <= 0:
        raise EnvelopeError("omega must be positive")
    if omega > gamma**2 / 4.0:
        inv = invariants(omega, gamma, p)
        e = inv.energy(gamma, p)
        return EnvelopePoint(omega, inv.mass, e, "high", e + 0.5 * omega * inv.mass)
    inv = invariants(omega, 0.0, p)
    e = 2.0 * inv.energy(0.0, p)
    m = 2.0 * inv.mass
    return EnvelopePoint(omega, m, e, "low", e + 0.5 * omega * m)


def curve(gamma: float, p: float, omegas) -> list[EnvelopePoint]:
    omegas = np.asarray(omegas, dtype=float)
    if np.any(omegas <= 0) or np.any(np.diff(omegas) <= 0):
        raise EnvelopeError("omega grid must be positive and strictly increasing")
    return [point(float(w), gamma, p) for w in omegas]


def low_branch_mass(omega: float, p: float) -> float:
    """``2 M(Q_{omega,0}) = 2 omega^{-(p-5)/(2(p-1))} M(Q_{1,0})``."""
    return 2.0 * omega ** (-(p - 5.0) / (2.0 * (p - 1.0))) * invariants(1.0, 0.0, p).mass


def threshold_deficit(omega: float, gamma: float, p: float) -> float:
    """``2 S_{omega,0}(Q_{omega,0}) - S_{omega,gamma}(Q_{omega,gamma})`` (high branch)."""
    hi = invariants(omega, gamma, p).action(gamma, p, omega)
    lo = invariants(omega, 0.0, p).action(0.0, p, omega)
    return 2.0 * lo - hi


# --- tangency and convexity -------------------------------------------------------

@dataclass(frozen=True)
class TangencyReport:
    omega: np.ndarray  # interior points
    slope: np.ndarray  # dE/dM by finite differences
    target: np.ndarray  # -omega/2
    second_differences: np.ndarray  # of E as a function of M

    @property
    def rel_error(self) -> np.ndarray:
        return np.abs(self.slope - self.target) / np.abs(self.target)

    @property
    def convex(self) -> bool:
        return bool(np.all(self.second_differences > 0))


def _fd_slope(m: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Second-order dE/dM at interior nodes of a non-uniform sample."""
    h1 = m[1:-1] - m[:-2]
    h2 = m[2:] - m[1:-1]
    return (
        -h2 / (h1 * (h1 + h2)) * e[:-2]
        + (h2 - h1) / (h1 * h2) * e[1:-1]
        + h1 / (h2 * (h1 + h2)) * e[2:]
    )


def tangency_and_convexity(points: list[EnvelopePoint]) -> TangencyReport:
    """Slopes and divided second differences along one branch."""
    if len(points) < 5:
        raise EnvelopeError("insufficient points: need at least 5 on a branch")
    if len({pt.branch for pt in points}) != 1:
        raise EnvelopeError("points must lie on a single branch")
    pts = sorted(points, key=lambda pt: pt.M)
    m = np.array([pt.M for pt in pts])
    e = np.array([pt.E for pt in pts])
    w = np.array([pt.omega for pt in pts])
    slope = _fd_slope(m, e)
    d1 = np.diff(e) / np.diff(m)
    second = np.diff(d1) / (0.5 * (m[2:] - m[:-2]))
    return TangencyReport(omega=w[1:-1], slope=slope, target=-0.5 * w[1:-1],
                          second_differences=second)


# --- the kink at omega = gamma^2/4 -----------------------------------------------

@dataclass(frozen=True)
class KinkFit:
    exponent: float
    target: float
    offsets: np.ndarray  # 4 omega - gamma^2
    quotients: np.ndarray

    @property
    def rel_error(self) -> float:
        return abs(self.exponent - self.target) / abs(self.target)


def kink_quotient(omega: float, gamma: float, p: float) -> float:
    """``(Mt(omega) - Mt(gamma^2/4)) / (omega - gamma^2/4)`` with ``Mt(omega) = M(Q_{1,gamma/sqrt(omega)})``."""
    a = xi_unit(omega, gamma, p)
    tail = quad(lambda x: _q10_pow(x, p, 2.0), -a, np.inf, **QUAD_OPTS)[0]
    if tail == 0.0 or not math.isfinite(tail):
        warnings.warn("tail integral underflowed; kink quotient unresolved", RuntimeWarning)
    return -2.0 * tail / (omega - gamma**2 / 4.0)


def kink_exponent(gamma: float, p: float, window=(1e-6, 1e-2), n: int = 10) -> KinkFit:
    if not p > 5:
        raise EnvelopeError("p must exceed 5")
    if gamma >= 0:
        raise EnvelopeError("the kink needs gamma < 0")
    d = np.geomspace(window[0], window[1], n)
    omegas = (gamma**2 + d) / 4.0
    q = np.array([kink_quotient(w, gamma, p) for w in omegas])
    slope = np.polyfit(np.log(d), np.log(np.abs(q)), 1)[0]
    return KinkFit(float(slope), 2.0 / (p - 1.0) - 1.0, d, q)
