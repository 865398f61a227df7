"""Model parameters, the even half-line grid and discrete inner products.

Even fields on the real line are stored by their samples on ``[0, L]``.
The delta interaction becomes the Robin condition ``u'(0+) = -(gamma/2) u(0)``
at node 0, eliminated through a ghost node; node ``N`` is homogeneous
Dirichlet.  Every full-line integral is twice the half-line trapezoid sum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

DECAY_TOL = 1e-10


class DnlsError(Exception):
    """Base class for numerical failures raised by this package."""


class DomainError(DnlsError, ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    """Delta strength ``gamma``, nonlinearity power ``p`` and frequency ``omega``.

    ``gamma = 0`` is accepted as the potential-free reference problem.
    """

    gamma: float
    p: float
    omega: float

    def __post_init__(self):
        if self.gamma > 0:
            raise DomainError("gamma must be negative (repulsive delta)")
        if not self.p > 5:
            raise DomainError("p must exceed 5")
        if not self.omega > 0:
            raise DomainError("omega must be positive")

    @property
    def threshold_omega(self) -> float:
        return self.gamma**2 / 4.0

    @property
    def high_frequency(self) -> bool:
        return self.omega > self.threshold_omega

    def with_(self, **kw) -> "ModelParams":
        d = dict(gamma=self.gamma, p=self.p, omega=self.omega)
        d.update(kw)
        return ModelParams(**d)


@dataclass(frozen=True, eq=False)
class HalfLineGrid:
    L: float
    N: int
    gamma: float
    x: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def dx(self) -> float:
        return self.L / self.N

    @property
    def robin(self) -> float:
        """Coefficient ``c`` in ``u'(0+) = c u(0)``."""
        return -self.gamma / 2.0

    def same_as(self, other: "HalfLineGrid") -> bool:
        return self is other or (
            self.N == other.N and self.L == other.L and self.gamma == other.gamma
        )


def make_grid(params: ModelParams, L: float, N: int, check_decay: bool = True) -> HalfLineGrid:
    if not L > 0:
        raise DomainError("L must be positive")
    if int(N) != N or N < 16:
        raise DomainError("N must be an integer >= 16")
    N = int(N)
    if check_decay and math.exp(-math.sqrt(params.omega) * L) >= DECAY_TOL:
        raise DomainError(
            f"domain too small: exp(-sqrt(omega)*L) = {math.exp(-math.sqrt(params.omega) * L):.3g}"
            f" >= {DECAY_TOL:g}"
        )
    x = np.linspace(0.0, L, N + 1)
    dx = L / N
    w = np.full(N + 1, 2.0 * dx)
    w[0] = w[-1] = dx
    return HalfLineGrid(L=float(L), N=N, gamma=float(params.gamma), x=x, weights=w)


class EvenField:
    """Samples of an even function at the grid nodes (complex or real)."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: HalfLineGrid, values):
        values = np.asarray(values)
        if values.shape != (grid.N + 1,):
            raise ValueError(f"field needs {grid.N + 1} samples, got {values.shape}")
        self.grid = grid
        self.values = values

    def _coerce(self, other):
        if isinstance(other, EvenField):
            check_same_grid(self, other)
            return other.values
        return other

    def __add__(self, other):
        return EvenField(self.grid, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return EvenField(self.grid, self.values - self._coerce(other))

    def __rsub__(self, other):
        return EvenField(self.grid, self._coerce(other) - self.values)

    def __mul__(self, other):
        return EvenField(self.grid, self.values * self._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return EvenField(self.grid, self.values / self._coerce(other))

    def __neg__(self):
        return EvenField(self.grid, -self.values)

    def __repr__(self):
        return f"EvenField(N={self.grid.N}, L={self.grid.L}, dtype={self.values.dtype})"

    @property
    def real(self) -> "EvenField":
        return EvenField(self.grid, self.values.real.copy())

    @property
    def imag(self) -> "EvenField":
        return EvenField(self.grid, self.values.imag.copy())

    def conj(self) -> "EvenField":
        return EvenField(self.grid, np.conj(self.values))

    def abs(self) -> np.ndarray:
        return np.abs(self.values)

    def copy(self) -> "EvenField":
        return EvenField(self.grid, self.values.copy())


def check_same_grid(u: EvenField, v: EvenField) -> None:
    if not u.grid.same_as(v.grid):
        raise ValueError("grid mismatch")


# --- quadrature -----------------------------------------------------------

def integrate(f, grid: HalfLineGrid | None = None) -> float:
    """Full-line integral of the even extension of ``f``."""
    if isinstance(f, EvenField):
        grid, f = f.grid, f.values
    if grid is None:
        raise TypeError("grid required for raw arrays")
    return float(np.real(np.dot(grid.weights, f)))


def inner(u: EvenField, v: EvenField) -> float:
    """Real L^2 inner product ``Re int u conj(v)``."""
    check_same_grid(u, v)
    return float(np.real(np.dot(u.grid.weights, u.values * np.conj(v.values))))


def l2_norm(u: EvenField) -> float:
    return math.sqrt(max(inner(u, u), 0.0))


def lp_norm_pow(u: EvenField, q: float) -> float:
    """``||u||_{L^q}^q``."""
    return integrate(np.abs(u.values) ** q, u.grid)


# --- derivative forms -----------------------------------------------------

def _dsum(a: np.ndarray, b: np.ndarray, grid: HalfLineGrid) -> float:
    # cell differences: the exact quadratic form of the Robin-eliminated stencil
    da = np.diff(a)
    db = np.diff(b)
    return float(2.0 * np.real(np.dot(da, np.conj(db))) / grid.dx)


def dx_inner(u: EvenField, v: EvenField) -> float:
    """``Re int u' conj(v')`` over the line."""
    check_same_grid(u, v)
    return _dsum(u.values, v.values, u.grid)


def h1_gamma_quadratic(u: EvenField, v: EvenField, params: ModelParams,
                       omega_weight: bool = False) -> float:
    """``(u, v)`` in the homogeneous delta-H^1 product, optionally plus ``omega (u, v)_{L^2}``."""
    check_same_grid(u, v)
    val = _dsum(u.values, v.values, u.grid) - params.gamma * float(
        np.real(u.values[0] * np.conj(v.values[0]))
    )
    if omega_weight:
        val += params.omega * inner(u, v)
    return val


def h1_norm_sq(u: EvenField) -> float:
    """Plain ``||u'||^2 + ||u||^2`` (no point term)."""
    return dx_inner(u, u) + inner(u, u)


def h1_norm(u: EvenField) -> float:
    return math.sqrt(max(h1_norm_sq(u), 0.0))


# --- operators ------------------------------------------------------------

def laplacian(grid: HalfLineGrid) -> sp.csr_matrix:
    """Discrete ``Delta_gamma`` on the active nodes ``0..N-1`` (node N is Dirichlet)."""
    n = grid.N
    h2 = grid.dx**2
    main = np.full(n, -2.0 / h2)
    main[0] = -2.0 / h2 + grid.gamma / grid.dx
    up = np.full(n - 1, 1.0 / h2)
    up[0] = 2.0 / h2
    lo = np.full(n - 1, 1.0 / h2)
    return sp.diags([lo, main, up], [-1, 0, 1], format="csr")


def stiffness(grid: HalfLineGrid) -> sp.csr_matrix:
    """Symmetric matrix ``W (-Delta_gamma)`` on the active nodes."""
    n = grid.N
    c = 2.0 / grid.dx
    main = np.full(n, 2.0 * c)
    main[0] = c - grid.gamma
    off = np.full(n - 1, -c)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


def apply_laplacian(u: np.ndarray, grid: HalfLineGrid) -> np.ndarray:
    """``Delta_gamma u`` at nodes 0..N with ``u_N`` treated as the Dirichlet value."""
    h2 = grid.dx**2
    out = np.zeros_like(u)
    out[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / h2
    out[0] = 2.0 * (u[1] - u[0]) / h2 + grid.gamma * u[0] / grid.dx
    return out


def active(u: np.ndarray) -> np.ndarray:
    return u[:-1]


def pad(u: np.ndarray) -> np.ndarray:
    """Append the Dirichlet node."""
    return np.concatenate([u, np.zeros(1, dtype=u.dtype)])
