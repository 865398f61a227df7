"""Approximate threshold solutions ``Q + sum_j e^{-j e t} Z_j`` built by the
resolvent recursion, and seed data for the time integrator.

With ``u = e^{i omega t}(Q + v)`` the perturbation obeys
``v_t + Lcal v - i R(v) = 0``.  Writing ``s = e^{-e t}``, every quantity is a
power series in ``s`` and the recursion solves one shifted system per order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import binom

from .core import DnlsError, EvenField, h1_norm, l2_norm, pad
from .groundstate import GroundState, ground_state, power
from .spectral import LinearizedSpectrum, OperatorPair, assemble

SERIES_RADIUS = 0.5  # |v/Q| below which R uses the binomial series
K_MAX = 6


class SeriesError(DnlsError):
    pass


def taylor_coeffs(p: float, l_max: int) -> dict[tuple[int, int], float]:
    """``a_{lm}`` for ``2 <= l + m <= l_max`` in ``(1+z)^{(p+1)/2}(1+conj z)^{(p-1)/2}``."""
    if l_max < 2:
        raise ValueError("l_max must be at least 2")
    a, b = 0.5 * (p + 1.0), 0.5 * (p - 1.0)
    return {
        (l, m): float(binom(a, l) * binom(b, m))
        for l in range(l_max + 1)
        for m in range(l_max + 1 - l)
        if l + m >= 2
    }


def _binomial_tail(a: float, z: np.ndarray, tol: float = 1e-17) -> np.ndarray:
    """``(1+z)^a - 1 - a z`` summed as a series, ``|z| < 1/2``."""
    out = np.zeros_like(z)
    term = a * z  # C(a, 1) z
    l = 1
    zmax = float(np.max(np.abs(z))) if z.size else 0.0
    while True:
        term = term * (a - l) / (l + 1) * z
        l += 1
        out = out + term
        if zmax**l * abs(binom(a, l)) < tol * max(zmax**2, 1e-300) or l > 200:
            return out


def nonlinear_N(z: np.ndarray, p: float) -> np.ndarray:
    """``N(z) = |1+z|^{p-1}(1+z) - 1 - (p+1)/2 z - (p-1)/2 conj(z)``, cancellation-free for small ``z``."""
    z = np.asarray(z, dtype=complex)
    a, b = 0.5 * (p + 1.0), 0.5 * (p - 1.0)
    out = np.empty_like(z)
    small = np.abs(z) < SERIES_RADIUS
    zs = z[small]
    ta, tb = _binomial_tail(a, zs), _binomial_tail(b, np.conj(zs))
    out[small] = ta + tb + (a * zs + ta) * (b * np.conj(zs) + tb)
    zl = z[~small]
    out[~small] = np.abs(1 + zl) ** (p - 1) * (1 + zl) - 1 - a * zl - b * np.conj(zl)
    return out


def pr_eval(v: EvenField, gs: GroundState) -> tuple[EvenField, EvenField]:
    """Linear part ``P(v)`` and remainder ``R(v)`` of ``|Q+v|^{p-1}(Q+v) - Q^p``."""
    p = gs.params.p
    q = gs.Q
    vv = np.asarray(v.values, dtype=complex)
    qp1 = gs.pow(p - 1.0)
    P = 0.5 * (p + 1) * qp1 * vv + 0.5 * (p - 1) * qp1 * np.conj(vv)
    R = np.zeros_like(vv)
    pos = q > 0
    z = np.zeros_like(vv)
    z[pos] = vv[pos] / q[pos]
    series = pos & (np.abs(z) < SERIES_RADIUS)
    R[series] = gs.pow(p)[series] * nonlinear_N(z[series], p)
    direct = ~series
    w = q[direct] + vv[direct]
    R[direct] = np.abs(w) ** (p - 1) * w - power(q[direct], p) - P[direct]
    return EvenField(gs.grid, P), EvenField(gs.grid, R)


# --- truncated power series in s ---------------------------------------------

def _mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Product of two coefficient stacks ``(J+1, n)``, truncated at order ``J``."""
    J = a.shape[0] - 1
    out = np.zeros_like(a)
    for i in range(J + 1):
        if not np.any(a[i]):
            continue
        out[i:] += a[i] * b[: J + 1 - i]
    return out


def remainder_coefficients(coef: np.ndarray, gs: GroundState,
                           table: dict[tuple[int, int], float]) -> np.ndarray:
    """Coefficients of ``R(sum_i s^i coef[i])`` in powers of ``s`` up to ``len(coef) - 1``.

    ``coef[0]`` must vanish; only ``l + m`` up to the table order contributes.
    Works on active nodes (``Q > 0``).
    """
    J = coef.shape[0] - 1
    q = gs.Q[:-1]
    p = gs.params.p
    lmax = max(l + m for l, m in table)
    one = np.zeros_like(coef)
    one[0] = 1.0
    vp, wp = [one], [one]
    for _ in range(lmax):
        vp.append(_mul(vp[-1], coef))
        wp.append(_mul(wp[-1], np.conj(coef)))
    out = np.zeros_like(coef)
    for (l, m), a in table.items():
        if l + m > J:
            continue
        out += a * power(q, p - l - m) * _mul(vp[l], wp[m])
    return out


@dataclass(frozen=True, eq=False)
class SpecialSeries:
    A: float
    k: int
    Z: list  # complex EvenFields Z_1..Z_k
    e_omega: float
    taylor: dict
    gs: GroundState = field(repr=False)
    ops: OperatorPair = field(repr=False)
    vandermonde_defect: float = float("nan")  # relative F_2 disagreement

    def coefficients(self, order: int | None = None) -> np.ndarray:
        J = max(order or self.k, self.k)
        c = np.zeros((J + 1, self.ops.n), dtype=complex)
        for j, z in enumerate(self.Z, start=1):
            c[j] = z.values[:-1]
        return c

    def V(self, t: float) -> EvenField:
        s = math.exp(-self.e_omega * t)
        return self.at_s(s)

    def at_s(self, s: float) -> EvenField:
        out = np.zeros(self.gs.grid.N + 1, dtype=complex)
        for j, z in enumerate(self.Z, start=1):
            out += s**j * z.values
        return EvenField(self.gs.grid, out)

    def residual(self, t: float) -> EvenField:
        """``eps_k(t) = dV/dt + Lcal V - i R(V)`` evaluated directly."""
        s = math.exp(-self.e_omega * t)
        return self.residual_at_s(s)

    def residual_at_s(self, s: float) -> EvenField:
        lin = np.zeros(self.ops.n, dtype=complex)
        for j, z in enumerate(self.Z, start=1):
            zz = z.values[:-1]
            lin += s**j * (self.ops.apply_block(zz) - j * self.e_omega * zz)
        _, R = pr_eval(self.at_s(s), self.gs)
        return EvenField(self.gs.grid, pad(lin) - 1j * R.values)


class _Resolvent:
    """``(-Lcal + lam)^{-1}`` on complex active vectors, via the real 2n system."""

    def __init__(self, ops: OperatorPair, lam: float):
        n = ops.n
        eye = sp.identity(n, format="csr") * lam
        # real: lam z1 + L- z2 = f1 ; imag: -L+ z1 + lam z2 = f2
        self._lu = spla.splu(sp.bmat([[eye, ops.Lminus], [-ops.Lplus, eye]], format="csc"))
        self.n = n

    def __call__(self, f: np.ndarray) -> np.ndarray:
        sol = self._lu.solve(np.concatenate([f.real, f.imag]))
        return sol[: self.n] + 1j * sol[self.n:]


def _vandermonde_coefficient(coef: np.ndarray, j: int, ops: OperatorPair, gs: GroundState,
                             e: float, h: float, m: int = 12) -> np.ndarray:
    """Coefficient of ``s^j`` in ``eps(s)`` from ``m`` direct evaluations at Chebyshev nodes."""
    nodes = h * np.cos(np.pi * (np.arange(m) + 0.5) / m)
    rows = []
    grid = gs.grid
    for s in nodes:
        v = np.zeros(grid.N + 1, dtype=complex)
        lin = np.zeros(ops.n, dtype=complex)
        for i in range(1, coef.shape[0]):
            if np.any(coef[i]):
                v[:-1] += s**i * coef[i]
                lin += s**i * (ops.apply_block(coef[i]) - i * e * coef[i])
        _, R = pr_eval(EvenField(grid, v), gs)
        rows.append(lin - 1j * R.values[:-1])
    vals = np.array(rows)
    # fit powers 1..m of s/h (eps has no constant term)
    vand = np.vander(nodes / h, m + 1, increasing=True)[:, 1:]
    fit = np.linalg.solve(vand, vals)
    return fit[j - 1] / h**j


def build_series(A: float, k: int, spec: LinearizedSpectrum, gs: GroundState,
                 cross_check: bool = True) -> SpecialSeries:
    if not 1 <= k <= K_MAX:
        raise ValueError(f"k must lie in 1..{K_MAX}")
    if not gs.discrete:
        gs = ground_state(gs.params, gs.grid, discrete=True)
    ops = assemble(gs)
    e = spec.e_omega
    table = taylor_coeffs(gs.params.p, k + 1)
    n = ops.n
    coef = np.zeros((k + 2, n), dtype=complex)
    coef[1] = A * spec.Yplus.values[:-1]
    defect = float("nan")
    known = np.concatenate([np.atleast_1d(spec.block_eigs), [e, -e, 0.0]])
    # s-scale for the Vandermonde nodes: keep |V/Q| well inside the series disc
    q = gs.Q[:-1]
    ratio = float(np.max(np.abs(coef[1]) / q)) if A else 1.0
    for j in range(2, k + 1):
        lam = j * e
        if np.min(np.abs(known - lam)) < 1e-3:
            raise SeriesError(f"resolvent near-singular at {j} e_omega")
        F = -1j * remainder_coefficients(coef[: j + 1], gs, table)[j]
        if cross_check and j == 2 and A:
            Fv = _vandermonde_coefficient(coef[:j], j, ops, gs, e, h=0.05 / ratio)
            defect = float(np.sqrt(np.dot(ops.w, np.abs(Fv - F) ** 2) / np.dot(ops.w, np.abs(F) ** 2)))
        coef[j] = _Resolvent(ops, lam)(F)
    Z = [EvenField(gs.grid, pad(coef[j])) for j in range(1, k + 1)]
    return SpecialSeries(A=A, k=k, Z=Z, e_omega=e, taylor=table, gs=gs, ops=ops,
                         vandermonde_defect=defect)


def forcing(series: SpecialSeries, j: int) -> np.ndarray:
    """``F_j`` of the current series: coefficient of ``s^j`` in ``-i R(V)``."""
    table = taylor_coeffs(series.gs.params.p, max(j, 2))
    c = series.coefficients(j)[: j + 1]
    return -1j * remainder_coefficients(c, series.gs, table)[j]


@dataclass(frozen=True, eq=False)
class Seed:
    field: EvenField  # Q + V(t0), without the e^{i omega t0} phase
    t0: float
    slope: float
    times: np.ndarray
    residuals: np.ndarray


def seed_and_residual(series: SpecialSeries, t0: float, n_fit: int = 13) -> Seed:
    """Seed ``Q + V_k(t0)`` and the fitted decay rate of ``||eps_k(t)||_{H^1}`` on ``[t0, t0 + 3/e]``."""
    gs = series.gs
    v0 = series.V(t0)
    if h1_norm(v0) > 0.1 * h1_norm(gs.profile):
        raise SeriesError(
            f"t0 too small: ||V(t0)||_H1 = {h1_norm(v0):.3g} > 0.1 ||Q||_H1"
        )
    u = EvenField(gs.grid, gs.Q + v0.values)
    if not series.A:
        return Seed(u, t0, float("nan"), np.array([]), np.array([]))
    ts = np.linspace(t0, t0 + 3.0 / series.e_omega, n_fit)
    res = np.array([h1_norm(series.residual(t)) for t in ts])
    slope = float(np.polyfit(ts, np.log(res), 1)[0])
    return Seed(u, t0, slope, ts, res)


def t0_for(series: SpecialSeries, fraction: float = 0.1) -> float:
    """Smallest ``t0`` (on a 0.05 lattice) with ``||V(t0)||_H1 <= fraction ||Q||_H1``."""
    target = fraction * h1_norm(series.gs.profile)
    y = h1_norm(series.Z[0])
    t = max(0.0, math.log(max(y / target, 1.0)) / series.e_omega)
    t = math.ceil(t / 0.05) * 0.05
    while h1_norm(series.V(t)) > target:
        t += 0.05
    return t
