"""Linearized operators around the ground state and their unstable eigenpair.

All matrices act on the active nodes ``0..N-1``; a matrix ``L`` is
self-adjoint for the trapezoid weights, i.e. ``diag(w) @ L`` is symmetric.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import DnlsError, EvenField, h1_norm_sq, inner, laplacian, l2_norm, pad
from .groundstate import GroundState


class SpectrumError(DnlsError):
    pass


@dataclass(frozen=True, eq=False)
class OperatorPair:
    gs: GroundState
    Lplus: sp.csr_matrix
    Lminus: sp.csr_matrix
    w: np.ndarray  # active quadrature weights

    @property
    def n(self) -> int:
        return self.Lplus.shape[0]

    def block(self) -> sp.csr_matrix:
        """``[[0, -L-], [L+, 0]]`` acting on ``(f1, f2)``."""
        return sp.bmat([[None, -self.Lminus], [self.Lplus, None]], format="csc")

    def apply_block(self, f: np.ndarray) -> np.ndarray:
        """Linearized generator on a complex active vector ``f = f1 + i f2``."""
        f1, f2 = f.real, f.imag
        return -(self.Lminus @ f2) + 1j * (self.Lplus @ f1)

    def quad(self, L: sp.csr_matrix, f: np.ndarray, g: np.ndarray | None = None) -> float:
        g = f if g is None else g
        return float(np.dot(self.w * (L @ f), g))

    def kernel_residual(self) -> tuple[float, float]:
        """``(interior, robin)`` parts of ``L- Q``.

        ``interior`` is the weighted L^2 norm of ``L- Q`` over nodes ``1..N-1``
        relative to ``||Q||``; ``robin`` is the weak-form residual ``w_0 |(L- Q)_0|``.
        The Robin row of the ghost-node stencil is first-order consistent, so it
        converges at second order only after weighting by the cell width.
        """
        q = self.gs.Q[:-1]
        r = self.Lminus @ q
        interior = math.sqrt(np.dot(self.w[1:], r[1:] ** 2) / np.dot(self.w, q**2))
        return interior, float(self.w[0] * abs(r[0]))


def assemble(gs: GroundState) -> OperatorPair:
    grid = gs.grid
    lap = laplacian(grid)
    qp = gs.pow(gs.params.p - 1.0)[:-1]
    w = gs.params.omega
    lplus = (-lap + sp.diags(w - gs.params.p * qp)).tocsr()
    lminus = (-lap + sp.diags(w - qp)).tocsr()
    return OperatorPair(gs=gs, Lplus=lplus, Lminus=lminus, w=grid.weights[:-1].copy())


def _sym(ops: OperatorPair, L) -> sp.csr_matrix:
    m = sp.diags(ops.w) @ L
    return ((m + m.T) * 0.5).tocsr()


# --- (L-)^{-1} on the complement of Q ---------------------------------------

class _LminusInverse:
    """Solve ``L- v = f`` with ``(v, Q) = 0`` for ``(f, Q) = 0`` via the bordered system."""

    def __init__(self, ops: OperatorPair):
        q = ops.gs.Q[:-1]
        wq = ops.w * q
        km = _sym(ops, ops.Lminus)
        n = ops.n
        col = sp.csr_matrix(wq.reshape(-1, 1))
        sys = sp.bmat([[km, col], [col.T, None]], format="csc")
        self._lu = spla.splu(sys)
        self.n = n
        self.w = ops.w

    def __call__(self, f: np.ndarray) -> np.ndarray:
        rhs = np.concatenate([self.w * f, [0.0]])
        return self._lu.solve(rhs)[: self.n]


def _project(v: np.ndarray, q: np.ndarray, w: np.ndarray) -> np.ndarray:
    return v - np.dot(w * v, q) / np.dot(w * q, q) * q


# --- spectrum ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LinearizedSpectrum:
    e_omega: float
    mu1: float
    Y1: EvenField
    Y2: EvenField
    residuals: tuple[float, float]
    pairing: float
    block_eigs: np.ndarray  # real eigenvalues found by the block-matrix route
    e_block: float
    mu2: float  # second eigenvalue of the projected pencil (simplicity margin)

    @property
    def Yplus(self) -> EvenField:
        return EvenField(self.Y1.grid, self.Y1.values + 1j * self.Y2.values)

    @property
    def Yminus(self) -> EvenField:
        return EvenField(self.Y1.grid, self.Y1.values - 1j * self.Y2.values)


def _dense_projected(ops: OperatorPair, k: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Dense solve of ``P L+ P w = mu P (L-)^{-1} P w`` in a W-orthonormal basis of ``Q^perp``."""
    n = ops.n
    q = ops.gs.Q[:-1]
    w = ops.w
    sw = np.sqrt(w)
    # orthonormal basis of the complement of sqrt(w) q in Euclidean space
    a = (sw * q)[:, None]
    full, _ = np.linalg.qr(np.hstack([a, np.eye(n)[:, : n - 1]]), mode="reduced")
    basis = full[:, 1:] / sw[:, None]  # columns W-orthonormal and W-orthogonal to q
    inv = _LminusInverse(ops)
    bcols = np.column_stack([inv(basis[:, j]) for j in range(n - 1)])
    A = basis.T @ (sp.diags(w) @ (ops.Lplus @ basis))
    B = basis.T @ (w[:, None] * bcols)
    A = 0.5 * (A + A.T)
    B = 0.5 * (B + B.T)
    vals, vecs = sla.eigh(A, B, subset_by_index=[0, k - 1])
    return vals, basis @ vecs


def _projected_pencil(ops: OperatorPair, guess: np.ndarray, sigma: float,
                      tol: float = 1e-13, maxiter: int = 60):
    """Shifted inverse iteration for ``P L+ P x = mu P (L-)^{-1} P x``.

    Each step solves the bordered system for ``(x, y)`` with ``y = (L-)^{-1} x``,
    both orthogonal to ``Q``:

        W L+ x - sigma W y + l1 W Q = W y_k
        W L- y -       W x + l2 W Q = 0

    Returns ``(mu, x, y)``.
    """
    q = ops.gs.Q[:-1]
    w = ops.w
    n = ops.n
    kp = _sym(ops, ops.Lplus)
    km = _sym(ops, ops.Lminus)
    W = sp.diags(w)
    wq = sp.csr_matrix((w * q).reshape(-1, 1))
    system = sp.bmat(
        [
            [kp, -sigma * W, wq, None],
            [-W, km, None, wq],
            [wq.T, None, None, None],
            [None, wq.T, None, None],
        ],
        format="csc",
    )
    lu = spla.splu(system)
    inv = _LminusInverse(ops)
    x = _project(guess, q, w)
    y = inv(x)
    mu = sigma
    for _ in range(maxiter):
        sol = lu.solve(np.concatenate([w * y, np.zeros(n + 2)]))
        x_new, y_new = sol[:n], sol[n : 2 * n]
        scale = math.sqrt(abs(np.dot(w * x_new, y_new)))
        x_new, y_new = x_new / scale, y_new / scale
        mu_new = float(np.dot(x_new, kp @ x_new) / np.dot(w * x_new, y_new))
        done = abs(mu_new - mu) < tol * abs(mu_new)
        x, y, mu = x_new, y_new, mu_new
        if done:
            break
    return mu, x, y


def _interp(values: np.ndarray, x_from: np.ndarray, x_to: np.ndarray) -> np.ndarray:
    from scipy.interpolate import CubicSpline

    return CubicSpline(x_from, values)(x_to)


def _coarse_ops(gs: GroundState, n_coarse: int) -> OperatorPair:
    from .core import make_grid
    from .groundstate import ground_state

    grid = make_grid(gs.params, gs.grid.L, n_coarse, check_decay=False)
    return assemble(ground_state(gs.params, grid, discrete=gs.discrete))


def _block_route(ops: OperatorPair, n_coarse: int) -> tuple[np.ndarray, float]:
    """Real eigenvalues of the block matrix: dense on a coarse grid, refined by shift-invert."""
    if ops.n <= n_coarse:
        cops = ops
    else:
        cops = _coarse_ops(ops.gs, n_coarse)
    vals = sla.eigvals(cops.block().toarray())
    scale = max(1.0, ops.gs.params.omega)
    real = np.sort(vals[np.abs(vals.imag) < 1e-6 * scale].real)
    pos = real[real > 1e-3 * scale]
    if pos.size == 0:
        raise SpectrumError("spectrum failed: block matrix has no positive real eigenvalue")
    e0 = float(pos.max())
    if cops is ops:
        return real, e0
    evs = spla.eigs(ops.block(), k=1, sigma=e0, return_eigenvectors=False)
    e = float(evs[0].real)
    if abs(evs[0].imag) > 1e-8 * e:
        raise SpectrumError("spectrum failed: refined block eigenvalue left the real axis")
    real = np.where(np.isclose(real, e0), e, real)
    real = np.where(np.isclose(real, -e0), -e, real)
    return real, e


def solve_spectrum(ops: OperatorPair, gs: GroundState | None = None,
                   n_coarse: int = 300) -> LinearizedSpectrum:
    """Unstable eigenpair from the constrained Rayleigh quotient, cross-checked
    against the block matrix eigenvalues."""
    gs = gs or ops.gs
    if not gs.discrete:
        # L- annihilates Q exactly only for the discrete ground state
        from .groundstate import ground_state

        gs = ground_state(gs.params, gs.grid, discrete=True)
        ops = assemble(gs)
    grid = gs.grid
    q = gs.Q[:-1]
    w = ops.w

    if ops.n <= n_coarse:
        vals, vecs = _dense_projected(ops, k=2)
        xi = vecs[:, 0]
        inv = _LminusInverse(ops)
        v = inv(xi)
        mu1, mu2 = float(vals[0]), float(vals[1])
    else:
        cops = _coarse_ops(gs, n_coarse)
        cvals, cvecs = _dense_projected(cops, k=2)
        cv = _LminusInverse(cops)(cvecs[:, 0])
        guess = _interp(pad(cv), cops.gs.grid.x, grid.x)[:-1]
        guess = ops.Lminus @ guess
        sigma = float(cvals[0]) * (1.0 + 1e-3)
        mu1, xi, v = _projected_pencil(ops, guess, sigma)
        mu2 = float(cvals[1])
    if not mu1 < 0:
        raise SpectrumError(f"spectrum failed: mu1={mu1} is not negative")
    e = math.sqrt(-mu1)

    # Lagrange multiplier of the constraint: L+ xi = mu1 v + alpha Q
    lx = ops.Lplus @ xi
    alpha = float(np.dot(w * (lx - mu1 * v), q) / np.dot(w * q, q))
    y1 = -xi
    y2 = e * v - alpha / e * q
    Y1 = EvenField(grid, pad(y1))
    Y2 = EvenField(grid, pad(y2))
    norm = l2_norm(EvenField(grid, Y1.values + 1j * Y2.values))
    Y1, Y2 = Y1 / norm, Y2 / norm
    pairing = float(np.dot(w * gs.pow(gs.params.p)[:-1], Y1.values[:-1]))
    if pairing < 0:
        Y1, Y2, pairing = -Y1, -Y2, -pairing

    r1 = ops.Lplus @ Y1.values[:-1] - e * Y2.values[:-1]
    r2 = ops.Lminus @ Y2.values[:-1] + e * Y1.values[:-1]
    res = (math.sqrt(np.dot(w, r1**2)), math.sqrt(np.dot(w, r2**2)))

    real, e_block = _block_route(ops, n_coarse)
    if abs(e_block - e) > 0.01 * e:
        raise SpectrumError(f"spectrum failed: routes disagree (e={e}, block={e_block})")
    return LinearizedSpectrum(
        e_omega=e, mu1=mu1, Y1=Y1, Y2=Y2, residuals=res, pairing=pairing,
        block_eigs=real, e_block=e_block, mu2=mu2,
    )


# --- diagnostics --------------------------------------------------------------

def decay_check(spec: LinearizedSpectrum, gs: GroundState, eta: float | None = None) -> float:
    """``max_{1 <= x <= L-2} Q^{-1} e^{eta x} (|Y1| + |Y2|)`` with ``eta = 0.05 sqrt(omega)``."""
    if eta is None:
        eta = 0.05 * math.sqrt(gs.params.omega)
    x = gs.grid.x
    sel = (x >= 1.0) & (x <= gs.grid.L - 2.0)
    y = np.abs(spec.Y1.values[sel]) + np.abs(spec.Y2.values[sel])
    return float(np.max(np.exp(eta * x[sel]) * y / gs.Q[sel]))


def phi_form(f: EvenField, ops: OperatorPair) -> float:
    """``Phi(f) = 1/2 <L+ f1, f1> + 1/2 <L- f2, f2>``."""
    f1 = f.values.real[:-1]
    f2 = f.values.imag[:-1]
    return 0.5 * ops.quad(ops.Lplus, f1) + 0.5 * ops.quad(ops.Lminus, f2)


def project_orthogonal(f: EvenField, spec: LinearizedSpectrum | None, gs: GroundState,
                       which: str = "G") -> EvenField:
    """L^2 Gram-Schmidt onto ``G^perp`` or ``G~^perp``.

    The real and imaginary parts decouple: ``G`` removes ``Q^p`` from ``f1`` and
    ``Q`` from ``f2``; ``G~`` removes ``Y2`` from ``f1`` and ``{Q, Y1}`` from ``f2``.
    """
    grid = gs.grid
    q = gs.Q
    if which == "G":
        c1, c2 = [gs.pow(gs.params.p)], [q]
    elif which in ("Gt", "G~", "Gtilde"):
        if spec is None:
            raise ValueError("G~ projection needs the spectrum")
        c1, c2 = [spec.Y2.values], [q, spec.Y1.values]
    else:
        raise ValueError(f"unknown orthogonality set {which!r}")

    def gs_remove(v, cons):
        basis = []
        for c in cons:
            b = c.astype(float).copy()
            for e in basis:
                b -= np.dot(grid.weights * b, e) * e
            b /= math.sqrt(np.dot(grid.weights * b, b))
            basis.append(b)
        for e in basis:
            v = v - np.dot(grid.weights * v, e) * e
        return v

    f1 = gs_remove(f.values.real.astype(float), c1)
    f2 = gs_remove(f.values.imag.astype(float), c2)
    return EvenField(grid, f1 + 1j * f2)


def coercivity_probe(f: EvenField, spec: LinearizedSpectrum | None, gs: GroundState,
                     which: str = "G", ops: OperatorPair | None = None) -> float:
    """``Phi(f^) / ||f^||^2_{H^1}`` for the projection ``f^`` of ``f``."""
    ops = ops or assemble(gs)
    fh = project_orthogonal(f, spec, gs, which)
    fh.values[-1] = 0.0
    nf = math.sqrt(inner(f, f))
    if math.sqrt(inner(fh, fh)) < 1e-12 * max(nf, 1e-300):
        raise DnlsError("degenerate projection")
    return phi_form(fh, ops) / h1_norm_sq(fh)
