"""Strang-split Crank-Nicolson integration with conservation, virial and
modulation diagnostics, and the scatter/blowup/converge classifier."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import DnlsError, EvenField, HalfLineGrid, ModelParams, h1_norm, integrate, laplacian
from .functionals import localized_virial, pieces, _k
from .groundstate import GroundState, ground_state

ENERGY_TOL = 1e-8
DT_MIN = 1e-8
ORTHO_TOL = 1e-10


class TruncationBreached(DnlsError):
    """Radiation reached the Dirichlet wall; ``trajectory`` holds what was computed."""

    def __init__(self, msg: str, trajectory=None):
        super().__init__(msg)
        self.trajectory = trajectory


class StepError(DnlsError):
    pass


# --- stepper -----------------------------------------------------------------

_FACTORS: dict = {}


def _cn_solver(grid: HalfLineGrid, dt: float):
    key = (grid.N, grid.L, grid.gamma, dt)
    lu = _FACTORS.get(key)
    if lu is None:
        if len(_FACTORS) > 32:
            _FACTORS.clear()
        lap = laplacian(grid)
        n = grid.N
        a = (sp.identity(n, format="csc") - 0.5j * dt * lap).tocsc()
        try:
            lu = spla.splu(a)
        except RuntimeError as exc:  # singular factor
            raise StepError(f"Crank-Nicolson factorisation failed: {exc}") from exc
        _FACTORS[key] = (lu, lap)
        return lu, lap
    return lu


def _phase(v: np.ndarray, tau: float, p: float) -> np.ndarray:
    return v * np.exp(1j * tau * np.abs(v) ** (p - 1.0))


def step(u: EvenField, dt: float, params: ModelParams) -> EvenField:
    """One Strang step: half nonlinear phase, Crank-Nicolson linear step, half phase."""
    if dt == 0:
        raise ValueError("dt must be nonzero")
    grid = u.grid
    lu, lap = _cn_solver(grid, dt)
    v = _phase(np.asarray(u.values, dtype=complex), 0.5 * dt, params.p)[:-1]
    rhs = v + 0.5j * dt * (lap @ v)
    v = lu.solve(rhs)
    if not np.all(np.isfinite(v)):
        raise StepError("non-finite values after linear solve")
    out = np.zeros(grid.N + 1, dtype=complex)
    out[:-1] = _phase(v, 0.5 * dt, params.p)
    return EvenField(grid, out)


# --- modulation --------------------------------------------------------------

@dataclass(frozen=True)
class Modulation:
    theta: float
    rho: float
    g: np.ndarray | None
    h: np.ndarray | None
    g_h1: float
    h_h1: float
    in_modulation: bool
    defects: tuple[float, float] = (float("nan"), float("nan"))


def _newton_phase(c: complex, theta: float, tol: float = 1e-15, maxiter: int = 50) -> float:
    """Solve ``Im(e^{-i theta} c) = 0`` with ``Re(e^{-i theta} c) > 0`` by Newton from ``theta``."""
    for _ in range(maxiter):
        z = c * complex(math.cos(theta), -math.sin(theta))
        f, df = z.imag, -z.real
        if df >= 0:  # wrong branch: jump by pi
            theta += math.pi
            continue
        d = f / df
        theta -= d
        if abs(d) < tol:
            return theta
    raise DnlsError("Newton failed in phase modulation")


def modulation_extract(u: EvenField, gs: GroundState, spec=None, prev_theta: float | None = None,
                       mu0: float | None = None, force: bool = False) -> Modulation:
    """``u = e^{i theta}(Q + rho Q + h)`` with ``Im int h Q = Re int h Q^p = 0``.

    ``theta`` is the root of ``Im int (e^{-i theta} u - Q) Q = 0`` nearest the
    branch of ``prev_theta``.  Outside the tube ``|mu(u)| < mu0`` the flag is
    false and, unless ``force`` is set, ``g``/``h`` are not computed.
    """
    params = gs.params
    grid = gs.grid
    q = gs.Q
    mu0 = 0.2 * gs.hdot_sq if mu0 is None else mu0
    pc = pieces(u, params)
    mu_u = gs.hdot_sq - (pc.grad - params.gamma * pc.point)
    inside = abs(mu_u) < mu0
    if not (inside or force):
        return Modulation(float("nan"), float("nan"), None, None, float("nan"), float("nan"), False)
    c = complex(np.dot(grid.weights, u.values * q))
    seed = math.atan2(c.imag, c.real) if prev_theta is None else prev_theta
    try:
        theta = _newton_phase(c, seed)
    except DnlsError:
        return Modulation(float("nan"), float("nan"), None, None, float("nan"), float("nan"), False)
    if prev_theta is not None:
        theta += 2 * math.pi * round((prev_theta - theta) / (2 * math.pi))
    g = np.exp(-1j * theta) * u.values - q
    qp = gs.pow(params.p)
    rho = float(np.real(np.dot(grid.weights, g * qp)) / gs.lp1)
    h = g - rho * q
    d1 = abs(float(np.imag(np.dot(grid.weights, h * q))))
    d2 = abs(float(np.real(np.dot(grid.weights, h * qp))))
    return Modulation(
        theta=theta,
        rho=rho,
        g=g,
        h=h,
        g_h1=h1_norm(EvenField(grid, g)),
        h_h1=h1_norm(EvenField(grid, h)),
        in_modulation=inside,
        defects=(d1, d2),
    )


# --- trajectories --------------------------------------------------------------

@dataclass(frozen=True)
class TrajectorySample:
    t: float
    mass: float
    energy: float
    K_gamma: float
    mu: float
    sup_abs: float
    grad_l2: float
    J_R: float
    dJ_R: float
    theta: float
    rho: float
    h_h1: float
    in_modulation: bool
    g_h1: float = float("nan")
    dt: float = float("nan")

    def row(self) -> dict:
        return {
            "t": self.t,
            "mass": self.mass,
            "energy": self.energy,
            "K": self.K_gamma,
            "mu": self.mu,
            "sup": self.sup_abs,
            "grad": self.grad_l2,
            "JR": self.J_R,
            "dJR": self.dJ_R,
            "theta": self.theta,
            "rho": self.rho,
            "h": self.h_h1,
            "inmod": int(self.in_modulation),
        }


TRAJECTORY_COLUMNS = ["t", "mass", "energy", "K", "mu", "sup", "grad", "JR", "dJR",
                      "theta", "rho", "h", "inmod"]


@dataclass
class Trajectory:
    samples: list
    final: EvenField
    status: str  # "completed" | "blowup" | "truncation"
    t_final: float
    min_dt: float
    steps: int
    fields: list = field(default_factory=list)  # optional (t, EvenField) snapshots

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.samples], dtype=float)


def _energy_scale(pc, params: ModelParams) -> tuple[float, float]:
    e = 0.5 * (pc.grad - params.gamma * pc.point) - pc.lp1 / (params.p + 1)
    return e, max(0.5 * (pc.grad - params.gamma * pc.point) + pc.lp1 / (params.p + 1), 1e-300)


def _sample(t, u, params, gs, R, prev_theta, omega_phase, dt) -> TrajectorySample:
    pc = pieces(u, params)
    e, _ = _energy_scale(pc, params)
    vr = localized_virial(u, params, R)
    mod = modulation_extract(u, gs, prev_theta=prev_theta)
    theta = mod.theta - omega_phase if mod.in_modulation else float("nan")
    return TrajectorySample(
        t=t,
        mass=pc.mass,
        energy=e,
        K_gamma=_k(pc, params, 0.5, 1.0),
        mu=gs.hdot_sq - (pc.grad - params.gamma * pc.point),
        sup_abs=float(np.max(np.abs(u.values))),
        grad_l2=math.sqrt(pc.grad),
        J_R=vr.J_R,
        dJ_R=vr.dJ_R,
        theta=theta,
        rho=mod.rho,
        h_h1=mod.h_h1,
        in_modulation=mod.in_modulation,
        g_h1=mod.g_h1,
        dt=dt,
    ), mod


def grad_ceiling(mass: float, grid: HalfLineGrid) -> float:
    """Upper bound ``2 sqrt(M)/dx`` of the discrete ``||u'||`` at mass ``M``."""
    return 2.0 * math.sqrt(mass) / grid.dx


def default_R(grid: HalfLineGrid) -> float:
    return min(10.0, grid.L / 3.0)


def evolve(u0: EvenField, params: ModelParams, t_span: tuple[float, float], dt0: float,
           record_every: float, gs: GroundState | None = None, R: float | None = None,
           energy_tol: float = ENERGY_TOL, dt_min: float = DT_MIN,
           blowup_growth: float = 1e3, ceiling_fraction: float = 0.25, wall_tol: float = 1e-6,
           keep_fields: bool = False, adaptive: bool = True) -> Trajectory:
    """Integrate from ``t_span[0]`` to ``t_span[1]`` (backward when ``t1 < t0``).

    A step whose relative energy change exceeds ``energy_tol`` is rejected and
    retried at half the step.  The run stops with status ``"blowup"`` when the
    step falls below ``dt_min`` or when ``||u'||`` passes ``grad_limit``: the
    smaller of ``blowup_growth`` times its initial value and ``ceiling_fraction``
    of ``2 sqrt(M)/dx``, the largest gradient the grid can represent at mass
    ``M``.  It raises :class:`TruncationBreached` when the mass on the last two
    nodes exceeds ``wall_tol``.
    """
    t0, t1 = map(float, t_span)
    direction = 1.0 if t1 >= t0 else -1.0
    dt0 = abs(dt0)
    grid = u0.grid
    gs = gs or ground_state(params, grid, discrete=True)
    R = R or default_R(grid)
    u = EvenField(grid, np.asarray(u0.values, dtype=complex).copy())
    u.values[-1] = 0.0

    samples: list[TrajectorySample] = []
    fields = []
    s, mod = _sample(t0, u, params, gs, R, None, params.omega * t0, dt0)
    samples.append(s)
    if keep_fields:
        fields.append((t0, u.copy()))
    prev_theta = mod.theta if mod.in_modulation else None
    grad0 = max(s.grad_l2, 1e-300)
    grad_limit = min(blowup_growth * grad0, ceiling_fraction * grad_ceiling(s.mass, grid))

    t = t0
    dt = dt0
    calm = 0
    min_dt = dt0
    steps = 0
    next_rec = t0 + direction * record_every
    status = "completed"
    pc = pieces(u, params)
    e_old, scale = _energy_scale(pc, params)

    def wall_mass(v):
        return float(np.dot(grid.weights[-3:], np.abs(v.values[-3:]) ** 2))

    while direction * (t1 - t) > 1e-12:
        h = min(dt, abs(next_rec - t), abs(t1 - t))
        try:
            new = step(u, direction * h, params)
        except StepError:
            new = None
        if new is not None:
            pcn = pieces(new, params)
            e_new, scale_new = _energy_scale(pcn, params)
            defect = abs(e_new - e_old) / max(scale, scale_new)
        if new is None or (adaptive and defect > energy_tol):
            dt = 0.5 * h
            min_dt = min(min_dt, dt)
            calm = 0
            if dt < dt_min:
                status = "blowup"
                break
            continue
        u, e_old, scale = new, e_new, scale_new
        t += direction * h
        steps += 1
        if math.sqrt(max(pcn.grad, 0.0)) > grad_limit:
            status = "blowup"
            break
        if adaptive and defect < 0.1 * energy_tol and dt < dt0:
            calm += 1
            if calm >= 16:
                dt = min(2 * dt, dt0)
                calm = 0
        if abs(t - next_rec) < 1e-12 or direction * (t - t1) >= -1e-12:
            s, mod = _sample(t, u, params, gs, R, prev_theta, params.omega * t, h)
            samples.append(s)
            if keep_fields:
                fields.append((t, u.copy()))
            if mod.in_modulation:
                prev_theta = mod.theta
            next_rec = t + direction * record_every
            if wall_mass(u) > wall_tol:
                traj = Trajectory(samples, u, "truncation", t, min_dt, steps, fields)
                raise TruncationBreached(
                    f"truncation breached at t={t:.6g}: wall mass {wall_mass(u):.3g}", traj
                )
    if status == "blowup" and (not samples or samples[-1].t != t):
        s, _ = _sample(t, u, params, gs, R, prev_theta, params.omega * t, dt)
        samples.append(s)
    return Trajectory(samples, u, status, t, min_dt, steps, fields)


# --- classifier ----------------------------------------------------------------

class Verdict(str, enum.Enum):
    SCATTER = "Scatter"
    BLOWUP = "Blowup"
    CONVERGE = "ConvergeToGroundState"
    UNDETERMINED = "Undetermined"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class ClassificationResult:
    verdict: Verdict
    final_t: float
    rate: float  # fitted decay rate of ||g||_{H^1} (converge) or nan
    sup_decay: float
    grad_growth: float
    K_signs: tuple[bool, bool]  # (all positive, all negative)
    status: str
    trajectory: Trajectory | None = field(default=None, repr=False, compare=False)

    def row(self, init: str = "") -> dict:
        return {"init": init, "verdict": str(self.verdict), "final_t": self.final_t,
                "rate": self.rate}


def fit_rate(t: np.ndarray, y: np.ndarray) -> float:
    """Least-squares ``-d log y / dt``."""
    return float(-np.polyfit(t, np.log(y), 1)[0])


def judge(traj: Trajectory, horizon: float, sup_factor: float = 3.0,
          tail: float = 0.3) -> ClassificationResult:
    """Turn a trajectory into a verdict (see the module docstring of :func:`classify`)."""
    t = traj.column("t")
    sup = traj.column("sup_abs")
    grad = traj.column("grad_l2")
    K = traj.column("K_gamma")
    inmod = np.array([s.in_modulation for s in traj.samples])
    gnorm = traj.column("g_h1")
    sup_decay = float(sup[0] / np.min(sup))
    grad_growth = float(np.max(grad) / grad[0])
    kpos, kneg = bool(np.all(K > 0)), bool(np.all(K < 0))
    elapsed = abs(traj.t_final - t[0])
    rate = float("nan")

    def result(v):
        return ClassificationResult(v, traj.t_final, rate, sup_decay, grad_growth, (kpos, kneg),
                                    traj.status, traj)

    if traj.status == "blowup":
        return result(Verdict.BLOWUP)
    start = t[0] + np.sign(t[-1] - t[0]) * (1 - tail) * horizon
    last = (t - start) * np.sign(t[-1] - t[0]) >= -1e-12
    if elapsed >= horizon * (1 - 1e-9) and last.sum() >= 3 and np.all(inmod[last]):
        rate = fit_rate(np.abs(t[last] - t[0]), gnorm[last])
        if rate > 0:
            return result(Verdict.CONVERGE)
    if sup_decay >= sup_factor and kpos and not inmod[-1]:
        return result(Verdict.SCATTER)
    return result(Verdict.UNDETERMINED)


def classify(u0: EvenField, params: ModelParams, horizon: float, direction: str = "forward",
             dt0: float = 1e-3, record_every: float = 0.05, gs: GroundState | None = None,
             t_start: float = 0.0, **kw) -> ClassificationResult:
    """Evolve ``u0`` over ``horizon`` time units and apply the detectors.

    * Blowup: the integrator stopped on step collapse or gradient growth.
    * ConvergeToGroundState: ``|mu| < mu0`` over the last 30% of the horizon and
      ``log ||g||_{H^1}`` has a negative fitted slope.
    * Scatter: ``sup|u|`` dropped by ``sup_factor`` with ``K > 0`` throughout and
      no final modulation lock.
    A truncation breach ends the run; the verdict is then formed from the
    samples recorded so far.
    """
    sup_factor = kw.pop("sup_factor", 3.0)
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    sgn = 1.0 if direction == "forward" else -1.0
    try:
        traj = evolve(u0, params, (t_start, t_start + sgn * horizon), dt0, record_every,
                      gs=gs, **kw)
    except TruncationBreached as exc:
        traj = exc.trajectory
    return judge(traj, horizon, sup_factor=sup_factor)
