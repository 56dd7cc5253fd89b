"""Prescribed mean intensity: solve S_1(rho) = n g(x, rho) on S^n.

With w = 1/rho the equation becomes Lap w + n w/2 = Q(x, w, grad w) where

    Q = n |grad w|^2 / (2w) + (w^2 + |grad w|^2) / (2w) * n g(x, 1/w).

The homotopy Q^t = t Q + (1 - t) q(w), q(w) = n w^(1+eps) Rbar^eps / 2, starts
from the unique solution w = 1/Rbar at t = 0. Each t is solved by damped
Picard iteration of the map T(w, t) = (Lap + n/2)^{-1} Q^t(w).

The constant mode of T has multiplier dQ/dw / (n/2), which exceeds one at
t = 0 (it equals 1 + eps), so plain Picard on T diverges there. The iteration
therefore uses the shifted map

    T_sigma(w, t) = (Lap + n/2 - sigma)^{-1} (Q^t(w) - sigma w),

which has the same fixed points for every sigma and reduces to T at
sigma = 0. ``shift="auto"`` picks sigma above sup dQ^t/dw whenever that
exceeds n/2.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .analytic_shapes import HeightProfile
from .kummer_core import RadialHypersurface, mean_intensity_operator
from .sphere_geometry import (
    ChartPoints,
    ScalarField,
    SphereGrid,
    apply_shifted_laplacian,
    build_grid,
    gradient_norm2,
    integrate,
    random_expansion,
    solve_shifted_laplacian,
)


class SolverError(RuntimeError):
    pass


class HypothesisError(SolverError):
    pass


class ConsistencyError(AssertionError):
    """A property guaranteed by the theory failed numerically."""


# ---------------------------------------------------------------------------
# Prescribed data g(x, rho)
# ---------------------------------------------------------------------------


class Prescription:
    """g(x, rho) > 0; subclasses implement ``value`` and may override ``drho``."""

    kind = "abstract"
    fd_step = None  # set by AnnulusProblem to (R2 - R1) * 1e-5

    def value(self, points: ChartPoints, rho: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def drho(self, points: ChartPoints, rho: np.ndarray) -> np.ndarray:
        h = self.fd_step or 1e-6
        return (self.value(points, rho + h) - self.value(points, rho - h)) / (2.0 * h)

    def to_config(self) -> dict:
        raise NotImplementedError


@dataclass
class ConstantG(Prescription):
    constant: float = 1.0
    kind = "constant"

    def value(self, points, rho):
        return np.full(np.shape(rho), float(self.constant))

    def drho(self, points, rho):
        return np.zeros(np.shape(rho))

    def to_config(self):
        return {"kind": "constant", "value": self.constant}


@dataclass
class PowerG(Prescription):
    """g = coefficient * rho^exponent."""

    coefficient: float = 1.0
    exponent: float = -1.0
    kind = "power"

    def value(self, points, rho):
        return self.coefficient * np.asarray(rho) ** self.exponent

    def drho(self, points, rho):
        return self.coefficient * self.exponent * np.asarray(rho) ** (self.exponent - 1.0)

    def to_config(self):
        return {"kind": "power", "coefficient": self.coefficient, "exponent": self.exponent}


@dataclass
class TableG(Prescription):
    """g = h(x) * (rho / reference)^exponent with h tabulated on a grid."""

    table: ScalarField = None
    exponent: float = 0.0
    reference: float = 1.0
    kind = "table"

    def _h(self, points: ChartPoints) -> np.ndarray:
        grid_pts = self.table.grid.points
        if points is grid_pts or (len(points) == len(grid_pts) and np.array_equal(points.u, grid_pts.u)):
            return self.table.values
        return self.table.expansion().evaluate(points, order=0)[0]

    def value(self, points, rho):
        return self._h(points) * (np.asarray(rho) / self.reference) ** self.exponent

    def drho(self, points, rho):
        rho = np.asarray(rho)
        return self._h(points) * self.exponent / self.reference * (rho / self.reference) ** (self.exponent - 1.0)

    def to_config(self):
        return {
            "kind": "table",
            "values": self.table.values.tolist(),
            "exponent": self.exponent,
            "reference": self.reference,
        }


@dataclass
class ManufacturedG(Prescription):
    """g = (S_1(rho*)(x) / n) * rho*(x) / rho, solved exactly by rho = rho*.

    S_1(rho*) is computed from the exact derivatives of ``rho_star``; the
    factor rho*/rho makes g strictly decreasing in rho.
    """

    rho_star: HeightProfile = None
    kind = "manufactured"

    def target(self, points: ChartPoints):
        R = RadialHypersurface.from_function(self.rho_star, points)
        return mean_intensity_operator(R) / points.n, R.rho

    def value(self, points, rho):
        s1n, rs = self.target(points)
        return s1n * rs / np.asarray(rho)

    def drho(self, points, rho):
        s1n, rs = self.target(points)
        return -s1n * rs / np.asarray(rho) ** 2

    def to_config(self):
        return {
            "kind": "manufactured",
            "profile": self.rho_star.kind,
            "amplitude": self.rho_star.amplitude,
            "axis": self.rho_star.axis.tolist(),
            "scale": self.rho_star.scale,
            "power": self.rho_star.power,
        }


@dataclass
class AnnulusProblem:
    """Data (g, R1, R2) on S^n x [R1, R2]; the equation is S_1 = n g."""

    n: int
    g: Prescription
    R1: float
    R2: float

    def __post_init__(self):
        if not (0.0 < self.R1 < self.R2):
            raise ValueError("radii must satisfy 0 < R1 < R2")
        if self.n not in (1, 2):
            raise ValueError("only S^1 and S^2 are supported")
        self.g.fd_step = (self.R2 - self.R1) * 1e-5

    def gbar(self, points, rho):
        return self.n * self.g.value(points, rho)

    @property
    def w_band(self) -> tuple[float, float]:
        return 1.0 / self.R2, 1.0 / self.R1


# ---------------------------------------------------------------------------
# Configuration and state
# ---------------------------------------------------------------------------


@dataclass
class HomotopyConfig:
    epsilon: float = 1.0
    r_bar: float | None = None  # default sqrt(R1 R2)
    dt: float = 0.1
    dt_min: float = 1e-4
    dt_max: float = 0.5
    damping: float = 0.5
    tol: float | None = None  # default 1e-10 on S^1, 1e-8 on S^2
    max_iter: int = 400
    shift: float | str = "auto"
    divergence_factor: float = 10.0

    def resolved(self, problem: AnnulusProblem) -> "HomotopyConfig":
        cfg = replace(self)
        if cfg.r_bar is None:
            cfg.r_bar = float(np.sqrt(problem.R1 * problem.R2))
        if cfg.tol is None:
            cfg.tol = 1e-10 if problem.n == 1 else 1e-8
        cfg.validate(problem)
        return cfg

    def validate(self, problem: AnnulusProblem):
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if not (problem.R1 < self.r_bar < problem.R2):
            raise ValueError("r_bar must lie strictly between R1 and R2")
        if not (0.0 < self.damping <= 1.0):
            raise ValueError("damping must lie in (0, 1]")
        if not (0.0 < self.dt <= 1.0) or self.dt_min <= 0.0:
            raise ValueError("invalid continuation step sizes")
        if self.tol is not None and self.tol <= 0.0:
            raise ValueError("tolerance must be positive")
        if not (self.shift == "auto" or isinstance(self.shift, (int, float))):
            raise ValueError("shift must be 'auto' or a number")


@dataclass(frozen=True)
class TraceRow:
    t: float
    iteration: int
    step_norm: float
    residual: float


@dataclass
class PicardResult:
    w: ScalarField
    converged: bool
    iterations: int
    trace: list
    reason: str = ""


@dataclass
class HomotopyState:
    t: float
    w: ScalarField
    trace: list = field(default_factory=list)
    converged: bool = False
    message: str = ""
    barrier: str = ""
    residual: float = float("nan")

    @property
    def rho(self) -> ScalarField:
        return 1.0 / self.w

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "iteration", "step_norm", "residual"])
            for row in self.trace:
                writer.writerow([repr(row.t), row.iteration, repr(row.step_norm), repr(row.residual)])


# ---------------------------------------------------------------------------
# The homotopy operators
# ---------------------------------------------------------------------------


def _clamped_rho(w: np.ndarray, problem: AnnulusProblem) -> np.ndarray:
    lo, hi = problem.w_band
    return 1.0 / np.clip(w, lo, hi)


def rhs_Q_t(w: ScalarField, t: float, problem: AnnulusProblem, config: HomotopyConfig) -> ScalarField:
    """Q^t(x, w, grad w) at the grid points; w is clamped only inside g."""
    if not (0.0 <= t <= 1.0):
        raise ValueError("t must lie in [0, 1]")
    v = w.values
    if np.any(v <= 0.0):
        raise SolverError("iterate w must be positive")
    n = problem.n
    g2 = gradient_norm2(w)
    out = (1.0 - t) * 0.5 * n * v ** (1.0 + config.epsilon) * config.r_bar**config.epsilon
    if t > 0.0:
        gbar = problem.gbar(w.grid.points, _clamped_rho(v, problem))
        Q = n * g2 / (2.0 * v) + (v**2 + g2) / (2.0 * v) * gbar
        out = out + t * Q
    return w.grid.field(out)


def _dQ_dw(w: ScalarField, t: float, problem: AnnulusProblem, config: HomotopyConfig) -> np.ndarray:
    """Pointwise d Q^t / d w at fixed grad w."""
    v = w.values
    n = problem.n
    eps = config.epsilon
    out = (1.0 - t) * 0.5 * n * (1.0 + eps) * (v * config.r_bar) ** eps
    if t > 0.0:
        g2 = gradient_norm2(w)
        pts = w.grid.points
        rho = _clamped_rho(v, problem)
        gbar = problem.gbar(pts, rho)
        lo, hi = problem.w_band
        inside = (v >= lo) & (v <= hi)
        dg = np.where(inside, n * problem.g.drho(pts, rho) * (-1.0 / v**2), 0.0)
        V = (v**2 + g2) / (2.0 * v)
        dQ = -n * g2 / (2.0 * v**2) + (v**2 - g2) / (2.0 * v**2) * gbar + V * dg
        out = out + t * dQ
    return out


def auto_shift(w: ScalarField, t: float, problem: AnnulusProblem, config: HomotopyConfig) -> float:
    if config.shift != "auto":
        return float(config.shift)
    n = problem.n
    mu = float(np.max(_dQ_dw(w, t, problem, config)))
    if mu < 0.5 * n:
        return 0.0
    return mu + 0.25 * n


def linear_step_T(w: ScalarField, t: float, problem: AnnulusProblem, config: HomotopyConfig,
                  shift: float = 0.0) -> ScalarField:
    """T(w, t): solve (Lap + n/2 - shift) v = Q^t(w) - shift w."""
    rhs = rhs_Q_t(w, t, problem, config)
    if shift != 0.0:
        rhs = rhs - shift * w
    return solve_shifted_laplacian(rhs, shift)


def fixed_point_residual(w: ScalarField, t: float, problem: AnnulusProblem, config: HomotopyConfig) -> float:
    """sup |(Lap + n/2) w - P Q^t(w)| with P the projection onto the grid's harmonics.

    Without P the value also contains the truncation tail of Q^t, which no
    band-limited iterate can remove.
    """
    rhs = rhs_Q_t(w, t, problem, config).projected()
    return float(np.max(np.abs(apply_shifted_laplacian(w).values - rhs.values)))


def picard_at_t(w_init: ScalarField, t: float, problem: AnnulusProblem, config: HomotopyConfig) -> PicardResult:
    """Damped iteration w <- (1 - tau) w + tau T_sigma(w, t)."""
    cfg = config if config.tol is not None and config.r_bar is not None else config.resolved(problem)
    tau = cfg.damping
    w = w_init.projected()
    trace = []
    best = np.inf
    for k in range(1, cfg.max_iter + 1):
        sigma = auto_shift(w, t, problem, cfg)
        try:
            v = linear_step_T(w, t, problem, cfg, sigma)
        except SolverError as exc:
            return PicardResult(w, False, k - 1, trace, str(exc))
        w_new = (1.0 - tau) * w + tau * v
        w_new = w.grid.from_coeffs(w_new.coeffs)
        step = float(np.max(np.abs(w_new.values - w.values)))
        w = w_new
        if np.any(w.values <= 0.0):
            return PicardResult(w, False, k, trace, "iterate lost positivity")
        res = fixed_point_residual(w, t, problem, cfg)
        trace.append(TraceRow(float(t), k, step, res))
        if not np.isfinite(res):
            return PicardResult(w, False, k, trace, "non-finite residual")
        if step < cfg.tol and res < 10.0 * cfg.tol:
            return PicardResult(w, True, k, trace, "converged")
        if res > cfg.divergence_factor * best and k > 1:
            return PicardResult(w, False, k, trace, "diverged")
        best = min(best, res)
    return PicardResult(w, False, cfg.max_iter, trace, "max iterations exceeded")


def constant_field(grid: SphereGrid, value: float) -> ScalarField:
    return grid.field(np.full(grid.size, float(value)))


def homotopy_solve(problem: AnnulusProblem, grid: SphereGrid, config: HomotopyConfig | None = None,
                   w_init: ScalarField | None = None, force: bool = False) -> HomotopyState:
    """Continue t: 0 -> 1 with warm-started Picard solves."""
    if grid.n != problem.n:
        raise ValueError("grid dimension does not match the problem")
    cfg = (config or HomotopyConfig()).resolved(problem)
    if not force:
        report = hypothesis_check(problem, grid)
        if not report.satisfied:
            raise HypothesisError(report.summary())
    w = constant_field(grid, 1.0 / cfg.r_bar) if w_init is None else w_init
    first = picard_at_t(w, 0.0, problem, cfg)
    trace = list(first.trace)
    if not first.converged:
        return HomotopyState(0.0, first.w, trace, False, f"t=0 solve failed: {first.reason}")
    w = first.w
    t, dt, easy = 0.0, cfg.dt, 0
    while t < 1.0:
        t_next = min(1.0, t + dt)
        res = picard_at_t(w, t_next, problem, cfg)
        trace.extend(res.trace)
        if res.converged:
            t, w = t_next, res.w
            easy = easy + 1 if res.iterations <= cfg.max_iter // 4 else 0
            if easy >= 2:
                dt, easy = min(2.0 * dt, cfg.dt_max), 0
        else:
            dt *= 0.5
            easy = 0
            if dt < cfg.dt_min:
                return HomotopyState(t, w, trace, False, f"step size underflow at t={t:.6g}: {res.reason}")
    state = HomotopyState(1.0, w, trace, True, "converged")
    state.barrier = barrier_check(w, problem)
    if np.all(w.values > 0):
        state.residual = float(np.max(np.abs(residual(RadialHypersurface.from_reciprocal(w), problem).direct)))
    if state.barrier == "VIOLATION":
        # fixed points of the clamped map outside the band are not solutions
        state.converged = False
        state.message = "fixed point left the annulus (barrier violated)"
    return state


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


@dataclass
class ResidualReport:
    me7: np.ndarray  # Lap v + n v - n V - V gbar(x, 1/v)
    direct: np.ndarray  # S_1(rho) - n g(x, rho)

    @property
    def sup_me7(self) -> float:
        return float(np.max(np.abs(self.me7)))

    @property
    def sup_direct(self) -> float:
        return float(np.max(np.abs(self.direct)))

    def zero_sets_agree(self, tol: float = 1e-8) -> bool:
        return bool(np.all((np.abs(self.me7) < tol) == (np.abs(self.direct) < tol)) or
                    (self.sup_me7 < tol) == (self.sup_direct < tol))


def residual(R, problem: AnnulusProblem) -> ResidualReport:
    """Both residual forms of the equation for a radial function on the grid."""
    if isinstance(R, ScalarField):
        R = RadialHypersurface.from_field(R)
    n = problem.n
    pts = R.points
    rho = R.rho
    v = 1.0 / rho
    dv = -R.drho / rho[:, None] ** 2
    lap_v = -R.laplacian / rho**2 + 2.0 * R.grad_norm2 / rho**3
    g2 = np.einsum("pi,pij,pj->p", dv, pts.metric.metric_inv, dv)
    V = (g2 + v**2) / (2.0 * v)
    gbar = problem.gbar(pts, rho)
    me7 = lap_v + n * v - n * V - V * gbar
    direct = mean_intensity_operator(R) - gbar
    return ResidualReport(me7, direct)


@dataclass
class HypothesisReport:
    satisfied: bool
    strict: bool
    positive: bool
    min_g_R1: float
    max_g_R2: float
    max_dg_drho: float
    monotone: str  # "strictly decreasing" | "nonincreasing" | "not monotone"
    witnesses: dict

    def summary(self) -> str:
        state = "violated"
        if self.satisfied:
            state = "satisfied strictly" if self.strict else "satisfied, not strictly"
        return (f"barrier hypotheses {state}: min g(x,R1)={self.min_g_R1:.6g}, "
                f"max g(x,R2)={self.max_g_R2:.6g}; dg/drho {self.monotone}")

    def as_dict(self) -> dict:
        return asdict(self)


def hypothesis_check(problem: AnnulusProblem, grid: SphereGrid, levels: int = 9, tol: float = 1e-12) -> HypothesisReport:
    """Evaluate g(x,R1) >= 1, g(x,R2) <= 1, their strictness, positivity and dg/drho."""
    pts = grid.points
    one = np.ones(grid.size)
    g1 = problem.g.value(pts, problem.R1 * one)
    g2 = problem.g.value(pts, problem.R2 * one)
    witnesses = {}
    ok1 = g1 >= 1.0 - tol
    ok2 = g2 <= 1.0 + tol
    if not np.all(ok1):
        i = int(np.argmin(g1))
        witnesses["R1"] = {"point": pts.x[i].tolist(), "g": float(g1[i])}
    if not np.all(ok2):
        i = int(np.argmax(g2))
        witnesses["R2"] = {"point": pts.x[i].tolist(), "g": float(g2[i])}
    strict = bool(np.any(np.abs(g1 - 1.0) > tol) and np.any(np.abs(g2 - 1.0) > tol))
    radii = np.linspace(problem.R1, problem.R2, levels)
    gmin = np.inf
    dmax = -np.inf
    for r in radii:
        gmin = min(gmin, float(np.min(problem.g.value(pts, r * one))))
        dmax = max(dmax, float(np.max(problem.g.drho(pts, r * one))))
    if dmax < -tol:
        monotone = "strictly decreasing"
    elif dmax <= tol:
        monotone = "nonincreasing"
    else:
        monotone = "not monotone"
    positive = gmin > 0.0
    if not positive:
        witnesses["positivity"] = {"min_g": gmin}
    return HypothesisReport(bool(np.all(ok1) and np.all(ok2) and positive), strict, positive,
                            float(np.min(g1)), float(np.max(g2)), dmax, monotone, witnesses)


BARRIER_CLASSES = ("constant at 1/R1", "constant at 1/R2", "strictly interior", "VIOLATION")


def barrier_check(w: ScalarField, problem: AnnulusProblem, tol: float = 1e-9) -> str:
    """Classify a solution w against the band [1/R2, 1/R1].

    A solution either is one of the two constants or stays strictly inside;
    touching a bound without being constant indicates a solver defect.
    """
    lo, hi = problem.w_band
    v = w.values
    if np.max(np.abs(v - hi)) <= tol * hi:
        return "constant at 1/R1"
    if np.max(np.abs(v - lo)) <= tol * lo:
        return "constant at 1/R2"
    if np.min(v) > lo * (1.0 + tol) and np.max(v) < hi * (1.0 - tol):
        return "strictly interior"
    return "VIOLATION"


@dataclass
class BoundsReport:
    min_S1: float
    max_S1: float
    constant: bool


def mean_intensity_bounds_check(R, tol: float = 1e-6) -> BoundsReport:
    """min S_1 <= n <= max S_1 for a closed reflector, with equality only for spheres."""
    if isinstance(R, ScalarField):
        R = RadialHypersurface.from_field(R)
    n = R.n
    S1 = mean_intensity_operator(R)
    lo, hi = float(np.min(S1)), float(np.max(S1))
    if lo > n + tol or hi < n - tol:
        raise ConsistencyError(f"S_1 range [{lo:.12g}, {hi:.12g}] does not straddle n={n}")
    spread = float((np.max(R.rho) - np.min(R.rho)) / np.mean(R.rho))
    if hi - lo < tol and spread > 1e3 * tol:
        raise ConsistencyError(f"S_1 is constant but rho varies by {spread:.3g}")
    return BoundsReport(lo, hi, spread <= 1e3 * tol)


@dataclass
class UniquenessReport:
    normalized: float
    raw: float
    strict: bool
    tolerance: float
    solutions: list

    @property
    def passed(self) -> bool:
        ok = self.normalized < self.tolerance
        if self.strict:
            ok = ok and self.raw < self.tolerance
        return ok


def _mean(f: ScalarField) -> float:
    return integrate(f) / f.grid.volume


def uniqueness_check(problem: AnnulusProblem, grid: SphereGrid, config: HomotopyConfig | None = None,
                     trials: int = 3, seed: int = 0, amplitude: float = 0.05) -> UniquenessReport:
    """Solve from several starting points and compare solutions up to homothety.

    Trial 0 is the homotopy solution; the remaining trials restart the t = 1
    Picard iteration from that solution multiplied by 1 + amplitude * h with
    random band-limited h.
    """
    cfg = (config or HomotopyConfig()).resolved(problem)
    report = hypothesis_check(problem, grid)
    if report.monotone == "not monotone":
        raise HypothesisError("uniqueness needs dg/drho <= 0")
    base = homotopy_solve(problem, grid, cfg)
    if not base.converged:
        raise SolverError(f"homotopy solve failed: {base.message}")
    sols = [base.rho]
    rng = np.random.default_rng(seed)
    lo, hi = problem.w_band
    for _ in range(1, trials):
        pert = random_expansion(grid.n, min(grid.degree, 4), rng).on_grid(grid)
        pert = pert / max(pert.sup(), 1e-300)
        w0 = (base.w * (1.0 + amplitude * pert)).map(lambda a: np.clip(a, lo, hi))
        res = picard_at_t(w0, 1.0, problem, cfg)
        if not res.converged:
            raise SolverError(f"perturbed solve failed: {res.reason}")
        sols.append(1.0 / res.w)
    normed = [s / _mean(s) for s in sols]
    norm_d = max(float(np.max(np.abs(a.values - b.values))) for a in normed for b in normed)
    raw_d = max(float(np.max(np.abs(a.values - b.values))) for a in sols for b in sols)
    strict = report.monotone == "strictly decreasing"
    return UniquenessReport(norm_d, raw_d, strict, 10.0 * cfg.tol, sols)


def frechet_derivative(w: ScalarField, t: float, problem: AnnulusProblem, config: HomotopyConfig,
                       h: ScalarField, step: float = 1e-6) -> ScalarField:
    """Phi_w(w, t) h for Phi(w, t) = (Lap + n/2) w - Q^t(w).

    The model term q is differentiated exactly; the t Q part uses a centered
    difference with relative step ``step``.
    """
    cfg = config.resolved(problem) if config.r_bar is None else config
    n, eps = problem.n, cfg.epsilon
    dq = 0.5 * n * (1.0 + eps) * (w.values * cfg.r_bar) ** eps
    out = apply_shifted_laplacian(h) - (1.0 - t) * dq * h
    if t > 0.0:
        s = step * float(np.max(np.abs(w.values)))
        def Q(u):
            v = u.values
            g2 = gradient_norm2(u)
            gbar = problem.gbar(u.grid.points, _clamped_rho(v, problem))
            return n * g2 / (2.0 * v) + (v**2 + g2) / (2.0 * v) * gbar
        out = out - t * (Q(w + s * h) - Q(w - s * h)) / (2.0 * s)
    return out


def linearization_kernel_check(n: int, epsilon: float = 1.0, degree: int | None = None, tol: float = 1e-10) -> float:
    """Smallest |eigenvalue| of Phi_w(1/Rbar, 0) = Lap - (n eps / 2) in a harmonic basis.

    The operator is assembled column by column by applying the Frechet
    derivative to each orthonormal basis function and projecting back.
    """
    grid = build_grid(n, 16 if n == 1 else 6) if degree is None else build_grid(n, 2 * degree + 2 if n == 1 else degree)
    problem = AnnulusProblem(n, ConstantG(1.0), 0.5, 2.0)
    cfg = HomotopyConfig(epsilon=epsilon).resolved(problem)
    w0 = constant_field(grid, 1.0 / cfg.r_bar)
    mask = grid.mask()
    slots = np.argwhere(mask)
    cols = []
    for idx in slots:
        c = np.zeros(mask.shape)
        c[tuple(idx)] = 1.0
        col = frechet_derivative(w0, 0.0, problem, cfg, grid.from_coeffs(c)).coeffs
        cols.append(col[mask])
    A = np.array(cols).T
    eig = np.linalg.eigvalsh(0.5 * (A + A.T))
    smallest = float(np.min(np.abs(eig)))
    if abs(smallest - 0.5 * n * epsilon) > tol:
        raise ConsistencyError(f"kernel check: min |eig| = {smallest!r}, expected {0.5 * n * epsilon!r}")
    return smallest


# ---------------------------------------------------------------------------
# Problem files
# ---------------------------------------------------------------------------


_PRESCRIPTION_KEYS = {
    "constant": {"value"},
    "power": {"coefficient", "exponent"},
    "table": {"values", "exponent", "reference"},
    "manufactured": {"profile", "amplitude", "axis", "scale", "power"},
}


def prescription_from_config(cfg: dict, n: int, R1: float, R2: float, grid: SphereGrid | None = None) -> Prescription:
    kind = cfg.get("kind")
    allowed = _PRESCRIPTION_KEYS.get(kind)
    if allowed is None:
        raise ValueError(f"unknown prescription kind {kind!r}")
    unknown = set(cfg) - allowed - {"kind"}
    if unknown:
        raise ValueError(f"unknown keys for a {kind} prescription: {sorted(unknown)}")
    if kind == "constant":
        return ConstantG(float(cfg.get("value", 1.0)))
    if kind == "power":
        coef = cfg.get("coefficient", 1.0)
        if coef == "rbar":
            coef = np.sqrt(R1 * R2)
        return PowerG(float(coef), float(cfg.get("exponent", -1.0)))
    if kind == "table":
        if grid is None:
            raise ValueError("a table prescription needs the problem grid")
        values = np.asarray(cfg["values"], dtype=float)
        if values.shape != (grid.size,):
            raise ValueError(f"table has {values.size} values, grid has {grid.size} points")
        return TableG(grid.field(values), float(cfg.get("exponent", 0.0)), float(cfg.get("reference", 1.0)))
    if kind == "manufactured":
        axis = cfg.get("axis")
        if axis is None:
            axis = np.eye(n + 1)[-1]
        prof = HeightProfile(cfg.get("profile", "exp"), float(cfg.get("amplitude", 0.1)), axis,
                             float(cfg.get("scale", 1.0)), float(cfg.get("power", 3.0)))
        lo, hi = prof.bounds()
        if not (R1 < lo and hi < R2):
            raise ValueError(f"manufactured rho* range [{lo:.4g}, {hi:.4g}] is not inside ({R1}, {R2})")
        return ManufacturedG(prof)
    raise ValueError(f"unknown prescription kind {kind!r}")


@dataclass
class ProblemSpec:
    problem: AnnulusProblem
    grid: SphereGrid
    config: HomotopyConfig
    outputs: dict
    residual_tol: float = 1e-6


def load_problem(doc: dict) -> ProblemSpec:
    """Parse a problem document {n, R1, R2, g, grid, solver, output, residual_tol}."""
    n = int(doc["n"])
    R1, R2 = float(doc["R1"]), float(doc["R2"])
    gcfg = doc.get("grid", {})
    res = gcfg.get("resolution", gcfg.get("M", gcfg.get("L", 256 if n == 1 else 24)))
    grid = build_grid(n, int(res))
    g = prescription_from_config(doc["g"], n, R1, R2, grid)
    scfg = dict(doc.get("solver", {}))
    known = set(HomotopyConfig.__dataclass_fields__)
    unknown = set(scfg) - known
    if unknown:
        raise ValueError(f"unknown solver keys: {sorted(unknown)}")
    config = HomotopyConfig(**scfg)
    problem = AnnulusProblem(n, g, R1, R2)
    config.resolved(problem)
    outputs = {"rho": "rho.json", "trace": "trace.csv", "report": "report.json"}
    outputs.update(doc.get("output", {}))
    residual_tol = float(doc.get("residual_tol", 1e-6))
    if residual_tol <= 0.0:
        raise ValueError("residual_tol must be positive")
    return ProblemSpec(problem, grid, config, outputs, residual_tol)


def load_problem_file(path) -> ProblemSpec:
    with open(path) as fh:
        return load_problem(json.load(fh))


# ---------------------------------------------------------------------------
# Refinement studies
# ---------------------------------------------------------------------------


def manufactured_error(state: HomotopyState, problem: AnnulusProblem) -> float:
    """sup |rho / rho* - 1| on the grid for a manufactured problem."""
    if not isinstance(problem.g, ManufacturedG):
        raise ValueError("a refinement study needs a manufactured prescription")
    rho = state.rho
    return float(np.max(np.abs(rho.values / problem.g.rho_star(rho.grid.points.x) - 1.0)))


def observed_order(levels, errors) -> np.ndarray:
    """Orders log(e_k / e_{k+1}) / log(L_{k+1} / L_k) between consecutive levels."""
    levels = np.asarray(levels, dtype=float)
    errors = np.asarray(errors, dtype=float)
    return np.log(errors[:-1] / errors[1:]) / np.log(levels[1:] / levels[:-1])


@dataclass
class RefinementStudy:
    levels: list
    errors: list
    orders: list
    floor: float
    min_order: float = 2.0

    @property
    def resolved(self) -> list:
        """Per refinement: True when the coarser error is above the floor."""
        return [bool(e > self.floor) for e in self.errors[:-1]]

    @property
    def passed(self) -> bool:
        """Every refinement either shows the required order or is already at the floor."""
        ok = True
        for k, order in enumerate(self.orders):
            at_floor = self.errors[k] <= self.floor and self.errors[k + 1] <= self.floor
            ok = ok and (order >= self.min_order or at_floor)
        return ok

    def as_dict(self) -> dict:
        return {
            "levels": list(self.levels),
            "errors": list(self.errors),
            "orders": list(self.orders),
            "floor": self.floor,
            "min_order": self.min_order,
            "passed": self.passed,
        }


def refinement_study(doc: dict, levels, floor_factor: float = 100.0, force: bool = False) -> RefinementStudy:
    """Solve a manufactured problem document on several grids.

    The floor is ``floor_factor`` times the solver tolerance: below it the
    error reflects the iteration stopping rule, not the discretization.
    """
    errors = []
    tol = None
    for level in levels:
        d = dict(doc)
        d["grid"] = {"resolution": int(level)}
        spec = load_problem(d)
        cfg = spec.config.resolved(spec.problem)
        tol = cfg.tol
        state = homotopy_solve(spec.problem, spec.grid, cfg, force=force)
        if not state.converged:
            raise SolverError(f"level {level}: {state.message}")
        errors.append(manufactured_error(state, spec.problem))
    orders = observed_order(levels, errors).tolist()
    return RefinementStudy([int(v) for v in levels], errors, orders, floor_factor * tol)
