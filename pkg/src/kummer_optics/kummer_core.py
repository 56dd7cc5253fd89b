"""Reflector geometry for radial graphs r(x) = rho(x) x over S^n.

Every quantity is computed pointwise from rho, its chart gradient rho_i and
its covariant Hessian. A :class:`RadialHypersurface` stores these arrays at
a :class:`~kummer_optics.sphere_geometry.ChartPoints` set; it can be built
from any object exposing ``evaluate(points) -> (rho, drho, hess)`` (analytic
shapes, harmonic expansions) or from grid fields via spectral derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .sphere_geometry import (
    ChartPoints,
    ScalarField,
    SymTensorField2,
    derivatives,
)

# e_hat(v) / e(v) below this counts as a vanishing differential of gamma.
INFINITE_STRICTION_TOL = 1e-10


class ReflectorError(ValueError):
    """Invalid reflector data (e.g. a nonpositive radial function)."""


@dataclass(frozen=True, eq=False)
class RadialHypersurface:
    """Radial function and its first two covariant derivatives at points."""

    points: ChartPoints
    rho: np.ndarray
    drho: np.ndarray
    hess: np.ndarray

    def __post_init__(self):
        if np.any(~np.isfinite(self.rho)) or np.any(self.rho <= 0.0):
            raise ReflectorError("radial function must be positive and finite")

    @property
    def n(self) -> int:
        return self.points.n

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_function(cls, func, points: ChartPoints) -> "RadialHypersurface":
        rho, drho, hess = func.evaluate(points)
        return cls(points, rho, drho, hess)

    @classmethod
    def from_field(cls, rho: ScalarField) -> "RadialHypersurface":
        """Spectral derivatives of a band-limited grid field."""
        d1, hess = derivatives(rho)
        return cls(rho.grid.points, rho.values, d1, hess)

    @classmethod
    def from_reciprocal(cls, w: ScalarField) -> "RadialHypersurface":
        """rho = 1/w for a band-limited w, derivatives by the chain rule."""
        d1, hw = derivatives(w)
        v = w.values
        rho = 1.0 / v
        drho = -d1 / v[:, None] ** 2
        hess = -hw / v[:, None, None] ** 2 + 2.0 * np.einsum("pi,pj->pij", d1, d1) / v[:, None, None] ** 3
        return cls(w.grid.points, rho, drho, hess)

    @classmethod
    def from_log(cls, points: ChartPoints, w, dw, hw) -> "RadialHypersurface":
        """rho = exp(-w) given w and its derivatives."""
        rho = np.exp(-w)
        drho = -rho[:, None] * dw
        hess = rho[:, None, None] * (np.einsum("pi,pj->pij", dw, dw) - hw)
        return cls(points, rho, drho, hess)

    def scaled(self, factor: float) -> "RadialHypersurface":
        return RadialHypersurface(self.points, factor * self.rho, factor * self.drho, factor * self.hess)

    # -- derived quantities -------------------------------------------------

    @cached_property
    def drho_up(self) -> np.ndarray:
        return self.points.raise_index(self.drho)

    @cached_property
    def grad_norm2(self) -> np.ndarray:
        return np.einsum("pi,pi->p", self.drho, self.drho_up)

    @cached_property
    def W(self) -> np.ndarray:
        return np.sqrt(self.rho**2 + self.grad_norm2)

    @cached_property
    def laplacian(self) -> np.ndarray:
        return np.einsum("pij,pij->p", self.points.metric.metric_inv, self.hess)

    @cached_property
    def ambient_gradient(self) -> np.ndarray:
        return self.points.ambient_vector(self.drho_up)

    @cached_property
    def position(self) -> np.ndarray:
        return self.rho[:, None] * self.points.x

    @cached_property
    def tangents(self) -> np.ndarray:
        """r_i = rho_i x + rho x_i, shape (P, n, n+1)."""
        x = self.points.x
        return self.drho[:, :, None] * x[:, None, :] + self.rho[:, None, None] * self.points.basis

    @cached_property
    def log_derivatives(self):
        """w = -log(rho): gradient and covariant Hessian."""
        rho = self.rho
        dw = -self.drho / rho[:, None]
        hw = -self.hess / rho[:, None, None] + np.einsum("pi,pj->pij", self.drho, self.drho) / rho[:, None, None] ** 2
        return dw, hw


def as_hypersurface(R) -> RadialHypersurface:
    if isinstance(R, RadialHypersurface):
        return R
    if isinstance(R, ScalarField):
        return RadialHypersurface.from_field(R)
    raise TypeError(f"cannot interpret {type(R).__name__} as a radial hypersurface")


# ---------------------------------------------------------------------------
# Embedding and fundamental forms
# ---------------------------------------------------------------------------


class Embedding(NamedTuple):
    position: np.ndarray
    W: np.ndarray
    normal: np.ndarray


def embed(R: RadialHypersurface) -> Embedding:
    """Position rho x, W_rho and the unit normal (rho x - grad rho) / W_rho."""
    N = (R.position - R.ambient_gradient) / R.W[:, None]
    return Embedding(R.position, R.W, N)


@dataclass(frozen=True)
class FundamentalForms:
    g: SymTensorField2
    g_inv: np.ndarray
    b: SymTensorField2
    normal: np.ndarray


def fundamental_forms(R: RadialHypersurface) -> FundamentalForms:
    e = R.points.metric.metric
    einv = R.points.metric.metric_inv
    rr = np.einsum("pi,pj->pij", R.drho, R.drho)
    rho = R.rho[:, None, None]
    W = R.W[:, None, None]
    g = rr + rho**2 * e
    ru = R.drho_up
    g_inv = (einv - np.einsum("pi,pj->pij", ru, ru) / W**2) / rho**2
    b = (rho * R.hess - 2.0 * rr - rho**2 * e) / W
    return FundamentalForms(
        SymTensorField2(R.points, g),
        g_inv,
        SymTensorField2(R.points, b),
        embed(R).normal,
    )


# ---------------------------------------------------------------------------
# Reflection and intensity
# ---------------------------------------------------------------------------


def reflection_map(R: RadialHypersurface) -> np.ndarray:
    """Unit reflected directions x - 2<x, N> N, shape (P, n+1)."""
    N = embed(R).normal
    x = R.points.x
    return x - 2.0 * np.einsum("pa,pa->p", x, N)[:, None] * N


def intensity_form(R: RadialHypersurface) -> SymTensorField2:
    """kappa = (-rho Hess rho + 2 d rho (x) d rho + (rho^2 - |grad rho|^2)/2 e) / (W^2/2)."""
    e = R.points.metric.metric
    rho = R.rho[:, None, None]
    rr = np.einsum("pi,pj->pij", R.drho, R.drho)
    num = -rho * R.hess + 2.0 * rr + 0.5 * (R.rho**2 - R.grad_norm2)[:, None, None] * e
    return SymTensorField2(R.points, num / (0.5 * R.W**2)[:, None, None])


def intensity_form_from_b(R: RadialHypersurface) -> SymTensorField2:
    """kappa = -e - (2/W) b with b the second fundamental form."""
    b = fundamental_forms(R).b.values
    e = R.points.metric.metric
    return SymTensorField2(R.points, -e - 2.0 * b / R.W[:, None, None])


def conformal_intensity_form(points: ChartPoints, dw: np.ndarray, hw: np.ndarray) -> SymTensorField2:
    """kappa in terms of w = -log(rho): depends on w only through its derivatives."""
    e = points.metric.metric
    g2 = np.einsum("pi,pij,pj->p", dw, points.metric.metric_inv, dw)
    num = hw + np.einsum("pi,pj->pij", dw, dw) + 0.5 * (1.0 - g2)[:, None, None] * e
    return SymTensorField2(points, num / (0.5 * (1.0 + g2))[:, None, None])


def schouten_tensor(points: ChartPoints, dw: np.ndarray, hw: np.ndarray) -> SymTensorField2:
    """kappa(w) (1 + |grad w|^2) / 2, the Schouten tensor of exp(-2w) e."""
    g2 = np.einsum("pi,pij,pj->p", dw, points.metric.metric_inv, dw)
    k = conformal_intensity_form(points, dw, hw)
    return SymTensorField2(points, k.values * (0.5 * (1.0 + g2))[:, None, None])


def conformal_field_intensity(w: ScalarField) -> SymTensorField2:
    """Conformal formula for a band-limited grid field w."""
    dw, hw = derivatives(w)
    return conformal_intensity_form(w.grid.points, dw, hw)


def ehat_form(R: RadialHypersurface, kappa: SymTensorField2 | None = None) -> SymTensorField2:
    """e_hat_ij = kappa_ik e^kl kappa_lj = <gamma_i, gamma_j>."""
    if kappa is None:
        kappa = intensity_form(R)
    k = kappa.values
    return SymTensorField2(R.points, np.einsum("pik,pkl,plj->pij", k, R.points.metric.metric_inv, k))


def reflection_differential(R: RadialHypersurface, kappa: SymTensorField2 | None = None) -> np.ndarray:
    """Closed-form gamma_i, shape (P, n, n+1).

    Uses the decomposition in the basis r_1..r_n, N with <r_s, gamma_i> =
    -rho kappa_si and <gamma_i, N> = -(rho^j / W) kappa_ji.
    """
    if kappa is None:
        kappa = intensity_form(R)
    k = kappa.values
    ff = fundamental_forms(R)
    tan = np.einsum("psi,psk->pik", -R.rho[:, None, None] * k, ff.g_inv)
    nrm = -np.einsum("pj,pji->pi", R.drho_up, k) / R.W[:, None]
    return np.einsum("pik,pka->pia", tan, R.tangents) + nrm[:, :, None] * ff.normal[:, None, :]


def elementary_symmetric(values: np.ndarray) -> np.ndarray:
    """S_1..S_n of the last axis, shape (..., n)."""
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    e = np.zeros(values.shape[:-1] + (n + 1,))
    e[..., 0] = 1.0
    for i in range(n):
        lam = values[..., i]
        for k in range(i + 1, 0, -1):
            e[..., k] = e[..., k] + lam * e[..., k - 1]
    return e[..., 1:]


@dataclass(frozen=True)
class IntensitySpectrum:
    """Principal intensities (ascending), S_m for m = 1..n and a^i_j."""

    principal: np.ndarray  # (P, n)
    S: np.ndarray  # (P, n), S[:, m-1] = S_m
    mixed: np.ndarray  # (P, n, n), a^i_j = e^is kappa_sj
    det_ratio: np.ndarray  # det kappa / det e

    def S_m(self, m: int) -> np.ndarray:
        return self.S[:, m - 1]

    def characteristic(self, lam) -> np.ndarray:
        """P(-lam) = lam^n - S_1 lam^(n-1) + ... + (-1)^n S_n."""
        n = self.S.shape[1]
        lam = np.asarray(lam, dtype=float)
        out = lam**n * np.ones(len(self.S))
        for m in range(1, n + 1):
            out = out + (-1) ** m * self.S[:, m - 1] * lam ** (n - m)
        return out


def principal_intensities(R: RadialHypersurface, kappa: SymTensorField2 | None = None) -> IntensitySpectrum:
    """Eigenvalues of e^{-1} kappa computed as a symmetric problem in the frame."""
    if kappa is None:
        kappa = intensity_form(R)
    lam = np.linalg.eigvalsh(kappa.frame)
    mixed = np.einsum("pis,psj->pij", R.points.metric.metric_inv, kappa.values)
    det_ratio = np.linalg.det(kappa.values) / R.points.metric.det
    return IntensitySpectrum(lam, elementary_symmetric(lam), mixed, det_ratio)


class MeanIntensity(NamedTuple):
    trace: np.ndarray
    operator: np.ndarray

    @property
    def defect(self) -> float:
        return float(np.max(np.abs(self.trace - self.operator)))


def mean_intensity_operator(R: RadialHypersurface) -> np.ndarray:
    """M[rho] = (-rho Lap rho + n rho^2 + 2|grad rho|^2 - (n/2) W^2) / (W^2/2)."""
    n = R.n
    num = -R.rho * R.laplacian + n * R.rho**2 + 2.0 * R.grad_norm2 - 0.5 * n * R.W**2
    return num / (0.5 * R.W**2)


def mean_intensity(R: RadialHypersurface) -> MeanIntensity:
    """S_1 by the trace e^ij kappa_ij and by the operator M[rho]."""
    return MeanIntensity(intensity_form(R).trace(), mean_intensity_operator(R))


def reciprocal_mean_intensity(points: ChartPoints, v, dv, lap_v) -> np.ndarray:
    """M[1/v] = (Lap v + n v - n V) / V with V = (|grad v|^2 + v^2) / (2v)."""
    n = points.n
    g2 = np.einsum("pi,pij,pj->p", dv, points.metric.metric_inv, dv)
    V = (g2 + v**2) / (2.0 * v)
    return (lap_v + n * v - n * V) / V


# ---------------------------------------------------------------------------
# Directional quantities
# ---------------------------------------------------------------------------


def _tangent(R: RadialHypersurface, tangent) -> np.ndarray:
    t = np.broadcast_to(np.asarray(tangent, dtype=float), (len(R.points), R.n))
    e_t = np.einsum("pi,pij,pj->p", t, R.points.metric.metric, t)
    if np.any(e_t <= 0.0):
        raise ValueError("tangent vector must be nonzero")
    return t


def directional_intensity(R: RadialHypersurface, tangent):
    """(sqrt(e_hat(v)/e(v)), kappa(v)/e(v)) for chart tangent vectors v.

    The two agree in absolute value along principal directions and
    everywhere on umbilic reflectors (kappa proportional to e).
    """
    t = _tangent(R, tangent)
    kappa = intensity_form(R)
    e_t = np.einsum("pi,pij,pj->p", t, R.points.metric.metric, t)
    unsigned = np.sqrt(ehat_form(R, kappa)(t) / e_t)
    signed = kappa(t) / e_t
    return unsigned, signed


@dataclass(frozen=True)
class StrictionResult:
    distance: np.ndarray  # signed h, +inf where infinite
    point: np.ndarray  # r + h gamma, nan where infinite
    infinite: np.ndarray  # bool
    kappa: np.ndarray  # kappa(v)
    ehat: np.ndarray  # e_hat(v)


def striction_distance(R: RadialHypersurface, tangent) -> StrictionResult:
    """Signed distance h = rho kappa(v) / e_hat(v) to the striction point.

    h > 0 when the striction point lies ahead of the reflection point along
    gamma. When e_hat(v)/e(v) < INFINITE_STRICTION_TOL the differential of
    gamma vanishes in direction v and h is reported as infinite.
    """
    t = _tangent(R, tangent)
    kappa = intensity_form(R)
    k_t = kappa(t)
    eh_t = ehat_form(R, kappa)(t)
    e_t = np.einsum("pi,pij,pj->p", t, R.points.metric.metric, t)
    infinite = eh_t / e_t < INFINITE_STRICTION_TOL
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where(infinite, np.inf, R.rho * k_t / np.where(infinite, 1.0, eh_t))
    gamma = reflection_map(R)
    point = np.where(infinite[:, None], np.nan, R.position + np.where(infinite, 0.0, h)[:, None] * gamma)
    return StrictionResult(h, point, infinite, k_t, eh_t)


# ---------------------------------------------------------------------------
# Finite-difference oracles
# ---------------------------------------------------------------------------


def _displaced(points: ChartPoints, i: int, step: float) -> ChartPoints:
    du = np.zeros(points.n)
    du[i] = step
    return ChartPoints.from_chart(points.n, points.u + du)


def reflection_fd(func, points: ChartPoints, step: float) -> np.ndarray:
    """gamma_i by centered differences of the reflection map in the chart."""
    cols = []
    for i in range(points.n):
        plus = reflection_map(RadialHypersurface.from_function(func, _displaced(points, i, step)))
        minus = reflection_map(RadialHypersurface.from_function(func, _displaced(points, i, -step)))
        cols.append((plus - minus) / (2.0 * step))
    return np.stack(cols, axis=1)


class FDDefects(NamedTuple):
    ehat: float
    symmetry: float
    normal_component: float


def fd_defects(func, points: ChartPoints, step: float) -> FDDefects:
    """Sup defects of the closed forms against finite-difference gamma_i.

    * ``ehat``: |<gamma_i, gamma_j>_fd - kappa e^{-1} kappa|
    * ``symmetry``: |<r_i, gamma_j> - <r_j, gamma_i>|
    * ``normal_component``: |<gamma_i, N> + (rho^j / W) kappa_ji|
    """
    R = RadialHypersurface.from_function(func, points)
    kappa = intensity_form(R)
    gi = reflection_fd(func, points, step)
    eh_fd = np.einsum("pia,pja->pij", gi, gi)
    eh = ehat_form(R, kappa).values
    rg = np.einsum("pia,pja->pij", R.tangents, gi)
    N = embed(R).normal
    gn = np.einsum("pia,pa->pi", gi, N)
    expected = -np.einsum("pj,pji->pi", R.drho_up, kappa.values) / R.W[:, None]
    return FDDefects(
        float(np.max(np.abs(R.points.to_frame(eh_fd - eh)))),
        float(np.max(np.abs(R.points.to_frame(rg - np.swapaxes(rg, 1, 2))))),
        float(np.max(np.abs(np.einsum("pij,pj->pi", R.points.metric.frame_inv.swapaxes(1, 2), gn - expected)))),
    )


def normal_component_check(func, points: ChartPoints, step: float = 1e-3) -> float:
    """sup_i |<gamma_i, N> + (rho^j / W) kappa_ji| with gamma_i by finite differences."""
    return fd_defects(func, points, step).normal_component


def symmetry_defect(func, points: ChartPoints, step: float = 1e-3) -> float:
    return fd_defects(func, points, step).symmetry


def observed_orders(errors, steps) -> np.ndarray:
    """log(e_k / e_{k+1}) / log(h_k / h_{k+1}) for successive refinements."""
    e = np.asarray(errors, dtype=float)
    h = np.asarray(steps, dtype=float)
    return np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])
