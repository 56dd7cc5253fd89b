"""Closed-form reflectors with exact radial functions and derivatives.

All shapes here are radial graphs whose radial function depends on the point
only through the height s = <x, u> along a unit axis u. If rho = F(s) then

    rho_i = F'(s) s_i,    Hess rho = F''(s) s_i s_j - F'(s) s e_ij,

because the covariant Hessian of a linear coordinate on the unit sphere is
-s e.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .sphere_geometry import ChartPoints, SymTensorField2

# Points closer than this to a domain boundary are rejected.
DOMAIN_MARGIN = 1e-8


class DomainError(ValueError):
    """Point outside the natural domain of a shape."""


def _unit(axis) -> np.ndarray:
    a = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(a)
    if norm == 0.0:
        raise ValueError("axis must be nonzero")
    return a / norm


def default_axis(n: int) -> np.ndarray:
    a = np.zeros(n + 1)
    a[-1] = 1.0
    return a


def height_derivatives(points: ChartPoints, axis: np.ndarray):
    """s = <x, u>, its chart gradient and covariant Hessian."""
    s = points.x @ axis
    ds = np.einsum("pia,a->pi", points.basis, axis)
    hs = -s[:, None, None] * points.metric.metric
    return s, ds, hs


def _compose(points, axis, F, dF, d2F):
    s, ds, hs = height_derivatives(points, axis)
    f, f1, f2 = F(s), dF(s), d2F(s)
    drho = f1[:, None] * ds
    hess = f2[:, None, None] * np.einsum("pi,pj->pij", ds, ds) + f1[:, None, None] * hs
    return f, drho, hess


@dataclass(frozen=True)
class HeightProfile:
    """rho(x) = F(<x, u>) for a smooth positive profile F on [-1, 1].

    ``kind`` selects a built-in profile:

    * ``"affine"``: F(s) = scale (1 + amplitude s)
    * ``"exp"``: F(s) = scale exp(amplitude s)
    * ``"pole-power"``: F(s) = scale (1 + amplitude (1 - s)^power), which has
      finite smoothness at the point x = u for non-integer power; useful
      where algebraic convergence must be visible
    """

    kind: str
    amplitude: float
    axis: np.ndarray
    scale: float = 1.0
    power: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "axis", _unit(self.axis))
        if self.kind not in ("affine", "exp", "pole-power"):
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.kind == "affine" and abs(self.amplitude) >= 1.0:
            raise ValueError("affine profile needs |amplitude| < 1 to stay positive")
        if self.kind == "pole-power" and (self.power <= 1.0 or not -2.0**-self.power < self.amplitude):
            raise ValueError("pole-power profile needs power > 1 and amplitude > -2^-power")

    @property
    def n(self) -> int:
        return len(self.axis) - 1

    def _funcs(self):
        a, c = self.amplitude, self.scale
        if self.kind == "affine":
            return (lambda s: c * (1.0 + a * s), lambda s: c * a * np.ones_like(s), lambda s: np.zeros_like(s))
        if self.kind == "pole-power":
            k = self.power
            d = lambda s: np.maximum(1.0 - s, 1e-300)  # noqa: E731
            return (
                lambda s: c * (1.0 + a * d(s) ** k),
                lambda s: -c * a * k * d(s) ** (k - 1.0),
                lambda s: c * a * k * (k - 1.0) * d(s) ** (k - 2.0),
            )
        return (lambda s: c * np.exp(a * s), lambda s: c * a * np.exp(a * s), lambda s: c * a * a * np.exp(a * s))

    def evaluate(self, points: ChartPoints):
        return _compose(points, self.axis, *self._funcs())

    def __call__(self, x) -> np.ndarray:
        return self._funcs()[0](np.asarray(x) @ self.axis)

    def domain_mask(self, points: ChartPoints) -> np.ndarray:
        return np.ones(len(points), dtype=bool)

    def bounds(self) -> tuple[float, float]:
        F = self._funcs()[0]
        ends = F(np.array([-1.0, 1.0]))
        lo, hi = ends.min(), ends.max()
        return float(min(lo, hi)), float(max(lo, hi))


@dataclass(frozen=True)
class ConicOfRevolution:
    """rho(x) = p / (1 - ecc <x, u>), a conic of revolution with a focus at O.

    ecc = 0 sphere of radius p; 0 < ecc < 1 ellipsoid; ecc = 1 paraboloid on
    S^n minus {u}; ecc > 1 one hyperboloid sheet on <x, u> < 1/ecc.
    """

    p: float
    ecc: float
    axis: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.p <= 0.0:
            raise ValueError("semi-latus rectum must be positive")
        if self.ecc < 0.0:
            raise ValueError("eccentricity must be nonnegative")
        axis = default_axis(2) if self.axis is None else self.axis
        object.__setattr__(self, "axis", _unit(axis))

    @classmethod
    def on(cls, n: int, p: float, ecc: float, axis=None) -> "ConicOfRevolution":
        return cls(p, ecc, default_axis(n) if axis is None else axis)

    @property
    def n(self) -> int:
        return len(self.axis) - 1

    @property
    def kind(self) -> str:
        if self.ecc == 0.0:
            return "sphere"
        if self.ecc < 1.0:
            return "ellipsoid"
        if self.ecc == 1.0:
            return "paraboloid"
        return "hyperboloid"

    def _denominator(self, s):
        return 1.0 - self.ecc * s

    def domain_mask(self, points: ChartPoints) -> np.ndarray:
        if self.ecc < 1.0:
            return np.ones(len(points), dtype=bool)
        s = points.x @ self.axis
        return 1.0 / self.ecc - s > DOMAIN_MARGIN

    def _require(self, points: ChartPoints):
        if not np.all(self.domain_mask(points)):
            raise DomainError(f"point outside the domain of the {self.kind}")

    def evaluate(self, points: ChartPoints):
        self._require(points)
        p, e = self.p, self.ecc
        return _compose(
            points,
            self.axis,
            lambda s: p / (1.0 - e * s),
            lambda s: p * e / (1.0 - e * s) ** 2,
            lambda s: 2.0 * p * e * e / (1.0 - e * s) ** 3,
        )

    def __call__(self, x) -> np.ndarray:
        s = np.asarray(x) @ self.axis
        if self.ecc >= 1.0 and np.any(1.0 / self.ecc - s <= DOMAIN_MARGIN):
            raise DomainError(f"point outside the domain of the {self.kind}")
        return self.p / (1.0 - self.ecc * s)

    def second_focus(self) -> np.ndarray:
        """(2 p ecc / (1 - ecc^2)) u; undefined for the paraboloid."""
        if self.ecc == 1.0:
            raise DomainError("the paraboloid has its second focus at infinity")
        return (2.0 * self.p * self.ecc / (1.0 - self.ecc**2)) * self.axis

    def expected_intensity_form(self, points: ChartPoints) -> SymTensorField2:
        """+-(rho / |rho x - a|) e, and 0 for the paraboloid."""
        self._require(points)
        e = points.metric.metric
        if self.ecc == 1.0:
            return SymTensorField2(points, np.zeros_like(e))
        rho = self(points.x)
        a = self.second_focus()
        if self.ecc == 0.0:
            factor = np.ones_like(rho)
        else:
            factor = rho / np.linalg.norm(rho[:, None] * points.x - a, axis=1)
        if self.ecc > 1.0:
            factor = -factor
        return SymTensorField2(points, factor[:, None, None] * e)

    def expected_mean_intensity(self, points: ChartPoints) -> np.ndarray:
        return self.expected_intensity_form(points).trace()


@dataclass(frozen=True)
class PlanePiece:
    """rho(x) = c / <x, d> on the open hemisphere <x, d> > 0."""

    offset: float
    normal: np.ndarray

    def __post_init__(self):
        if self.offset <= 0.0:
            raise ValueError("plane offset must be positive")
        object.__setattr__(self, "normal", _unit(self.normal))

    @property
    def n(self) -> int:
        return len(self.normal) - 1

    kind = "plane"

    def domain_mask(self, points: ChartPoints) -> np.ndarray:
        return points.x @ self.normal > DOMAIN_MARGIN

    def evaluate(self, points: ChartPoints):
        if not np.all(self.domain_mask(points)):
            raise DomainError("point outside the hemisphere of the plane piece")
        c = self.offset
        return _compose(
            points,
            self.normal,
            lambda t: c / t,
            lambda t: -c / t**2,
            lambda t: 2.0 * c / t**3,
        )

    def __call__(self, x) -> np.ndarray:
        t = np.asarray(x) @ self.normal
        if np.any(t <= DOMAIN_MARGIN):
            raise DomainError("point outside the hemisphere of the plane piece")
        return self.offset / t

    def expected_intensity_form(self, points: ChartPoints) -> SymTensorField2:
        if not np.all(self.domain_mask(points)):
            raise DomainError("point outside the hemisphere of the plane piece")
        return SymTensorField2(points, -points.metric.metric)


def conic_radial(shape, points: ChartPoints):
    """Exact rho, chart gradient and covariant Hessian of a closed-form shape."""
    return shape.evaluate(points)


def second_focus(shape: ConicOfRevolution) -> np.ndarray:
    return shape.second_focus()


def expected_intensity_form(shape, points: ChartPoints) -> SymTensorField2:
    return shape.expected_intensity_form(points)


SHAPE_KINDS = ("sphere", "ellipsoid", "paraboloid", "hyperboloid", "conic", "plane")


def shape_from_config(cfg: dict, n: int | None = None):
    """Build a shape from a {kind, p, ecc, axis} block.

    ``plane`` takes ``offset`` and ``normal`` (``axis`` is accepted as an
    alias); ``sphere`` takes ``p`` (or ``radius``).
    """
    cfg = dict(cfg)
    kind = cfg.get("kind")
    dim = cfg.get("n", n)
    axis = cfg.get("axis", cfg.get("normal"))
    if axis is None:
        if dim is None:
            raise ValueError("either an axis or the dimension n is required")
        axis = default_axis(int(dim))
    axis = np.asarray(axis, dtype=float)
    if dim is not None and len(axis) != int(dim) + 1:
        raise ValueError(f"axis has length {len(axis)}, expected {int(dim) + 1}")
    if kind == "plane":
        return PlanePiece(float(cfg.get("offset", 1.0)), axis)
    if kind == "sphere":
        return ConicOfRevolution(float(cfg.get("p", cfg.get("radius", 1.0))), 0.0, axis)
    if kind not in SHAPE_KINDS:
        raise ValueError(f"unknown shape kind {kind!r}")
    if "ecc" not in cfg:
        if kind == "paraboloid":
            cfg["ecc"] = 1.0
        else:
            raise ValueError(f"shape kind {kind!r} needs an eccentricity")
    shape = ConicOfRevolution(float(cfg.get("p", 1.0)), float(cfg["ecc"]), axis)
    if kind != "conic" and shape.kind != kind:
        raise ValueError(f"eccentricity {shape.ecc} describes a {shape.kind}, not a {kind}")
    return shape


def load_shape(path, n: int | None = None):
    with open(path) as fh:
        doc = json.load(fh)
    return shape_from_config(doc.get("shape", doc), n)
