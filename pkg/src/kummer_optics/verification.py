"""Oracle suites shared by the command line and the test suite.

Each suite returns a list of :class:`Check` records holding the measured
value, the tolerance and the verdict.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .analytic_shapes import ConicOfRevolution, PlanePiece
from .kummer_core import (
    RadialHypersurface,
    conformal_intensity_form,
    fundamental_forms,
    intensity_form,
    intensity_form_from_b,
    mean_intensity_operator,
    principal_intensities,
)
from .sphere_geometry import SphereGrid, build_grid, random_positive_radial


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""

    @classmethod
    def below(cls, name: str, value: float, tolerance: float, detail: str = "") -> "Check":
        value = float(value)
        return cls(name, value, float(tolerance), bool(np.isfinite(value) and value < tolerance), detail)

    def as_dict(self) -> dict:
        return asdict(self)


def off_axis(n: int) -> np.ndarray:
    """A unit axis not aligned with any grid symmetry."""
    a = np.ones(n + 1)
    return a / np.linalg.norm(a)


def standard_shapes(n: int) -> dict:
    """The closed-form reference family keyed by a readable label."""
    u = off_axis(n)
    shapes = {"sphere": ConicOfRevolution(1.0, 0.0, u), "plane": PlanePiece(1.0, u),
              "paraboloid": ConicOfRevolution(1.0, 1.0, u)}
    for ecc in (0.3, 0.5, 0.8):
        shapes[f"ellipsoid ecc={ecc}"] = ConicOfRevolution(1.0, ecc, u)
    for ecc in (1.5, 2.0):
        shapes[f"hyperboloid ecc={ecc}"] = ConicOfRevolution(1.0, ecc, u)
    return shapes


def shape_surface(shape, grid: SphereGrid) -> RadialHypersurface:
    """Analytic reflector data on the grid points inside the shape's domain."""
    pts = grid.points
    mask = shape.domain_mask(pts)
    return RadialHypersurface.from_function(shape, pts.subset(mask))


def analytic_shape_suite(n: int, resolution: int, tol: float = 1e-9) -> list:
    grid = build_grid(n, resolution)
    out = []
    for label, shape in standard_shapes(n).items():
        R = shape_surface(shape, grid)
        err = (intensity_form(R) - shape.expected_intensity_form(R.points)).sup()
        out.append(Check.below(f"kappa closed form: {label}", err, tol, f"{len(R.points)} points"))
    return out


def random_fields(n: int, resolution: int, count: int, seed: int, amplitude: float = 0.3):
    grid = build_grid(n, resolution)
    degree = min(grid.degree, 8)
    for k in range(count):
        yield grid.from_coeffs(random_positive_radial(n, degree, seed + k, amplitude).resized(grid.degree).coeffs)


def identity_suite(n: int, resolution: int, count: int = 10, seed: int = 0,
                   kappa_tol: float = 1e-10, det_tol: float = 1e-9) -> list:
    """Three formulas for kappa agree pairwise; det g = rho^(2n-2) W^2 det e."""
    worst = np.zeros(4)
    for rho in random_fields(n, resolution, count, seed):
        R = RadialHypersurface.from_field(rho)
        k_direct = intensity_form(R)
        k_b = intensity_form_from_b(R)
        dw, hw = R.log_derivatives
        k_conf = conformal_intensity_form(R.points, dw, hw)
        detg = np.linalg.det(fundamental_forms(R).g.values)
        expected = R.rho ** (2 * n - 2) * R.W**2 * R.points.metric.det
        worst = np.maximum(worst, [
            (k_direct - k_b).sup(),
            (k_direct - k_conf).sup(),
            (k_b - k_conf).sup(),
            float(np.max(np.abs(detg / expected - 1.0))),
        ])
    detail = f"{count} random band-limited rho"
    return [
        Check.below("kappa direct vs second fundamental form", worst[0], kappa_tol, detail),
        Check.below("kappa direct vs conformal", worst[1], kappa_tol, detail),
        Check.below("kappa second fundamental form vs conformal", worst[2], kappa_tol, detail),
        Check.below("det g identity (relative)", worst[3], det_tol, detail),
    ]


def proposition_suite(n: int, resolution: int, count: int = 20, seed: int = 100,
                      tol: float = 1e-6, homothety_tol: float = 1e-12) -> list:
    """min S_1 <= n <= max S_1 on closed reflectors; kappa is scale invariant."""
    straddle_gap = -np.inf
    homothety = 0.0
    for rho in random_fields(n, resolution, count, seed):
        R = RadialHypersurface.from_field(rho)
        S1 = mean_intensity_operator(R)
        straddle_gap = max(straddle_gap, float(np.min(S1)) - n, n - float(np.max(S1)))
        k = intensity_form(R)
        for lam in (0.5, 2.0, 10.0):
            homothety = max(homothety, (intensity_form(R.scaled(lam)) - k).sup())
    return [
        Check(f"S_1 straddles n on {count} random reflectors", straddle_gap, tol, straddle_gap <= tol,
              "largest of min S_1 - n and n - max S_1"),
        Check.below("homothety invariance of kappa", homothety, homothety_tol, "lambda in {0.5, 2, 10}"),
    ]


def sphere_spectrum_check(n: int, resolution: int, radius: float = 2.0, tol: float = 1e-12) -> Check:
    """A centred sphere has every principal intensity equal to one."""
    grid = build_grid(n, resolution)
    R = RadialHypersurface.from_function(ConicOfRevolution(radius, 0.0, off_axis(n)), grid.points)
    err = float(np.max(np.abs(principal_intensities(R).principal - 1.0)))
    return Check.below("sphere principal intensities", err, tol)


SUITES = {
    "shapes": analytic_shape_suite,
    "identities": identity_suite,
    "proposition": proposition_suite,
}


def run_suites(names, n: int, resolution: int) -> list:
    if "all" in names:
        names = list(SUITES)
    unknown = [s for s in names if s not in SUITES]
    if unknown:
        raise ValueError(f"unknown suite(s): {unknown}; choose from {sorted(SUITES)} or all")
    out = []
    for s in names:
        out.extend(SUITES[s](n, resolution))
    return out
