"""Reflector geometry, intensity operators and a prescribed mean intensity solver on S^1 and S^2."""

from .analytic_shapes import ConicOfRevolution, HeightProfile, PlanePiece
from .kummer_core import (
    RadialHypersurface,
    intensity_form,
    mean_intensity_operator,
    principal_intensities,
    striction_distance,
)
from .solver import AnnulusProblem, HomotopyConfig, homotopy_solve, load_problem, load_problem_file
from .sphere_geometry import ScalarField, build_grid

__all__ = [
    "AnnulusProblem",
    "ConicOfRevolution",
    "HeightProfile",
    "HomotopyConfig",
    "PlanePiece",
    "RadialHypersurface",
    "ScalarField",
    "build_grid",
    "homotopy_solve",
    "intensity_form",
    "load_problem",
    "load_problem_file",
    "mean_intensity_operator",
    "principal_intensities",
    "striction_distance",
]
