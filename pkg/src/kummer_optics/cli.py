"""Command line front end: analyze, verify, solve, raytrace, convergence.

Artifacts go to the ``--out`` directory; progress and diagnostics go to
standard error. Exit status is 0 when every requested check passes, 1 when a
check fails and 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import raytrace as rt
from .analytic_shapes import DomainError, HeightProfile, shape_from_config
from .kummer_core import RadialHypersurface, ReflectorError, principal_intensities, striction_distance
from .solver import (
    ConsistencyError,
    SolverError,
    homotopy_solve,
    hypothesis_check,
    load_problem_file,
    manufactured_error,
    mean_intensity_bounds_check,
    refinement_study,
    residual,
)
from .sphere_geometry import GridError, ScalarField, build_grid
from .verification import run_suites

log = logging.getLogger("kummer_optics")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG = 0, 1, 2
FOCAL_TOL = 1e-9
CHI2_ALPHA = 1e-3
PROFILE_KINDS = ("affine", "exp", "pole-power")


class ConfigError(ValueError):
    pass


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path: Path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolution(args, n: int) -> int:
    if n == 1:
        return args.M if args.M is not None else 512
    return args.L if args.L is not None else 32


def _axis(text: str | None, n: int):
    if text is None:
        return None
    vals = [float(v) for v in text.split(",")]
    if len(vals) != n + 1:
        raise ConfigError(f"--axis needs {n + 1} comma-separated numbers")
    return np.array(vals)


def shape_from_args(args):
    """Shape from --shape-file or from the --shape/--p/--ecc/... flags."""
    n = args.n
    if getattr(args, "shape_file", None):
        with open(args.shape_file) as fh:
            doc = json.load(fh)
        cfg = doc.get("shape", doc)
    else:
        if args.shape is None:
            raise ConfigError("give --shape or --shape-file")
        cfg = {"kind": args.shape}
        for key in ("p", "ecc", "offset", "amplitude", "scale", "power"):
            val = getattr(args, key, None)
            if val is not None:
                cfg[key] = val
        axis = _axis(args.axis, n)
        if axis is not None:
            cfg["axis"] = axis
    if cfg.get("kind") in PROFILE_KINDS:
        axis = cfg.get("axis", np.eye(n + 1)[-1])
        return HeightProfile(cfg["kind"], float(cfg.get("amplitude", 0.05)), axis,
                             float(cfg.get("scale", 1.0)), float(cfg.get("power", 3.0)))
    return shape_from_config(cfg, n)


def _shape_record(shape) -> dict:
    rec = {"kind": shape.kind}
    for key in ("p", "ecc", "offset", "amplitude", "scale"):
        if hasattr(shape, key):
            rec[key] = float(getattr(shape, key))
    for key in ("axis", "normal"):
        if hasattr(shape, key):
            rec[key] = np.asarray(getattr(shape, key)).tolist()
    return rec


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_analyze(args) -> int:
    out = _out_dir(args)
    n = args.n
    res = _resolution(args, n)
    grid = build_grid(n, res)
    if args.field:
        with open(args.field) as fh:
            rho = ScalarField.from_json(fh.read())
        n, grid = rho.grid.n, rho.grid
        R = RadialHypersurface.from_field(rho)
        shape = None
        record = {"kind": "field", "path": str(args.field)}
    else:
        shape = shape_from_args(args)
        pts = grid.points
        R = RadialHypersurface.from_function(shape, pts.subset(shape.domain_mask(pts)))
        record = _shape_record(shape)
    log.info("analyzing %s on %d points", record["kind"], len(R.points))
    spec = principal_intensities(R)
    frame_dirs = R.points.metric.frame_inv  # (P, n, n): column a is the a-th frame direction
    stric = [striction_distance(R, frame_dirs[:, :, a]).distance for a in range(n)]
    expected = None
    if shape is not None and hasattr(shape, "expected_intensity_form"):
        expected = shape.expected_intensity_form(R.points).trace()

    coord_names = ["theta"] if n == 1 else ["colatitude", "longitude"]
    head = ["point"] + coord_names + [f"x{i}" for i in range(n + 1)] + ["rho"]
    head += [f"lambda{i + 1}" for i in range(n)] + [f"S{m + 1}" for m in range(n)]
    head += [f"striction{a + 1}" for a in range(n)]
    if expected is not None:
        head.append("S1_expected")
    with open(out / "analyze.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        for p in range(len(R.points)):
            row = [p] + [repr(float(c)) for c in R.points.u[p]] + [repr(float(c)) for c in R.points.x[p]]
            row += [repr(float(R.rho[p]))]
            row += [repr(float(v)) for v in spec.principal[p]] + [repr(float(v)) for v in spec.S[p]]
            row += [repr(float(s[p])) for s in stric]
            if expected is not None:
                row.append(repr(float(expected[p])))
            w.writerow(row)

    report = {"shape": record, "dimension": n, "resolution": grid.resolution, "points": len(R.points),
              "S1_min": float(np.min(spec.S[:, 0])), "S1_max": float(np.max(spec.S[:, 0]))}
    ok = True
    if expected is not None:
        err = float(np.max(np.abs(spec.S[:, 0] - expected)))
        ok = err < 1e-9
        report["S1_closed_form_error"] = err
        report["tolerance"] = 1e-9
    report["passed"] = ok
    write_json(out / "analyze.json", report)
    log.info("wrote %s", out / "analyze.csv")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_verify(args) -> int:
    out = _out_dir(args)
    res = _resolution(args, args.n)
    checks = run_suites(args.suite, args.n, res)
    for c in checks:
        log.info("%s %s: %.3e (tol %.1e)", "PASS" if c.passed else "FAIL", c.name, c.value, c.tolerance)
    ok = all(c.passed for c in checks)
    write_json(out / "verify.json", {"dimension": args.n, "resolution": res, "suites": list(args.suite),
                                     "checks": [c.as_dict() for c in checks], "passed": ok})
    return EXIT_OK if ok else EXIT_CHECK


def cmd_solve(args) -> int:
    out = _out_dir(args)
    spec = load_problem_file(args.problem)
    problem, grid = spec.problem, spec.grid
    cfg = spec.config.resolved(problem)
    hyp = hypothesis_check(problem, grid)
    log.info("%s", hyp.summary())
    state = homotopy_solve(problem, grid, cfg, force=args.force)
    report = {
        "problem": {"n": problem.n, "R1": problem.R1, "R2": problem.R2, "g": problem.g.to_config()
                    if problem.g.kind != "table" else {"kind": "table"}},
        "grid": {"dimension": grid.n, "resolution": grid.resolution},
        "config": {k: getattr(cfg, k) for k in cfg.__dataclass_fields__},
        "hypothesis": hyp.as_dict(),
        "converged": state.converged,
        "message": state.message,
        "iterations": len(state.trace),
        "residual_tol": spec.residual_tol,
    }
    state.write_trace(out / spec.outputs["trace"])
    ok = state.converged
    if state.converged:
        with open(out / spec.outputs["rho"], "w") as fh:
            fh.write(state.rho.to_json())
        res = residual(RadialHypersurface.from_reciprocal(state.w), problem)
        report["residual_sup"] = res.sup_direct
        report["residual_sup_reciprocal_form"] = res.sup_me7
        report["barrier"] = state.barrier
        try:
            b = mean_intensity_bounds_check(state.rho)
            report["S1_range"] = [b.min_S1, b.max_S1]
            report["mean_intensity_bounds"] = "pass"
        except ConsistencyError as exc:
            report["mean_intensity_bounds"] = f"fail: {exc}"
            ok = False
        if problem.g.kind == "manufactured":
            report["manufactured_error"] = manufactured_error(state, problem)
        ok = ok and res.sup_direct < spec.residual_tol and state.barrier != "VIOLATION"
        log.info("residual %.3e, barrier %s", res.sup_direct, state.barrier)
    else:
        log.error("solve failed: %s", state.message)
    report["passed"] = bool(ok)
    write_json(out / spec.outputs["report"], report)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_raytrace(args) -> int:
    out = _out_dir(args)
    if args.rays < 1:
        raise ConfigError("--rays must be positive")
    shape = shape_from_args(args)
    n = args.n
    log.info("tracing %d rays (seed %d)", args.rays, args.seed)
    batch = rt.trace_batch(shape, args.rays, args.seed, n=n)
    report = {"shape": _shape_record(shape), "dimension": n, "rays": args.rays, "seed": args.seed}
    ok = True

    ecc = getattr(shape, "ecc", None)
    if ecc is not None and ecc != 1.0:
        dist = rt.focal_concentration(shape, batch)
        report["focal"] = {"focus": shape.second_focus().tolist(), "max_line_distance": dist,
                           "tolerance": FOCAL_TOL, "passed": dist < FOCAL_TOL}
        ok = ok and dist < FOCAL_TOL
    elif ecc == 1.0:
        dev = float(np.max(np.linalg.norm(batch.reflected - shape.axis, axis=1)))
        report["collimation"] = {"max_deviation": dev, "tolerance": FOCAL_TOL, "passed": dev < FOCAL_TOL}
        ok = ok and dev < FOCAL_TOL

    bins = rt.EqualAreaBins.build(n, args.bins)
    hist = rt.farfield_density(batch, bins)
    # only reflectors defined on the whole sphere have a full-sphere pushforward
    closed = isinstance(shape, HeightProfile) or (ecc is not None and ecc < 1.0)
    expected = None
    if closed:
        probs = rt.pushforward_probabilities(shape, bins)
        comp = rt.compare_histogram(hist, probs)
        expected = probs / bins.area
        fit = comp.p_value >= CHI2_ALPHA
        report["farfield"] = dict(comp.as_dict(), chi2_alpha=CHI2_ALPHA, passed=fit)
        ok = ok and fit
        log.info("chi2 %.1f on %d dof, p = %.3g; max |z| = %.2f", comp.chi2, comp.dof, comp.p_value, comp.max_abs_z)
    else:
        report["farfield"] = {"compared": False, "reason": "the reflector does not cover the whole sphere"}
    hist.to_csv(out / "histogram.csv", expected)
    report["bins"] = bins.total
    report["passed"] = bool(ok)
    rt.write_sidecar(out / "raytrace.json", report)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_convergence(args) -> int:
    out = _out_dir(args)
    with open(args.problem) as fh:
        doc = json.load(fh)
    levels = args.levels or ([64, 128, 256] if int(doc["n"]) == 1 else [16, 24, 32])
    study = refinement_study(doc, levels, force=args.force)
    with open(out / "convergence.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", "error", "order"])
        for k, (lv, err) in enumerate(zip(study.levels, study.errors)):
            w.writerow([lv, repr(err), repr(study.orders[k - 1]) if k else ""])
    write_json(out / "convergence.json", study.as_dict())
    for lv, err in zip(study.levels, study.errors):
        log.info("level %d: error %.3e", lv, err)
    return EXIT_OK if study.passed else EXIT_CHECK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_grid(p):
    p.add_argument("--n", type=int, default=2, choices=(1, 2), help="sphere dimension")
    p.add_argument("--M", type=int, help="S^1 grid points (default 512)")
    p.add_argument("--L", type=int, help="S^2 truncation degree (default 32)")


def _add_shape(p):
    p.add_argument("--shape", help="sphere, ellipsoid, paraboloid, hyperboloid, conic, plane, affine, exp, pole-power")
    p.add_argument("--shape-file", help="JSON file with a shape block")
    p.add_argument("--p", type=float, help="semi-latus rectum (sphere radius)")
    p.add_argument("--ecc", type=float, help="eccentricity")
    p.add_argument("--offset", type=float, help="plane distance from the origin")
    p.add_argument("--amplitude", type=float, help="profile amplitude")
    p.add_argument("--scale", type=float, help="profile scale")
    p.add_argument("--power", type=float, help="pole-power exponent")
    p.add_argument("--axis", help="comma-separated axis (or plane normal)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kummer-optics", description=__doc__.splitlines()[0])
    parser.add_argument("-q", "--quiet", action="store_true", help="only report errors on standard error")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="intensity tables for a shape or a radial field")
    _add_grid(p)
    _add_shape(p)
    p.add_argument("--field", help="ScalarField JSON of rho (overrides the shape flags)")
    p.add_argument("--out", default="kummer-out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("verify", help="oracle suites with a pass/fail report")
    _add_grid(p)
    p.add_argument("--suite", nargs="+", default=["all"], help="shapes, identities, proposition or all")
    p.add_argument("--out", default="kummer-out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("solve", help="solve a prescribed mean intensity problem")
    p.add_argument("--problem", required=True)
    p.add_argument("--out", default="kummer-out")
    p.add_argument("--force", action="store_true", help="solve even when the barrier hypotheses fail")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("raytrace", help="Monte Carlo far field and focal checks")
    p.add_argument("--n", type=int, default=2, choices=(1, 2))
    _add_shape(p)
    p.add_argument("--rays", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--bins", type=int, help="bin count (default 192 on S^2, 64 on S^1)")
    p.add_argument("--out", default="kummer-out")
    p.set_defaults(func=cmd_raytrace)

    p = sub.add_parser("convergence", help="refinement study for a manufactured problem")
    p.add_argument("--problem", required=True)
    p.add_argument("--levels", type=int, nargs="+")
    p.add_argument("--out", default="kummer-out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_convergence)
    return parser


CONFIG_ERRORS = (ConfigError, GridError, DomainError, ReflectorError, rt.RayTraceError, KeyError,
                 FileNotFoundError, json.JSONDecodeError, TypeError, ValueError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s: %(message)s", force=True)
    try:
        return args.func(args)
    except (SolverError, ConsistencyError) as exc:
        log.error("%s", exc)
        return EXIT_CHECK
    except CONFIG_ERRORS as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
