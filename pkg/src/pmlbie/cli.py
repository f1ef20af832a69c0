"""Command-line front end: configuration ingestion, experiment drivers,
and structured text outputs.

The configuration file is a single JSON document with six blocks
(``medium``, ``geometry``, ``incidence``, ``pml``, ``discretization``,
``output``) plus optional ``sweep``, ``norm``, and ``units`` entries; the
schema is documented in the project README and in :func:`normalize_config`.
Four verbs are exposed::

    pmlbie solve        --config c.json --out DIR [--threads K]
    pmlbie convergence  --config c.json --out DIR [--threads K] [--norm sup|l2]
    pmlbie pml-sweep    --config c.json --out DIR [--threads K] [--norm sup|l2]
    pmlbie validate     [--out DIR] [--threads K]

Exit codes: 0 success, 2 configuration error, 3 solver error,
4 acceptance failure.  Outputs are CSV files with a header line plus
key-value diagnostic text; identical configurations produce byte-identical
CSV files on one machine.  No plots are rendered; consumers draw figures
from the emitted data grids.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    ParameterError,
    PmlbieError,
    SolverError,
)
from .geometry import (
    GradedMesh,
    bump_dip_interface,
    build_mesh,
    flat_interface,
    notched_interface,
    step_interface,
    teardrop_obstacle,
    two_piece_flat_interface,
)
from .oracle import OracleError, layered_green
from .pml import PmlProfile
from .quadrature import trig_interp
from .solver import (
    LayeredMedium,
    PlaneWave,
    PointSource,
    SolveResult,
    _reference_values,
    _validate_incidence,
    evaluate_field,
    solve_interface,
    solve_with_obstacle,
)
from .errors import NearBoundaryError, UnsupportedRegionError

__all__ = [
    "RunConfig",
    "ConvergenceReport",
    "Problem",
    "load_config",
    "normalize_config",
    "build_problem",
    "comparison_mesh",
    "total_field_on_grid",
    "field_error",
    "cmd_solve",
    "cmd_convergence",
    "cmd_pml_sweep",
    "cmd_validate",
    "main",
]

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_ACCEPTANCE = 4

_INTERFACE_KINDS = ("flat", "two-piece-flat", "bump-dip", "notched", "step")
_FIXED_INTERFACES = ("bump-dip", "notched", "step")
#: default node count of the fixed comparison grid used by sweep drivers
_DEFAULT_COMPARISON = {
    "flat": 20,
    "two-piece-flat": 20,
    "bump-dip": 160,
    "notched": 840,
    "step": 120,
}


# -- configuration ----------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """A schema-validated, fully defaulted run description.

    Attributes hold plain JSON-compatible dictionaries; :meth:`to_dict`
    emits the effective configuration, and feeding that document back
    through :func:`normalize_config` reproduces an equal ``RunConfig``.
    """

    units: str
    medium: dict
    geometry: dict
    incidence: dict
    pml: dict
    discretization: dict
    sweep: dict
    norm: str
    output: dict

    def to_dict(self) -> dict:
        return {
            "units": self.units,
            "medium": dict(self.medium),
            "geometry": dict(self.geometry),
            "incidence": dict(self.incidence),
            "pml": dict(self.pml),
            "discretization": dict(self.discretization),
            "sweep": dict(self.sweep),
            "norm": self.norm,
            "output": dict(self.output),
        }


def _require_keys(block: dict, allowed: set, required: set, where: str) -> None:
    if not isinstance(block, dict):
        raise ConfigurationError(f"'{where}' must be an object")
    unknown = set(block) - allowed
    if unknown:
        raise ConfigurationError(
            f"unknown key(s) {sorted(unknown)} in '{where}'; "
            f"allowed: {sorted(allowed)}")
    missing = required - set(block)
    if missing:
        raise ConfigurationError(f"'{where}' is missing {sorted(missing)}")


def _number(block: dict, key: str, where: str, *, default=None,
            positive=False, allow_none=False) -> float | None:
    value = block.get(key, default)
    if value is None:
        if allow_none:
            return None
        raise ConfigurationError(f"'{where}.{key}' is required")
    if not isinstance(value, (int, float)) or isinstance(value, bool) \
            or not math.isfinite(value):
        raise ConfigurationError(f"'{where}.{key}' must be a finite number")
    if positive and value <= 0:
        raise ConfigurationError(f"'{where}.{key}' must be positive")
    return float(value)


def _even_int(value, where: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool) \
            or value <= 0 or value % 2 != 0:
        raise ConfigurationError(f"'{where}' must be a positive even integer")
    return value


def _point2(block: dict, key: str, where: str) -> list[float]:
    value = block.get(key)
    if (not isinstance(value, (list, tuple)) or len(value) != 2
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                       and math.isfinite(v) for v in value)):
        raise ConfigurationError(
            f"'{where}.{key}' must be a pair of finite numbers")
    return [float(value[0]), float(value[1])]


def normalize_config(raw: dict) -> RunConfig:
    """Validate a raw configuration document and fill in all defaults.

    The document has the following blocks (defaults in parentheses):

    ``units`` ("absolute")
        Either ``"absolute"`` or ``"wavelengths"``; in the latter case
        every length in the document is multiplied by the wavelength when
        the problem is built.  Fixed-coordinate interfaces reject
        wavelength units unless the wavelength is 1.
    ``medium``
        ``wavelength`` (1.0), ``n1``, ``n2``, ``polarization`` ("TE"),
        ``n_obstacle`` (null).
    ``geometry``
        ``interface`` in {flat, two-piece-flat, bump-dip, notched, step};
        ``half_width`` (2.0) and ``elevation`` (0.0) for the flat kinds;
        ``obstacle`` (null) or ``{kind: "teardrop", center, radius, tip}``.
    ``incidence``
        ``{type: "point", position: [x1, x2]}`` or ``{type: "plane"}``
        with exactly one of ``angle_rad`` / ``angle_deg`` (normalized to
        ``angle_rad``, measured from the positive x1 axis).
    ``pml``
        ``a1``, ``thickness``, ``strength``, ``order`` (8).
    ``discretization``
        ``n`` or ``per_segment`` (exactly one), ``n_obstacle`` (null),
        ``grading_order`` (6), ``correction_order`` (must be 6).
    ``sweep`` (optional)
        ``n_values``, ``n_obstacle_values``, ``s_values``, ``reference``
        ("self" or "oracle"), ``reference_n``, ``reference_n_obstacle``,
        ``reference_s`` (2.0), ``comparison_n`` (per-interface default),
        ``fit_window`` (null).
    ``norm`` ("sup")
        Error norm for sweep drivers, ``"sup"`` or ``"l2"``.
    ``output``
        ``field_grid`` (null) or ``{x1: [lo, hi], x2: [lo, hi],
        resolution: R or [R1, R2]}``.
    """
    if not isinstance(raw, dict):
        raise ConfigurationError("configuration document must be an object")
    _require_keys(
        raw,
        {"units", "medium", "geometry", "incidence", "pml",
         "discretization", "sweep", "norm", "output"},
        {"medium", "geometry", "incidence", "pml", "discretization"},
        "configuration")

    units = raw.get("units", "absolute")
    if units not in ("absolute", "wavelengths"):
        raise ConfigurationError(
            "'units' must be 'absolute' or 'wavelengths'")

    med_raw = raw["medium"]
    _require_keys(med_raw,
                  {"wavelength", "n1", "n2", "polarization", "n_obstacle"},
                  {"n1", "n2"}, "medium")
    polarization = med_raw.get("polarization", "TE")
    if not isinstance(polarization, str) \
            or polarization.upper() not in ("TE", "TM"):
        raise ConfigurationError("'medium.polarization' must be TE or TM")
    medium = {
        "wavelength": _number(med_raw, "wavelength", "medium", default=1.0,
                              positive=True),
        "n1": _number(med_raw, "n1", "medium", positive=True),
        "n2": _number(med_raw, "n2", "medium", positive=True),
        "polarization": polarization.upper(),
        "n_obstacle": _number(med_raw, "n_obstacle", "medium",
                              allow_none=True, positive=True),
    }

    geo_raw = raw["geometry"]
    _require_keys(geo_raw,
                  {"interface", "half_width", "elevation", "obstacle"},
                  {"interface"}, "geometry")
    kind = geo_raw.get("interface")
    if kind not in _INTERFACE_KINDS:
        raise ConfigurationError(
            f"'geometry.interface' must be one of {_INTERFACE_KINDS}")
    geometry: dict = {"interface": kind}
    if kind in ("flat", "two-piece-flat"):
        geometry["half_width"] = _number(geo_raw, "half_width", "geometry",
                                         default=2.0, positive=True)
        if kind == "flat":
            geometry["elevation"] = _number(geo_raw, "elevation", "geometry",
                                            default=0.0)
    elif "half_width" in geo_raw or "elevation" in geo_raw:
        raise ConfigurationError(
            f"'{kind}' is a fixed-coordinate interface; it accepts no "
            "'half_width' or 'elevation'")
    obstacle_raw = geo_raw.get("obstacle")
    if obstacle_raw is None:
        geometry["obstacle"] = None
    else:
        _require_keys(obstacle_raw, {"kind", "center", "radius", "tip"},
                      {"kind"}, "geometry.obstacle")
        if obstacle_raw.get("kind") != "teardrop":
            raise ConfigurationError(
                "'geometry.obstacle.kind' must be 'teardrop'")
        geometry["obstacle"] = {
            "kind": "teardrop",
            "center": _point2(obstacle_raw, "center", "geometry.obstacle")
            if "center" in obstacle_raw else [0.0, 1.75],
            "radius": _number(obstacle_raw, "radius", "geometry.obstacle",
                              default=0.75, positive=True),
            "tip": _point2(obstacle_raw, "tip", "geometry.obstacle")
            if "tip" in obstacle_raw else [0.0, 2.9],
        }

    inc_raw = raw["incidence"]
    _require_keys(inc_raw, {"type", "position", "angle_rad", "angle_deg"},
                  {"type"}, "incidence")
    inc_type = inc_raw.get("type")
    if inc_type == "point":
        incidence = {"type": "point",
                     "position": _point2(inc_raw, "position", "incidence")}
    elif inc_type == "plane":
        has_rad = "angle_rad" in inc_raw
        has_deg = "angle_deg" in inc_raw
        if has_rad == has_deg:
            raise ConfigurationError(
                "plane incidence needs exactly one of "
                "'incidence.angle_rad' / 'incidence.angle_deg'")
        if has_deg:
            angle = math.radians(_number(inc_raw, "angle_deg", "incidence"))
        else:
            angle = _number(inc_raw, "angle_rad", "incidence")
        if not 0.0 <= angle <= math.pi:
            raise ConfigurationError(
                "plane incidence angle must lie in [0, pi] radians")
        incidence = {"type": "plane", "angle_rad": angle}
    else:
        raise ConfigurationError("'incidence.type' must be 'point' or 'plane'")

    pml_raw = raw["pml"]
    _require_keys(pml_raw, {"a1", "thickness", "strength", "order"},
                  {"a1", "thickness", "strength"}, "pml")
    order = pml_raw.get("order", 8)
    if not isinstance(order, int) or isinstance(order, bool) or order < 1:
        raise ConfigurationError("'pml.order' must be a positive integer")
    pml = {
        "a1": _number(pml_raw, "a1", "pml", positive=True),
        "thickness": _number(pml_raw, "thickness", "pml", positive=True),
        "strength": _number(pml_raw, "strength", "pml", positive=True),
        "order": order,
    }

    dis_raw = raw["discretization"]
    _require_keys(dis_raw,
                  {"n", "per_segment", "n_obstacle", "grading_order",
                   "correction_order"},
                  set(), "discretization")
    has_n = dis_raw.get("n") is not None
    has_seg = dis_raw.get("per_segment") is not None
    if has_n == has_seg:
        raise ConfigurationError(
            "'discretization' needs exactly one of 'n' / 'per_segment'")
    discretization: dict = {
        "grading_order": dis_raw.get("grading_order", 6),
        "correction_order": dis_raw.get("correction_order", 6),
    }
    if not isinstance(discretization["grading_order"], int) \
            or isinstance(discretization["grading_order"], bool) \
            or discretization["grading_order"] < 2:
        raise ConfigurationError(
            "'discretization.grading_order' must be an integer >= 2")
    if discretization["correction_order"] != 6:
        raise ConfigurationError(
            "'discretization.correction_order': only the shipped 6th-order "
            "correction rule is implemented")
    if has_n:
        discretization["n"] = _even_int(dis_raw["n"], "discretization.n")
        discretization["per_segment"] = None
    else:
        seg = dis_raw["per_segment"]
        if not isinstance(seg, (list, tuple)) or not seg:
            raise ConfigurationError(
                "'discretization.per_segment' must be a non-empty list")
        discretization["per_segment"] = [
            _even_int(v, "discretization.per_segment") for v in seg]
        discretization["n"] = None
    n_ob = dis_raw.get("n_obstacle")
    discretization["n_obstacle"] = (
        None if n_ob is None
        else _even_int(n_ob, "discretization.n_obstacle"))

    sweep_raw = raw.get("sweep", {})
    _require_keys(sweep_raw,
                  {"n_values", "n_obstacle_values", "s_values", "reference",
                   "reference_n", "reference_n_obstacle", "reference_s",
                   "comparison_n", "fit_window"},
                  set(), "sweep")
    reference = sweep_raw.get("reference", "self")
    if reference not in ("self", "oracle"):
        raise ConfigurationError("'sweep.reference' must be 'self' or 'oracle'")

    def int_list(key):
        values = sweep_raw.get(key)
        if values is None:
            return None
        if not isinstance(values, (list, tuple)) or len(values) < 2:
            raise ConfigurationError(
                f"'sweep.{key}' must list at least two values")
        out = [_even_int(v, f"sweep.{key}") for v in values]
        if any(b <= a for a, b in zip(out, out[1:])):
            raise ConfigurationError(
                f"'sweep.{key}' must be strictly increasing")
        return out

    s_values = sweep_raw.get("s_values")
    if s_values is not None:
        if not isinstance(s_values, (list, tuple)) or len(s_values) < 2:
            raise ConfigurationError(
                "'sweep.s_values' must list at least two values")
        s_values = [_number({"s": v}, "s", "sweep.s_values", positive=True)
                    for v in s_values]
        if any(b <= a for a, b in zip(s_values, s_values[1:])):
            raise ConfigurationError(
                "'sweep.s_values' must be strictly increasing")
    fit_window = sweep_raw.get("fit_window")
    if fit_window is not None:
        fit_window = _point2({"w": fit_window}, "w", "sweep.fit_window")
        if fit_window[1] <= fit_window[0]:
            raise ConfigurationError("'sweep.fit_window' must be increasing")
    comparison_n = sweep_raw.get("comparison_n")
    sweep = {
        "n_values": int_list("n_values"),
        "n_obstacle_values": int_list("n_obstacle_values"),
        "s_values": s_values,
        "reference": reference,
        "reference_n": (None if sweep_raw.get("reference_n") is None
                        else _even_int(sweep_raw["reference_n"],
                                       "sweep.reference_n")),
        "reference_n_obstacle": (
            None if sweep_raw.get("reference_n_obstacle") is None
            else _even_int(sweep_raw["reference_n_obstacle"],
                           "sweep.reference_n_obstacle")),
        "reference_s": _number(sweep_raw, "reference_s", "sweep",
                               default=2.0, positive=True),
        "comparison_n": (None if comparison_n is None
                         else _even_int(comparison_n, "sweep.comparison_n")),
        "fit_window": fit_window,
    }

    norm = raw.get("norm", "sup")
    if norm not in ("sup", "l2"):
        raise ConfigurationError("'norm' must be 'sup' or 'l2'")

    out_raw = raw.get("output", {})
    _require_keys(out_raw, {"field_grid"}, set(), "output")
    grid_raw = out_raw.get("field_grid")
    if grid_raw is None:
        output: dict = {"field_grid": None}
    else:
        _require_keys(grid_raw, {"x1", "x2", "resolution"},
                      {"x1", "x2"}, "output.field_grid")
        x1 = _point2(grid_raw, "x1", "output.field_grid")
        x2 = _point2(grid_raw, "x2", "output.field_grid")
        if x1[1] <= x1[0] or x2[1] <= x2[0]:
            raise ConfigurationError(
                "'output.field_grid' extents must be increasing pairs")
        res = grid_raw.get("resolution", 101)
        if isinstance(res, int) and not isinstance(res, bool):
            res = [res, res]
        if (not isinstance(res, (list, tuple)) or len(res) != 2
                or not all(isinstance(r, int) and not isinstance(r, bool)
                           and r >= 2 for r in res)):
            raise ConfigurationError(
                "'output.field_grid.resolution' must be an integer >= 2 "
                "or a pair of them")
        output = {"field_grid": {"x1": x1, "x2": x2,
                                 "resolution": [res[0], res[1]]}}

    cfg = RunConfig(units=units, medium=medium, geometry=geometry,
                    incidence=incidence, pml=pml,
                    discretization=discretization, sweep=sweep, norm=norm,
                    output=output)
    # cross-block invariants that do not need the meshes
    if geometry["obstacle"] is not None:
        if medium["n_obstacle"] is None:
            raise ConfigurationError(
                "an obstacle needs 'medium.n_obstacle'")
        if discretization["n_obstacle"] is None:
            raise ConfigurationError(
                "an obstacle needs 'discretization.n_obstacle'")
    if units == "wavelengths" and kind in _FIXED_INTERFACES \
            and medium["wavelength"] != 1.0:
        raise ConfigurationError(
            f"'{kind}' has fixed absolute coordinates; wavelength units "
            "require wavelength = 1 or an absolute-units document")
    return cfg


def load_config(path: str | Path) -> RunConfig:
    """Read and validate a JSON configuration file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") \
            from exc
    return normalize_config(raw)


# -- problem construction ---------------------------------------------------


@dataclass(frozen=True)
class Problem:
    """Meshes and physical data realized from a :class:`RunConfig`."""

    mesh: GradedMesh
    obstacle_mesh: GradedMesh | None
    medium: LayeredMedium
    incidence: PlaneWave | PointSource
    profile: PmlProfile


def _interface_curve(cfg: RunConfig, scale: float):
    kind = cfg.geometry["interface"]
    if kind == "flat":
        return flat_interface(scale * cfg.geometry["half_width"],
                              scale * cfg.geometry.get("elevation", 0.0))
    if kind == "two-piece-flat":
        return two_piece_flat_interface(scale * cfg.geometry["half_width"])
    builder = {"bump-dip": bump_dip_interface,
               "notched": notched_interface,
               "step": step_interface}[kind]
    return builder()


def build_problem(cfg: RunConfig, *, n: int | None = None,
                  n_obstacle: int | None = None,
                  strength: float | None = None) -> Problem:
    """Build meshes, medium, incidence, and absorber from a configuration.

    ``n``, ``n_obstacle``, and ``strength`` override the configured node
    counts and absorption strength (used by the sweep drivers).
    """
    scale = cfg.medium["wavelength"] if cfg.units == "wavelengths" else 1.0
    medium = LayeredMedium(
        2.0 * math.pi / cfg.medium["wavelength"],
        cfg.medium["n1"], cfg.medium["n2"],
        cfg.medium["polarization"],
        n_obstacle=cfg.medium["n_obstacle"],
    )
    curve = _interface_curve(cfg, scale)
    if n is not None:
        mesh = build_mesh(curve, n,
                          grading_order=cfg.discretization["grading_order"])
    elif cfg.discretization["per_segment"] is not None:
        mesh = build_mesh(curve,
                          per_segment=cfg.discretization["per_segment"],
                          grading_order=cfg.discretization["grading_order"])
    else:
        mesh = build_mesh(curve, cfg.discretization["n"],
                          grading_order=cfg.discretization["grading_order"])

    obstacle_mesh = None
    ob = cfg.geometry["obstacle"]
    if ob is not None:
        curve_ob = teardrop_obstacle(
            center=(scale * ob["center"][0], scale * ob["center"][1]),
            radius=scale * ob["radius"],
            tip=(scale * ob["tip"][0], scale * ob["tip"][1]))
        count = n_obstacle if n_obstacle is not None \
            else cfg.discretization["n_obstacle"]
        obstacle_mesh = build_mesh(
            curve_ob, count,
            grading_order=cfg.discretization["grading_order"])

    profile = PmlProfile(scale * cfg.pml["a1"],
                         scale * cfg.pml["thickness"],
                         cfg.pml["strength"] if strength is None else strength,
                         cfg.pml["order"])
    reach = max(abs(curve.start[0]), abs(curve.end[0]))
    span = profile.a1 + profile.thickness
    if abs(reach - span) > 1e-9 * max(1.0, span):
        raise ConfigurationError(
            f"the absorbing layer must end exactly where the interface is "
            f"truncated: interface reaches |x1| = {reach:g} but "
            f"a1 + thickness = {span:g}")

    if cfg.incidence["type"] == "plane":
        incidence: PlaneWave | PointSource = \
            PlaneWave(cfg.incidence["angle_rad"])
    else:
        pos = cfg.incidence["position"]
        incidence = PointSource((scale * pos[0], scale * pos[1]))
    _validate_incidence(
        mesh.curve, medium, incidence, profile, None,
        obstacle_curve=None if obstacle_mesh is None else obstacle_mesh.curve)
    return Problem(mesh, obstacle_mesh, medium, incidence, profile)


def _solve_problem(problem: Problem, *, threads: int = 1) -> SolveResult:
    if problem.obstacle_mesh is not None:
        return solve_with_obstacle(problem.mesh, problem.obstacle_mesh,
                                   problem.medium, problem.incidence,
                                   problem.profile, threads=threads)
    return solve_interface(problem.mesh, problem.medium, problem.incidence,
                           problem.profile, threads=threads)


# -- comparison protocol ----------------------------------------------------


def comparison_mesh(cfg: RunConfig) -> GradedMesh:
    """The fixed coarse node set sweep errors are measured on."""
    n_cmp = cfg.sweep["comparison_n"]
    if n_cmp is None:
        n_cmp = _DEFAULT_COMPARISON[cfg.geometry["interface"]]
    scale = cfg.medium["wavelength"] if cfg.units == "wavelengths" else 1.0
    return build_mesh(_interface_curve(cfg, scale), n_cmp,
                      grading_order=cfg.discretization["grading_order"])


def total_field_on_grid(result: SolveResult, grid: GradedMesh):
    """Interpolate a solved total field onto a coarse comparison grid.

    The solved interface traces (upper- and lower-side scattered parts)
    are trigonometrically interpolated in the mesh parameter onto the
    node set of ``grid``, and the exact reference field of the incidence
    is added at the grid positions.  Returns ``(upper, lower, physical)``
    where ``physical`` masks the grid nodes outside the absorbing layer.

    Both meshes must grade the same curve with the same per-segment
    parameter breaks, otherwise the shared parameterization assumption
    fails and a :class:`ConfigurationError` is raised.
    """
    ctx = result.context
    if ctx is None:
        raise ConfigurationError(
            "comparison needs a result carrying its solve context")
    mesh = ctx.upper.pieces[0].mesh
    if mesh.t_breaks.shape != grid.t_breaks.shape \
            or not np.allclose(mesh.t_breaks, grid.t_breaks, atol=1e-12):
        raise ConfigurationError(
            "comparison grid and solution mesh split the curve parameter "
            "differently; choose node counts with equal per-segment shares")
    profile = ctx.upper.profile
    tau = grid.t_nodes
    upper = trig_interp(result.trace_upper, tau)
    lower = trig_interp(result.trace_lower, tau)
    pts = grid.points
    upper = upper + _reference_values(pts, ctx.medium, ctx.incidence, 1)[0]
    lower = lower + _reference_values(pts, ctx.medium, ctx.incidence, 2)[0]
    physical = np.abs(pts[:, 0]) < profile.a1
    return upper, lower, physical


def field_error(candidate, reference, physical, norm: str) -> float:
    """Relative error between two (upper, lower) total-field samplings."""
    du = (candidate[0] - reference[0])[physical]
    dl = (candidate[1] - reference[1])[physical]
    ru = reference[0][physical]
    rl = reference[1][physical]
    diff = np.concatenate([du, dl])
    ref = np.concatenate([ru, rl])
    if norm == "l2":
        return float(np.linalg.norm(diff) / np.linalg.norm(ref))
    return float(np.max(np.abs(diff)) / np.max(np.abs(ref)))


def _oracle_on_grid(cfg: RunConfig, grid: GradedMesh, medium: LayeredMedium,
                    incidence) -> tuple:
    if cfg.geometry["interface"] not in ("flat", "two-piece-flat") \
            or cfg.geometry["obstacle"] is not None \
            or not isinstance(incidence, PointSource):
        raise ConfigurationError(
            "the layered-medium oracle covers only the unperturbed flat "
            "interface with a point source; use sweep.reference = 'self'")
    vals = np.array([layered_green(p, incidence.position, medium)
                     for p in grid.points])
    return vals, vals


# -- reports ----------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceReport:
    """Sweep outcome: (parameter, error) pairs and a fitted decay rate."""

    parameter: str
    pairs: tuple
    slope: float
    reference: str
    norm: str
    comparison_n: int

    def __post_init__(self):
        for value, err in self.pairs:
            if not err > 0:
                raise ParameterError(
                    f"convergence errors must be positive, got {err} "
                    f"at {self.parameter} = {value}")

    def to_dict(self) -> dict:
        return {
            "parameter": self.parameter,
            "pairs": [[v, e] for v, e in self.pairs],
            "slope": self.slope,
            "reference": self.reference,
            "norm": self.norm,
            "comparison_n": self.comparison_n,
        }


def _fit_slope(pairs, window) -> float:
    values = np.array([v for v, _ in pairs], dtype=float)
    errors = np.array([e for _, e in pairs], dtype=float)
    if window is not None:
        keep = (values >= window[0]) & (values <= window[1])
        if np.sum(keep) < 2:
            raise ConfigurationError(
                "'sweep.fit_window' keeps fewer than two sweep points")
        values, errors = values[keep], errors[keep]
    return float(np.polyfit(np.log(values), np.log(errors), 1)[0])


# -- output helpers ---------------------------------------------------------


def _fmt(value: float) -> str:
    return repr(float(value))


def _write_csv(path: Path, header: str, rows) -> None:
    lines = [header]
    lines.extend(",".join(str(c) for c in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_effective_config(cfg: RunConfig, out: Path) -> None:
    (out / "effective_config.json").write_text(
        json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")


def _write_diagnostics(path: Path, entries: dict) -> None:
    lines = [f"{key} = {value}" for key, value in entries.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- verbs ------------------------------------------------------------------


def cmd_solve(cfg: RunConfig, out_dir: str | Path, *, threads: int = 1) -> None:
    """Solve one configuration; write densities, field grid, diagnostics."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem = build_problem(cfg)
    t0 = time.perf_counter()
    result = _solve_problem(problem, threads=threads)
    solve_seconds = time.perf_counter() - t0
    logger.info("solve finished in %.2f s", solve_seconds)

    mesh = problem.mesh
    rows = []
    for j in range(mesh.n):
        rows.append((
            j, int(mesh.segment_of_node[j]), _fmt(mesh.t_nodes[j]),
            _fmt(mesh.points[j, 0]), _fmt(mesh.points[j, 1]),
            _fmt(result.density_upper[j].real), _fmt(result.density_upper[j].imag),
            _fmt(result.density_lower[j].real), _fmt(result.density_lower[j].imag),
            _fmt(result.trace_upper[j].real), _fmt(result.trace_upper[j].imag),
            _fmt(result.trace_lower[j].real), _fmt(result.trace_lower[j].imag),
        ))
    _write_csv(
        out / "densities.csv",
        "index,segment,t,x1,x2,density_upper_re,density_upper_im,"
        "density_lower_re,density_lower_im,trace_upper_re,trace_upper_im,"
        "trace_lower_re,trace_lower_im",
        rows)

    if result.has_obstacle:
        ob = problem.obstacle_mesh
        rows = []
        for j in range(ob.n):
            rows.append((
                j, _fmt(ob.t_nodes[j]),
                _fmt(ob.points[j, 0]), _fmt(ob.points[j, 1]),
                _fmt(result.density_upper_obstacle[j].real),
                _fmt(result.density_upper_obstacle[j].imag),
                _fmt(result.trace_upper_obstacle[j].real),
                _fmt(result.trace_upper_obstacle[j].imag),
                _fmt(result.density_obstacle[j].real),
                _fmt(result.density_obstacle[j].imag),
                _fmt(result.trace_obstacle[j].real),
                _fmt(result.trace_obstacle[j].imag),
            ))
        _write_csv(
            out / "obstacle_densities.csv",
            "index,t,x1,x2,density_exterior_re,density_exterior_im,"
            "trace_exterior_re,trace_exterior_im,density_interior_re,"
            "density_interior_im,trace_interior_re,trace_interior_im",
            rows)

    grid_cfg = cfg.output["field_grid"]
    grid_points = 0
    if grid_cfg is not None:
        res1, res2 = grid_cfg["resolution"]
        x1s = np.linspace(grid_cfg["x1"][0], grid_cfg["x1"][1], res1)
        x2s = np.linspace(grid_cfg["x2"][0], grid_cfg["x2"][1], res2)
        rows = []
        for x2 in x2s:
            for x1 in x1s:
                try:
                    value = evaluate_field(result, (float(x1), float(x2)))
                    re, im, status = value.real, value.imag, "ok"
                except NearBoundaryError:
                    re = im = math.nan
                    status = "skipped-near-boundary"
                except UnsupportedRegionError:
                    re = im = math.nan
                    status = "skipped-absorbing-layer"
                rows.append((_fmt(x1), _fmt(x2), _fmt(re), _fmt(im), status))
        _write_csv(out / "field.csv", "x1,x2,re,im,status", rows)
        grid_points = len(rows)

    diag = {"n": mesh.n, "solve_seconds": f"{solve_seconds:.3f}",
            "field_grid_points": grid_points}
    for key in sorted(result.diagnostics):
        diag[key] = repr(result.diagnostics[key])
    _write_diagnostics(out / "diagnostics.txt", diag)
    _write_effective_config(cfg, out)


def _sweep_drive(cfg: RunConfig, out_dir, threads, norm, parameter):
    """Shared machinery of ``convergence`` (N) and ``pml-sweep`` (S)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    norm = norm or cfg.norm
    sweep = cfg.sweep
    has_obstacle = cfg.geometry["obstacle"] is not None
    grid = comparison_mesh(cfg)

    if parameter == "n":
        values = sweep["n_values"]
        if values is None:
            raise ConfigurationError("'sweep.n_values' is required")
        ob_values = sweep["n_obstacle_values"]
        if has_obstacle:
            if ob_values is None or len(ob_values) != len(values):
                raise ConfigurationError(
                    "'sweep.n_obstacle_values' must accompany "
                    "'sweep.n_values' entry by entry for obstacle runs")
        def make(value, ob):
            return build_problem(cfg, n=value, n_obstacle=ob)
    else:
        values = sweep["s_values"]
        if values is None:
            raise ConfigurationError("'sweep.s_values' is required")
        ob_values = [cfg.discretization["n_obstacle"]] * len(values)
        def make(value, ob):
            return build_problem(cfg, strength=value)

    probe = build_problem(cfg)  # validates incidence/geometry up front

    if sweep["reference"] == "oracle":
        reference = _oracle_on_grid(cfg, grid, probe.medium, probe.incidence)
        ref_physical = np.abs(grid.points[:, 0]) < probe.profile.a1
        ref_label = "oracle: layered-medium point-source solution"
        entries = list(values)
        ob_entries = list(ob_values) if has_obstacle else [None] * len(values)
    else:
        if parameter == "n":
            ref_value = sweep["reference_n"] or values[-1]
            ref_ob = sweep["reference_n_obstacle"]
            if has_obstacle and ref_ob is None:
                if ref_value != values[-1]:
                    raise ConfigurationError(
                        "'sweep.reference_n_obstacle' is required for "
                        "obstacle self-reference")
                ref_ob = ob_values[-1]
            ref_problem = build_problem(cfg, n=ref_value, n_obstacle=ref_ob)
            ref_label = f"self reference at n = {ref_value}"
        else:
            ref_value = sweep["reference_s"]
            ref_problem = build_problem(cfg, strength=ref_value)
            ref_label = f"self reference at strength = {ref_value:g}"
        drop_last = values[-1] == ref_value and parameter == "n" \
            and sweep["reference_n"] in (None, values[-1])
        entries = values[:-1] if drop_last else list(values)
        ob_entries = (ob_values[:-1] if drop_last else list(ob_values)) \
            if has_obstacle else [None] * len(entries)
        t0 = time.perf_counter()
        ref_result = _solve_problem(ref_problem, threads=threads)
        logger.info("reference solve (%s = %s) took %.2f s", parameter,
                    ref_value, time.perf_counter() - t0)
        up, lo, ref_physical = total_field_on_grid(ref_result, grid)
        reference = (up, lo)

    def run_entry(args):
        value, ob = args
        problem = make(value, ob)
        result = _solve_problem(problem, threads=1)
        up, lo, physical = total_field_on_grid(result, grid)
        assert np.array_equal(physical, ref_physical)
        return field_error((up, lo), reference, physical, norm)

    jobs = list(zip(entries, ob_entries))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            errors = list(pool.map(run_entry, jobs))
    else:
        errors = [run_entry(job) for job in jobs]
    for value, err in zip(entries, errors):
        logger.info("%s = %s: relative %s error %.3e", parameter, value,
                    norm, err)

    pairs = tuple((float(v), float(e)) for v, e in zip(entries, errors))
    report = ConvergenceReport(
        parameter=parameter, pairs=pairs,
        slope=_fit_slope(pairs, sweep["fit_window"]),
        reference=ref_label, norm=norm, comparison_n=grid.n)

    name = "convergence" if parameter == "n" else "pml_sweep"
    _write_csv(out / f"{name}.csv", f"{parameter},error",
               ((_fmt(v), _fmt(e)) for v, e in pairs))
    (out / f"{name}_report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    _write_diagnostics(
        out / f"{name}_report.txt",
        {"parameter": parameter, "reference": report.reference,
         "norm": report.norm, "comparison_n": report.comparison_n,
         "slope": f"{report.slope:.4f}",
         **{f"error[{v:g}]": f"{e:.6e}" for v, e in pairs}})
    _write_effective_config(cfg, out)
    return report


def cmd_convergence(cfg: RunConfig, out_dir: str | Path, *, threads: int = 1,
                    norm: str | None = None) -> ConvergenceReport:
    """Node-count sweep against an oracle or self reference."""
    return _sweep_drive(cfg, out_dir, threads, norm, "n")


def cmd_pml_sweep(cfg: RunConfig, out_dir: str | Path, *, threads: int = 1,
                  norm: str | None = None) -> ConvergenceReport:
    """Absorption-strength sweep at fixed node count."""
    return _sweep_drive(cfg, out_dir, threads, norm, "strength")


def cmd_validate(out_dir: str | Path | None = None, *,
                 threads: int = 1) -> int:
    """Run the built-in acceptance suite; return the process exit code."""
    from .acceptance import run_suite

    results = run_suite(threads=threads)
    lines = []
    for res in results:
        word = {"pass": "PASS", "fail": "FAIL", "error": "ERROR"}[res.status]
        line = f"{word} {res.name} ({res.seconds:.1f}s): {res.detail}"
        print(line)
        lines.append(line)
    n_bad = sum(r.status != "pass" for r in results)
    summary = (f"{len(results) - n_bad}/{len(results)} criteria passed"
               if n_bad else f"all {len(results)} criteria passed")
    print(summary)
    lines.append(summary)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "validation.txt").write_text("\n".join(lines) + "\n",
                                            encoding="utf-8")
        (out / "validation.json").write_text(
            json.dumps([r.to_dict() for r in results], indent=2,
                       sort_keys=True) + "\n",
            encoding="utf-8")
    return EXIT_OK if n_bad == 0 else EXIT_ACCEPTANCE


# -- entry point ------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pmlbie",
        description="Layered-medium scattering solver: boundary integral "
                    "equations on a complex-stretched interface.")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, metavar="PATH",
                           help="JSON run configuration")
        p.add_argument("--out", default=None, metavar="DIR",
                       help="output directory (default: pmlbie-out)")
        p.add_argument("--threads", type=int, default=1, metavar="K",
                       help="worker threads for assembly/sweeps")

    p_solve = sub.add_parser("solve", help="solve one configuration")
    common(p_solve)
    for name, help_text in (("convergence", "node-count sweep"),
                            ("pml-sweep", "absorption-strength sweep")):
        q = sub.add_parser(name, help=help_text)
        common(q)
        q.add_argument("--norm", choices=("sup", "l2"), default=None,
                       help="error norm (default: config 'norm')")
    p_val = sub.add_parser("validate", help="run the acceptance suite")
    common(p_val, needs_config=False)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    out = args.out if args.out is not None else "pmlbie-out"
    threads = max(1, args.threads)
    try:
        if args.verb == "validate":
            return cmd_validate(args.out, threads=threads)
        cfg = load_config(args.config)
        if args.verb == "solve":
            cmd_solve(cfg, out, threads=threads)
        elif args.verb == "convergence":
            cmd_convergence(cfg, out, threads=threads, norm=args.norm)
        else:
            cmd_pml_sweep(cfg, out, threads=threads, norm=args.norm)
        return EXIT_OK
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, OracleError, PmlbieError, OSError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
