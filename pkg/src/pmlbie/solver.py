"""Transmission solve for scattering by a locally perturbed material interface.

The physical setup: two homogeneous half-planes meet along an interface
that is flat outside a bounded perturbation, with an optional penetrable
obstacle embedded in the upper half.  A known incident excitation (a
downward plane wave or a point source in the upper half) scatters off
the perturbation.  The solve works with the *scattered* field, defined
subdomain-wise as the total field minus a reference field: the exact
solution of the corresponding flat-interface problem, extended to each
subdomain by its analytic formula.

The scattered field is outgoing, so after complex coordinate stretching
it decays through the absorbing layer and the problem closes on the
truncated interface.  Each subdomain contributes a scaled
Neumann-to-Dirichlet (NtD) matrix (:func:`pmlbie.ntd.ntd_matrix`); the
interface conditions — continuity of the total field and of the
``eta``-weighted conormal flux — couple the subdomains into a dense
linear system for the conormal densities.  Off-boundary values of the
total field are then recovered from the boundary data by trapezoid
quadrature of the representation integral.

Conventions
-----------
Densities are stored in each subdomain's own outward-normal convention:
``phi = |x'(t)| * d u_scat / d nu_out`` node by node, matching the NtD
matrices.  The upper subdomain's outward normal on the interface is the
right-of-travel normal of the left-to-right interface curve (pointing
down); the lower subdomain's is its negative.  On an obstacle boundary
the upper subdomain's outward normal points into the obstacle, and the
obstacle interior's points out of it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import get_lapack_funcs, lu_factor, lu_solve

from .errors import (
    ConfigurationError,
    NearBoundaryError,
    ParameterError,
    SolverError,
    UnsupportedIncidenceError,
    UnsupportedRegionError,
)
from .geometry import GradedMesh, classify_side, curve_contains
from .kernels import KernelContext, double_layer_value, single_layer_value
from .ntd import NtdMatrix, SubdomainBoundary, _piece_machinery, ntd_matrix
from .pml import PmlProfile
from .special_fn import DomainError, hankel1, sqrt_nonneg_re

__all__ = [
    "LayeredMedium",
    "PlaneWave",
    "PointSource",
    "SolveContext",
    "SolveResult",
    "plane_wave_coefficients",
    "reference_plane",
    "reference_point",
    "jump_data",
    "solve_transmission",
    "solve_interface",
    "solve_with_obstacle",
    "evaluate_field",
]

_log = logging.getLogger(__name__)

#: Treat ``sin(angle)`` at or below this as grazing incidence.
_GRAZING_TOL = 1e-12

#: Condition-estimate floor below which coupled systems are rejected.
_RCOND_FLOOR = 1e-13


# -- problem description ----------------------------------------------------


@dataclass(frozen=True)
class LayeredMedium:
    """Two homogeneous half-planes, an optional obstacle fill, and a
    polarization that fixes the flux weights.

    Parameters
    ----------
    k0 : float
        Free-space wavenumber ``2 pi / wavelength``.
    n1, n2 : float
        Refractive indices above and below the interface.
    polarization : str
        ``"TE"`` (flux weight 1 in both media) or ``"TM"``
        (flux weight ``1 / n**2``).
    n_obstacle : float, optional
        Refractive index inside the obstacle, when one is present.
    """

    k0: float
    n1: float
    n2: float
    polarization: str = "TE"
    n_obstacle: Optional[float] = None

    def __post_init__(self):
        for name in ("k0", "n1", "n2"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ParameterError(f"{name} must be positive and finite, got {value!r}")
        if self.n_obstacle is not None and not (
            np.isfinite(self.n_obstacle) and self.n_obstacle > 0
        ):
            raise ParameterError(
                f"obstacle refractive index must be positive, got {self.n_obstacle!r}"
            )
        pol = str(self.polarization).upper()
        if pol not in ("TE", "TM"):
            raise ParameterError(
                f"polarization must be 'TE' or 'TM', got {self.polarization!r}"
            )
        object.__setattr__(self, "polarization", pol)

    def _eta(self, index: float) -> float:
        return 1.0 if self.polarization == "TE" else 1.0 / index**2

    @property
    def wavelength(self) -> float:
        return 2.0 * math.pi / self.k0

    @property
    def k1(self) -> float:
        return self.k0 * self.n1

    @property
    def k2(self) -> float:
        return self.k0 * self.n2

    @property
    def k_obstacle(self) -> float:
        if self.n_obstacle is None:
            raise ConfigurationError("medium has no obstacle refractive index")
        return self.k0 * self.n_obstacle

    @property
    def eta1(self) -> float:
        return self._eta(self.n1)

    @property
    def eta2(self) -> float:
        return self._eta(self.n2)

    @property
    def eta_obstacle(self) -> float:
        if self.n_obstacle is None:
            raise ConfigurationError("medium has no obstacle refractive index")
        return self._eta(self.n_obstacle)


@dataclass(frozen=True)
class PlaneWave:
    """Downward-travelling plane wave with direction ``(cos a, -sin a)``.

    ``angle`` is measured from the positive horizontal axis; ``pi / 2``
    is normal incidence.  Grazing angles (0 or ``pi``) are rejected when
    the wave is used, not at construction.
    """

    angle: float

    def __post_init__(self):
        if not (np.isfinite(self.angle) and 0.0 <= self.angle <= math.pi):
            raise ParameterError(
                f"plane-wave angle must lie in [0, pi], got {self.angle!r}"
            )


@dataclass(frozen=True)
class PointSource:
    """Point excitation at a position strictly above the interface."""

    position: tuple

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float)
        if pos.shape != (2,) or not np.all(np.isfinite(pos)):
            raise ParameterError(
                f"point-source position must be a finite 2-vector, got {self.position!r}"
            )
        object.__setattr__(self, "position", (float(pos[0]), float(pos[1])))


# -- reference fields -------------------------------------------------------


def plane_wave_coefficients(medium: LayeredMedium, angle: float):
    """Reflection and transmission amplitudes of the flat-interface problem.

    With incidence angle ``a`` the transmitted vertical wavenumber is
    ``ks = sqrt(k2**2 - (k1 cos a)**2)`` (decaying branch past total
    internal reflection) and the amplitudes enforcing continuity of the
    field and of the ``eta``-weighted vertical flux are::

        R = (eta1 k1 sin a - eta2 ks) / (eta1 k1 sin a + eta2 ks)
        T = 1 + R

    At normal incidence, TM, ``n1 = 1``, ``n2 = 2`` this gives the
    classical magnetic-field transmission value ``T = 4/3``.

    Returns
    -------
    (R, T, ks) : complex
        ``ks`` is real for propagating transmission, has positive
        imaginary part for evanescent transmission.

    Raises
    ------
    UnsupportedIncidenceError
        For grazing incidence (``sin a`` vanishes), where the reference
        problem degenerates.
    """
    if not (np.isfinite(angle) and 0.0 <= angle <= math.pi):
        raise ParameterError(f"plane-wave angle must lie in [0, pi], got {angle!r}")
    sin_a = math.sin(angle)
    if sin_a <= _GRAZING_TOL:
        raise UnsupportedIncidenceError(
            f"grazing incidence (angle {angle:.6g}) is not supported: the "
            "reference plane-wave problem carries no downward energy flux"
        )
    k1 = medium.k1
    kx = k1 * math.cos(angle)
    ks = np.lib.scimath.sqrt(medium.k2**2 - kx * kx)
    if ks.imag < 0.0:
        ks = -ks
    den = medium.eta1 * k1 * sin_a + medium.eta2 * ks
    refl = (medium.eta1 * k1 * sin_a - medium.eta2 * ks) / den
    return complex(refl), complex(1.0 + refl), complex(ks)


def _check_points(points) -> np.ndarray:
    pts = np.asarray(points)
    if pts.ndim < 1 or pts.shape[-1] != 2:
        raise ParameterError("points must have two coordinates in the last axis")
    return pts.astype(complex)


def reference_plane(points, medium: LayeredMedium, angle: float, *, side=None):
    """Flat-interface reference field of a plane wave, and its gradient.

    Above the unperturbed level the field is the incident wave plus the
    reflected wave; below it is the transmitted wave.  Both branches are
    entire solutions, so they may be evaluated at complexified
    (stretched) coordinates and on either side of the actual interface.

    Parameters
    ----------
    points : array_like, shape (..., 2)
        Evaluation points; complex entries are allowed.
    side : {None, 1, 2}
        ``1`` forces the upper-subdomain branch, ``2`` the transmitted
        branch; ``None`` selects by the sign of ``Re x2`` (points on the
        unperturbed level get the upper branch).

    Returns
    -------
    values : ndarray, shape (...)
    gradients : ndarray, shape (..., 2)
        Derivatives with respect to the (possibly complexified)
        coordinates.
    """
    pts = _check_points(points)
    if side not in (None, 1, 2):
        raise ParameterError(f"side must be None, 1 or 2, got {side!r}")
    refl, trans, ks = plane_wave_coefficients(medium, angle)
    k1 = medium.k1
    kx = k1 * math.cos(angle)
    ky = k1 * math.sin(angle)
    z1 = pts[..., 0]
    z2 = pts[..., 1]

    grads = np.empty(pts.shape, dtype=complex)
    if side == 2:
        vals = trans * np.exp(1j * (kx * z1 - ks * z2))
        grads[..., 0] = 1j * kx * vals
        grads[..., 1] = -1j * ks * vals
        return vals, grads
    e_inc = np.exp(1j * (kx * z1 - ky * z2))
    e_ref = refl * np.exp(1j * (kx * z1 + ky * z2))
    upper = e_inc + e_ref
    upper_g2 = 1j * ky * (e_ref - e_inc)
    if side == 1:
        vals = upper
        grads[..., 0] = 1j * kx * vals
        grads[..., 1] = upper_g2
        return vals, grads
    lower = trans * np.exp(1j * (kx * z1 - ks * z2))
    above = z2.real >= 0.0
    vals = np.where(above, upper, lower)
    grads[..., 0] = 1j * kx * vals
    grads[..., 1] = np.where(above, upper_g2, -1j * ks * lower)
    return vals, grads


def reference_point(points, medium: LayeredMedium, source, *, side=None):
    """Flat-interface reference field of a point source, and its gradient.

    The reference field is the free outgoing wave of the upper medium,
    ``(i/4) H1_0(k1 rho)``; the lower branch is identically zero (the
    transmitted part is carried by the scattered field instead).

    Parameters and return values match :func:`reference_plane`; the
    complexified distance uses the square root with nonnegative real
    part, so the formula accepts stretched coordinates.

    Raises
    ------
    DomainError
        If an upper-branch evaluation point coincides with the source.
    """
    pts = _check_points(points)
    if side not in (None, 1, 2):
        raise ParameterError(f"side must be None, 1 or 2, got {side!r}")
    src = np.asarray(source, dtype=float)
    if src.shape != (2,) or not np.all(np.isfinite(src)):
        raise ParameterError(f"source must be a finite 2-vector, got {source!r}")

    vals = np.zeros(pts.shape[:-1], dtype=complex)
    grads = np.zeros(pts.shape, dtype=complex)
    if side == 2:
        return vals, grads

    d1 = pts[..., 0] - src[0]
    d2 = pts[..., 1] - src[1]
    dist = sqrt_nonneg_re(d1 * d1 + d2 * d2)
    used = np.ones(vals.shape, dtype=bool) if side == 1 else (pts[..., 1].real >= 0.0)
    if np.any(used & (dist == 0.0)):
        raise DomainError("reference field is singular at the source point")
    safe = np.where(dist == 0.0, 1.0, dist)

    k1 = medium.k1
    g = 0.25j * hankel1(0, k1 * safe)
    gp = -0.25j * k1 * hankel1(1, k1 * safe)
    np.copyto(vals, g, where=used)
    np.copyto(grads[..., 0], gp * d1 / safe, where=used)
    np.copyto(grads[..., 1], gp * d2 / safe, where=used)
    return vals, grads


def _reference_values(points, medium: LayeredMedium, incidence, side):
    """Dispatch the reference field by incidence type."""
    if isinstance(incidence, PlaneWave):
        return reference_plane(points, medium, incidence.angle, side=side)
    if isinstance(incidence, PointSource):
        return reference_point(points, medium, incidence.position, side=side)
    raise ParameterError(f"unsupported incidence type: {incidence!r}")


def _scaled_conormal(w_prime, dxt, grads):
    """Grading-scaled conormal in the right-of-travel direction.

    ``grads`` are stretched-coordinate gradients at the nodes; ``dxt``
    is the stretched unit-speed tangent.  Multiplying the result by the
    piece orientation gives each subdomain's own outward conormal data.
    """
    return w_prime * (dxt[:, 1] * grads[..., 0] - dxt[:, 0] * grads[..., 1])


def jump_data(mesh: GradedMesh, medium: LayeredMedium, incidence,
              profile: PmlProfile, *, vertical: PmlProfile | None = None):
    """Right-hand-side data of the interface conditions at the nodes.

    The scattered field inherits jumps from the reference field:
    ``b1 = -(u0_upper - u0_lower)`` on the trace and
    ``b2 = -|x'| (eta1 d u0_upper - eta2 d u0_lower) / d nu`` on the
    flux, with the shared right-of-travel (downward) normal and
    stretched coordinates in the absorbing layer.

    For a flat interface and a plane wave both vanish identically; for a
    plane wave over a perturbed interface they are supported on the
    perturbation; for a point source ``b1 = -u_inc`` everywhere.

    Returns
    -------
    (b1, b2) : complex ndarrays of length ``mesh.n``
    """
    ctx = KernelContext(mesh, profile, medium.k1, vertical=vertical)
    vals_up, grads_up = _reference_values(ctx.xt, medium, incidence, side=1)
    vals_lo, grads_lo = _reference_values(ctx.xt, medium, incidence, side=2)
    d_up = _scaled_conormal(ctx.w_prime, ctx.dxt, grads_up)
    d_lo = _scaled_conormal(ctx.w_prime, ctx.dxt, grads_lo)
    b1 = -(vals_up - vals_lo)
    b2 = -(medium.eta1 * d_up - medium.eta2 * d_lo)
    return b1, b2


# -- linear solves ----------------------------------------------------------


@dataclass
class SolveContext:
    """Geometry and problem description attached to a solve result so
    the field can be evaluated afterwards."""

    upper: SubdomainBoundary
    lower: SubdomainBoundary
    obstacle: Optional[SubdomainBoundary]
    medium: LayeredMedium
    incidence: object


@dataclass
class SolveResult:
    """Boundary data of a transmission solve.

    Traces are scattered-field boundary values (total-field values for
    the obstacle interior); densities are grading-scaled outward
    conormal data in each subdomain's own convention.  ``diagnostics``
    collects condition estimates, relative residuals of the coupled
    interface conditions, and the absorbing-layer decay check.
    """

    density_upper: np.ndarray
    density_lower: np.ndarray
    trace_upper: np.ndarray
    trace_lower: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    density_upper_obstacle: Optional[np.ndarray] = None
    trace_upper_obstacle: Optional[np.ndarray] = None
    density_obstacle: Optional[np.ndarray] = None
    trace_obstacle: Optional[np.ndarray] = None
    context: Optional[SolveContext] = None

    @property
    def has_obstacle(self) -> bool:
        return self.density_obstacle is not None


def _as_matrix(operator, name: str) -> np.ndarray:
    mat = operator.matrix if isinstance(operator, NtdMatrix) else np.asarray(operator)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ParameterError(f"{name} must be a square matrix, got shape {mat.shape}")
    return mat


def _condition_of(operator) -> float | None:
    return operator.condition_estimate if isinstance(operator, NtdMatrix) else None


def _check_vector(vec, n: int, name: str) -> np.ndarray:
    arr = np.asarray(vec, dtype=complex)
    if arr.shape != (n,):
        raise ParameterError(f"{name} must have shape ({n},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains non-finite entries")
    return arr


def _factor_coupled(matrix: np.ndarray, what: str):
    """LU-factor a coupled system in place, with a 1-norm condition guard."""
    anorm = np.linalg.norm(matrix, 1)
    lu, piv = lu_factor(matrix, overwrite_a=True, check_finite=False)
    (gecon,) = get_lapack_funcs(("gecon",), (lu,))
    rcond, info = gecon(lu, anorm, norm="1")
    if info != 0 or not np.isfinite(rcond) or rcond < _RCOND_FLOOR:
        raise SolverError(
            f"{what} is numerically singular "
            f"(1-norm condition estimate {1.0 / max(rcond, 1e-300):.3e})"
        )
    return lu, piv, float(1.0 / rcond)


def _inf_norm(vec) -> float:
    return float(np.max(np.abs(vec))) if len(vec) else 0.0


def solve_transmission(ntd_upper, ntd_lower, b1, b2,
                       eta1: float, eta2: float) -> SolveResult:
    """Couple two interface NtD matrices through the jump data.

    Eliminating the lower density through the flux condition
    ``eta1 phi1 + eta2 phi2 = b2`` (own-outward conventions on both
    sides) reduces the two interface conditions to::

        (N1 + (eta1 / eta2) N2) phi1 = b1 + N2 b2 / eta2

    after which ``phi2 = (b2 - eta1 phi1) / eta2`` and the traces follow
    by applying the NtD matrices.

    Parameters
    ----------
    ntd_upper, ntd_lower : NtdMatrix or ndarray
        Interface NtD matrices of the subdomains above and below.
    b1, b2 : array_like
        Trace and flux jump data from :func:`jump_data`.
    eta1, eta2 : float
        Flux weights of the two media.

    Raises
    ------
    SolverError
        If the reduced system is numerically singular.
    """
    m1 = _as_matrix(ntd_upper, "upper NtD")
    m2 = _as_matrix(ntd_lower, "lower NtD")
    if m1.shape != m2.shape:
        raise ParameterError(
            f"NtD matrices must have matching shapes, got {m1.shape} and {m2.shape}"
        )
    n = m1.shape[0]
    rhs1 = _check_vector(b1, n, "b1")
    rhs2 = _check_vector(b2, n, "b2")
    if not (eta1 > 0 and eta2 > 0):
        raise ParameterError(f"flux weights must be positive, got {eta1!r}, {eta2!r}")

    coupled = m1 + (eta1 / eta2) * m2
    rhs = rhs1 + m2 @ (rhs2 / eta2)
    lu, piv, cond = _factor_coupled(coupled, "coupled transmission system")
    phi1 = lu_solve((lu, piv), rhs, check_finite=False)
    phi2 = (rhs2 - eta1 * phi1) / eta2
    trace1 = m1 @ phi1
    trace2 = m2 @ phi2

    scale = max(_inf_norm(rhs1), _inf_norm(rhs2), 1e-300)
    residual_trace = _inf_norm(trace1 - trace2 - rhs1) / scale
    residual_flux = _inf_norm(eta1 * phi1 + eta2 * phi2 - rhs2) / scale
    diagnostics = {
        "coupled_condition": cond,
        "upper_condition": _condition_of(ntd_upper),
        "lower_condition": _condition_of(ntd_lower),
        "trace_residual": residual_trace,
        "flux_residual": residual_flux,
    }
    _log.info(
        "transmission solve: %d nodes, coupled condition %.3e, "
        "residuals (trace %.3e, flux %.3e)",
        n, cond, residual_trace, residual_flux,
    )
    return SolveResult(
        density_upper=phi1,
        density_lower=phi2,
        trace_upper=trace1,
        trace_lower=trace2,
        diagnostics=diagnostics,
    )


# -- validation helpers -----------------------------------------------------


def _validate_incidence(curve, medium: LayeredMedium, incidence,
                        profile: PmlProfile, vertical: PmlProfile | None,
                        obstacle_curve=None) -> None:
    if isinstance(incidence, PlaneWave):
        if math.sin(incidence.angle) <= _GRAZING_TOL:
            raise UnsupportedIncidenceError(
                f"grazing incidence (angle {incidence.angle:.6g}) is not supported"
            )
        ya, yb = curve.start[1], curve.end[1]
        if max(abs(ya), abs(yb)) > 1e-12:
            raise UnsupportedIncidenceError(
                "plane-wave incidence needs an interface that returns to the "
                f"level x2 = 0 at both ends; this one ends at elevations "
                f"({ya:g}, {yb:g}).  The reference field's interface jumps do "
                "not decay along offset tails, so the truncation assumption "
                "fails — use a point source for this geometry."
            )
        return
    if isinstance(incidence, PointSource):
        pos = incidence.position
        if classify_side(curve, pos) != 1:
            raise ConfigurationError(
                f"point source {pos} must lie strictly above the interface"
            )
        if obstacle_curve is not None and curve_contains(obstacle_curve, pos):
            raise ConfigurationError(
                f"point source {pos} lies inside the obstacle"
            )
        lam = medium.wavelength
        margin = profile.a1 - abs(pos[0])
        if margin < lam - 1e-9:
            raise ConfigurationError(
                f"point source must stay at least one wavelength ({lam:.4g}) "
                f"from the absorbing layer; horizontal margin is {margin:.4g}"
            )
        if vertical is not None:
            vmargin = vertical.a1 - abs(pos[1])
            if vmargin < lam - 1e-9:
                raise ConfigurationError(
                    f"point source must stay at least one wavelength ({lam:.4g}) "
                    f"from the vertical absorbing layer; margin is {vmargin:.4g}"
                )
        return
    raise ParameterError(f"unsupported incidence type: {incidence!r}")


def _validate_obstacle_placement(mesh: GradedMesh, obstacle_mesh: GradedMesh,
                                 profile: PmlProfile,
                                 vertical: PmlProfile | None) -> None:
    pts = obstacle_mesh.points
    reach = float(np.max(np.abs(pts[:, 0])))
    if reach >= profile.a1:
        raise ConfigurationError(
            f"obstacle extends into the absorbing layer (|x1| reaches "
            f"{reach:g}, physical half-width is {profile.a1:g})"
        )
    if vertical is not None:
        vreach = float(np.max(np.abs(pts[:, 1])))
        if vreach >= vertical.a1:
            raise ConfigurationError(
                f"obstacle extends into the vertical absorbing layer "
                f"(|x2| reaches {vreach:g}, half-height is {vertical.a1:g})"
            )
    for point in pts:
        if classify_side(mesh.curve, point) != 1:
            raise ConfigurationError(
                f"obstacle must lie strictly inside the upper subdomain; "
                f"node {tuple(point)} falls below the interface"
            )


def _release_operators(boundary: SubdomainBoundary) -> None:
    """Drop cached dense operator blocks once the NtD matrix exists."""
    for key in [k for k in boundary._cache if k[0] == "operator"]:
        del boundary._cache[key]


def _pml_decay_ratio(mesh: GradedMesh, profile: PmlProfile, density) -> float:
    """``max |phi|`` over the outermost tenth of each side's layer nodes
    (by node count, deepest into the layer), relative to ``max |phi|``.

    A healthy absorbing layer damps the scattered field before the
    truncation, so the outermost densities should be negligible.
    """
    x1 = mesh.points[:, 0]
    mags = np.abs(density)
    peak = float(np.max(mags))
    if peak == 0.0:
        return 0.0
    worst = 0.0
    for sign in (-1.0, 1.0):
        inside = np.flatnonzero(sign * x1 >= profile.a1)
        if inside.size == 0:
            continue
        take = max(1, int(math.ceil(0.1 * inside.size)))
        order = inside[np.argsort(sign * x1[inside])]
        worst = max(worst, float(np.max(mags[order[-take:]])))
    return worst / peak


# -- drivers ----------------------------------------------------------------


def solve_interface(mesh: GradedMesh, medium: LayeredMedium, incidence,
                    profile: PmlProfile, *, vertical: PmlProfile | None = None,
                    threads: int = 1) -> SolveResult:
    """Solve the two-media transmission problem on a meshed interface.

    Builds both subdomains' NtD matrices, assembles the jump data for
    the given incidence, couples them with :func:`solve_transmission`,
    and attaches the geometry so :func:`evaluate_field` can be used on
    the result.

    Parameters
    ----------
    mesh : GradedMesh
        Graded mesh of the truncated interface (left to right).
    medium : LayeredMedium
    incidence : PlaneWave or PointSource
    profile : PmlProfile
        Horizontal absorbing-layer profile (shared by both subdomains).
    vertical : PmlProfile, optional
        Optional vertical absorbing layer.
    threads : int
        Worker threads for matrix assembly.
    """
    _validate_incidence(mesh.curve, medium, incidence, profile, vertical)
    upper = SubdomainBoundary.upper_half(
        mesh, k0=medium.k0, refractive_index=medium.n1, eta=medium.eta1,
        profile=profile, vertical=vertical)
    lower = SubdomainBoundary.lower_half(
        mesh, k0=medium.k0, refractive_index=medium.n2, eta=medium.eta2,
        profile=profile, vertical=vertical)
    ntd_upper = ntd_matrix(upper, threads=threads)
    _release_operators(upper)
    ntd_lower = ntd_matrix(lower, threads=threads)
    _release_operators(lower)

    b1, b2 = jump_data(mesh, medium, incidence, profile, vertical=vertical)
    result = solve_transmission(ntd_upper, ntd_lower, b1, b2,
                                medium.eta1, medium.eta2)
    result.context = SolveContext(upper=upper, lower=lower, obstacle=None,
                                  medium=medium, incidence=incidence)
    decay_up = _pml_decay_ratio(mesh, profile, result.density_upper)
    decay_lo = _pml_decay_ratio(mesh, profile, result.density_lower)
    result.diagnostics["pml_decay_upper"] = decay_up
    result.diagnostics["pml_decay_lower"] = decay_lo
    _log.info("absorbing-layer decay ratios: upper %.3e, lower %.3e",
              decay_up, decay_lo)
    return result


def solve_with_obstacle(mesh: GradedMesh, obstacle_mesh: GradedMesh,
                        medium: LayeredMedium, incidence,
                        profile: PmlProfile, *,
                        vertical: PmlProfile | None = None,
                        threads: int = 1) -> SolveResult:
    """Solve the transmission problem with a penetrable obstacle above.

    The upper subdomain's boundary gains the obstacle curve as a hole;
    a separate interior NtD represents the obstacle fill.  On the
    obstacle boundary the total field and the ``eta``-weighted flux are
    continuous (scattered field outside plus reference field equals the
    interior total field), which eliminates the interior density the
    same way the interface flux condition eliminates the lower one.

    Raises
    ------
    ConfigurationError
        If the medium lacks an obstacle index, the obstacle leaves the
        upper physical region, or (during assembly) the obstacle touches
        the interface.
    """
    if medium.n_obstacle is None:
        raise ConfigurationError(
            "medium has no obstacle refractive index; use solve_interface "
            "or supply n_obstacle"
        )
    if not obstacle_mesh.curve.closed:
        raise ConfigurationError("obstacle boundary must be a closed curve")
    _validate_incidence(mesh.curve, medium, incidence, profile, vertical,
                        obstacle_curve=obstacle_mesh.curve)
    _validate_obstacle_placement(mesh, obstacle_mesh, profile, vertical)

    eta1, eta2, eta_ob = medium.eta1, medium.eta2, medium.eta_obstacle
    upper = SubdomainBoundary.upper_half(
        mesh, k0=medium.k0, refractive_index=medium.n1, eta=eta1,
        profile=profile, vertical=vertical, obstacle_mesh=obstacle_mesh)
    lower = SubdomainBoundary.lower_half(
        mesh, k0=medium.k0, refractive_index=medium.n2, eta=eta2,
        profile=profile, vertical=vertical)
    interior = SubdomainBoundary.obstacle_interior(
        obstacle_mesh, k0=medium.k0, refractive_index=medium.n_obstacle,
        eta=eta_ob)

    ntd_upper = ntd_matrix(upper, threads=threads)
    _release_operators(upper)
    ntd_lower = ntd_matrix(lower, threads=threads)
    _release_operators(lower)
    ntd_interior = ntd_matrix(interior, threads=threads)
    _release_operators(interior)

    n = mesh.n
    n_ob = obstacle_mesh.n
    b1, b2 = jump_data(mesh, medium, incidence, profile, vertical=vertical)
    vals_ob, grads_ob = _reference_values(
        obstacle_mesh.points.astype(complex), medium, incidence, side=1)
    d_ob = _scaled_conormal(obstacle_mesh.w_prime, obstacle_mesh.tangents,
                            grads_ob)
    b_ob1 = -vals_ob
    b_ob2 = eta1 * d_ob

    m_upper = ntd_upper.matrix
    m_lower = ntd_lower.matrix
    m_inner = ntd_interior.matrix
    coupled = m_upper.copy()
    coupled[:n, :n] += (eta1 / eta2) * m_lower
    coupled[n:, n:] += (eta1 / eta_ob) * m_inner
    rhs = np.concatenate([
        b1 + m_lower @ (b2 / eta2),
        b_ob1 + m_inner @ (b_ob2 / eta_ob),
    ])
    lu, piv, cond = _factor_coupled(coupled, "coupled obstacle system")
    del coupled
    sol = lu_solve((lu, piv), rhs, check_finite=False)
    phi1 = sol[:n]
    psi = sol[n:]
    phi2 = (b2 - eta1 * phi1) / eta2
    chi = (b_ob2 - eta1 * psi) / eta_ob

    full_trace = m_upper @ sol
    trace1 = full_trace[:n]
    trace1_ob = full_trace[n:]
    trace2 = m_lower @ phi2
    trace_ob = m_inner @ chi

    scale = max(_inf_norm(b1), _inf_norm(b2), _inf_norm(b_ob1),
                _inf_norm(b_ob2), 1e-300)
    residual_trace = _inf_norm(trace1 - trace2 - b1) / scale
    residual_obstacle = _inf_norm(trace1_ob - trace_ob - b_ob1) / scale
    residual_flux = max(
        _inf_norm(eta1 * phi1 + eta2 * phi2 - b2),
        _inf_norm(eta1 * psi + eta_ob * chi - b_ob2),
    ) / scale
    diagnostics = {
        "coupled_condition": cond,
        "upper_condition": ntd_upper.condition_estimate,
        "lower_condition": ntd_lower.condition_estimate,
        "obstacle_condition": ntd_interior.condition_estimate,
        "trace_residual": residual_trace,
        "obstacle_residual": residual_obstacle,
        "flux_residual": residual_flux,
        "pml_decay_upper": _pml_decay_ratio(mesh, profile, phi1),
        "pml_decay_lower": _pml_decay_ratio(mesh, profile, phi2),
    }
    _log.info(
        "obstacle solve: %d + %d nodes, coupled condition %.3e, residuals "
        "(trace %.3e, obstacle %.3e, flux %.3e)",
        n, n_ob, cond, residual_trace, residual_obstacle, residual_flux,
    )
    return SolveResult(
        density_upper=phi1,
        density_lower=phi2,
        trace_upper=trace1,
        trace_lower=trace2,
        diagnostics=diagnostics,
        density_upper_obstacle=psi,
        trace_upper_obstacle=trace1_ob,
        density_obstacle=chi,
        trace_obstacle=trace_ob,
        context=SolveContext(upper=upper, lower=lower, obstacle=interior,
                             medium=medium, incidence=incidence),
    )


# -- field evaluation -------------------------------------------------------


def _near_boundary_guard(mesh: GradedMesh, x: np.ndarray) -> None:
    """Reject evaluation points within three local node spacings of a mesh."""
    pts = mesh.points
    dists = np.hypot(pts[:, 0] - x[0], pts[:, 1] - x[1])
    i0 = int(np.argmin(dists))
    n = mesh.n
    gaps = []
    if mesh.curve.closed:
        gaps.append(np.linalg.norm(pts[i0] - pts[i0 - 1]))
        gaps.append(np.linalg.norm(pts[(i0 + 1) % n] - pts[i0]))
    else:
        if i0 > 0:
            gaps.append(np.linalg.norm(pts[i0] - pts[i0 - 1]))
        if i0 + 1 < n:
            gaps.append(np.linalg.norm(pts[i0 + 1] - pts[i0]))
    limit = 3.0 * max(gaps)
    if dists[i0] < limit:
        raise NearBoundaryError(
            f"evaluation point {tuple(x)} is {dists[i0]:.3e} from a boundary "
            f"node; the quadrature needs at least {limit:.3e} (three local "
            "node spacings)"
        )


def _representation_sum(boundary: SubdomainBoundary, datasets, k: float,
                        x: np.ndarray) -> complex:
    """Trapezoid sum of the representation integral at an off-boundary
    physical point, over all pieces of one subdomain boundary."""
    total = 0.0 + 0.0j
    for index, (piece, (density, trace)) in enumerate(
            zip(boundary.pieces, datasets)):
        ctx, _ = _piece_machinery(boundary, index, False)
        d1 = ctx.xt[:, 0] - x[0]
        d2 = ctx.xt[:, 1] - x[1]
        dist = sqrt_nonneg_re(d1 * d1 + d2 * d2)
        single = single_layer_value(k, dist)
        kb = ctx.dxt[:, 1] * d1 - ctx.dxt[:, 0] * d2
        double = double_layer_value(k, dist, ctx.w_prime * kb)
        contrib = 0.5 * (single * density - piece.orientation * double * trace)
        total += piece.mesh.h * np.sum(contrib)
    return total


def evaluate_field(result: SolveResult, x) -> complex:
    """Total field at a point strictly inside one subdomain's physical part.

    The scattered field is recovered from the boundary traces and
    densities by trapezoid quadrature of the representation integral,
    then the reference field of the point's subdomain is added (the
    obstacle interior solves for the total field directly).

    Parameters
    ----------
    result : SolveResult
        Must come from :func:`solve_interface` or
        :func:`solve_with_obstacle` (it carries the geometry).
    x : array_like, shape (2,)
        Physical evaluation point.

    Raises
    ------
    UnsupportedRegionError
        If ``x`` lies in or beyond an absorbing layer, where the
        representation reconstructs the stretched field, not the
        physical one.
    NearBoundaryError
        If ``x`` is within three local node spacings of a boundary,
        where the plain trapezoid rule degrades.
    ConfigurationError
        If the result carries no geometry context.
    """
    if result.context is None:
        raise ConfigurationError(
            "field evaluation needs a result produced by solve_interface or "
            "solve_with_obstacle"
        )
    ctx = result.context
    point = np.asarray(x, dtype=float)
    if point.shape != (2,) or not np.all(np.isfinite(point)):
        raise ParameterError(f"evaluation point must be a finite 2-vector, got {x!r}")

    profile = ctx.upper.profile
    if abs(point[0]) >= profile.a1:
        raise UnsupportedRegionError(
            f"evaluation point {tuple(point)} lies in or beyond the absorbing "
            f"layer (|x1| >= {profile.a1:g}); the physical field is only "
            "represented inside the physical region"
        )
    if ctx.upper.vertical is not None and abs(point[1]) >= ctx.upper.vertical.a1:
        raise UnsupportedRegionError(
            f"evaluation point {tuple(point)} lies in or beyond the vertical "
            f"absorbing layer (|x2| >= {ctx.upper.vertical.a1:g})"
        )

    interface_mesh = ctx.upper.pieces[0].mesh
    _near_boundary_guard(interface_mesh, point)
    if ctx.obstacle is not None:
        _near_boundary_guard(ctx.obstacle.pieces[0].mesh, point)

    medium = ctx.medium
    if ctx.obstacle is not None and curve_contains(
            ctx.obstacle.pieces[0].mesh.curve, point):
        return complex(_representation_sum(
            ctx.obstacle,
            [(result.density_obstacle, result.trace_obstacle)],
            medium.k_obstacle, point))

    side = classify_side(interface_mesh.curve, point)
    if side == 1:
        datasets = [(result.density_upper, result.trace_upper)]
        if ctx.obstacle is not None:
            datasets.append(
                (result.density_upper_obstacle, result.trace_upper_obstacle))
        scattered = _representation_sum(ctx.upper, datasets, medium.k1, point)
    else:
        scattered = _representation_sum(
            ctx.lower, [(result.density_lower, result.trace_lower)],
            medium.k2, point)
    reference, _ = _reference_values(point[None, :].astype(complex),
                                     medium, ctx.incidence, side)
    return complex(scattered + reference[0])
