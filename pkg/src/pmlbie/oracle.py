"""Independent reference solutions.

Two families live here:

* ``layered_green`` — the flat-interface two-half-space Green's function
  evaluated as a spectral (plane-wave superposition) integral with
  smooth substitutions and adaptive panel refinement.  It references
  nothing from the boundary-integral pipeline, so it is a genuinely
  independent check of full solves on flat-interface problems.
* ``highprec_hankel`` / ``highprec_mesh_pair`` — extended-precision
  re-evaluations (mpmath arithmetic) used as test oracles for the
  double-precision production code.  ``highprec_hankel`` is a
  hand-written ascending-series Bessel evaluator; ``highprec_mesh_pair``
  recomputes mesh pair geometry (complexified distance and the
  double-layer numerator) by direct subtraction at 50 significant
  digits, where cancellation is harmless.

Everything here is pure; concurrent evaluation over many field points is
safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath as mp
import numpy as np

from .errors import OracleError
from .special_fn import hankel1

__all__ = [
    "SommerfeldConfig",
    "layered_green",
    "highprec_hankel",
    "highprec_mesh_pair",
]


# ---------------------------------------------------------------------------
# Extended-precision Bessel/Hankel series oracle
# ---------------------------------------------------------------------------

_SERIES_DPS = 55  # enough for >= 20 significant digits up to |z| = 50


def _bessel_series(z: mp.mpc):
    """Ascending power series for J0, Y0, J1, Y1 at ``z`` (mpmath scalar).

    Classical series: with q = z^2/4 and H_m the m-th harmonic number,

        J0 = sum_m (-q)^m / (m!)^2
        Y0 = (2/pi) [(log(z/2) + gamma) J0 + sum_{m>=1} (-1)^{m+1} H_m q^m / (m!)^2]
        J1 = (z/2) sum_m (-q)^m / (m! (m+1)!)
        Y1 = (2/pi) [(log(z/2) + gamma) J1 - 1/z
             - (z/4) sum_{m>=0} (-q)^m (H_m + H_{m+1}) / (m! (m+1)!)]
    """
    q = z * z / 4
    tiny = mp.mpf(10) ** (-(mp.mp.dps + 5))

    # J0 and the harmonic-weighted companion sum for Y0.
    term = mp.mpc(1)
    j0 = mp.mpc(1)
    y0_sum = mp.mpc(0)
    harmonic = mp.mpf(0)
    m = 0
    while True:
        m += 1
        term = term * (-q) / (m * m)
        harmonic += mp.mpf(1) / m
        j0 += term
        y0_sum += -term * harmonic  # (-1)^{m+1} H_m q^m/(m!)^2 == -(term)*H_m
        if abs(term) < tiny * (1 + abs(j0)):
            break

    # J1 and the companion sum for Y1.
    term = mp.mpc(1)  # q^m / (m! (m+1)!) * (-1)^m, starting at m = 0
    j1_sum = mp.mpc(1)
    y1_sum = mp.mpc(1)  # (H_0 + H_1) = 1 at m = 0
    harmonic = mp.mpf(0)
    m = 0
    while True:
        m += 1
        term = term * (-q) / (m * (m + 1))
        harmonic += mp.mpf(1) / m
        j1_sum += term
        y1_sum += term * (harmonic + harmonic + mp.mpf(1) / (m + 1))
        if abs(term) < tiny * (1 + abs(j1_sum)):
            break
    j1 = (z / 2) * j1_sum

    log_part = mp.log(z / 2) + mp.euler
    y0 = (2 / mp.pi) * (log_part * j0 + y0_sum)
    y1 = (2 / mp.pi) * (log_part * j1 - 1 / z - (z / 4) * y1_sum)
    return j0, y0, j1, y1


def highprec_hankel(order: int, z, dps: int = 25):
    """Hankel function of the first kind by extended-precision power series.

    Parameters
    ----------
    order : int
        0 or 1.
    z : complex
        Argument with ``|z| <= 50`` (series radius where the working
        precision still guarantees >= 20 significant digits).
    dps : int
        Decimal digits carried by the *returned* mpmath value.

    Returns
    -------
    mpmath.mpc
        ``H_order(z)`` to at least ``min(dps, 20)`` significant digits.

    Raises
    ------
    OracleError
        For unsupported order or out-of-range argument.
    """
    if order not in (0, 1):
        raise OracleError(f"highprec_hankel supports orders 0 and 1, got {order!r}")
    if abs(complex(z)) > 50 or complex(z) == 0:
        raise OracleError("highprec_hankel requires 0 < |z| <= 50")
    # The alternating series suffers cancellation that grows with |z|
    # (about 0.87 digits per unit of |z| in the worst case, when the sum
    # J + iY is exponentially smaller than its terms); carry enough
    # guard digits that the requested precision survives.
    guard = int(0.9 * abs(complex(z))) + 10
    with mp.workdps(max(_SERIES_DPS, dps + 30) + guard):
        zz = mp.mpc(z)
        j0, y0, j1, y1 = _bessel_series(zz)
        h = (j0 + 1j * y0) if order == 0 else (j1 + 1j * y1)
        result = +h  # round to working precision
    with mp.workdps(dps):
        return +result


def highprec_bessel_j(order: int, z, dps: int = 25):
    """Bessel J of order 0 or 1 via the same independent series machinery."""
    if order not in (0, 1):
        raise OracleError(f"highprec_bessel_j supports orders 0 and 1, got {order!r}")
    with mp.workdps(max(_SERIES_DPS, dps + 30)):
        j0, _, j1, _ = _bessel_series(mp.mpc(z))
        result = +(j0 if order == 0 else j1)
    with mp.workdps(dps):
        return +result


# ---------------------------------------------------------------------------
# Extended-precision mesh pair geometry oracle
# ---------------------------------------------------------------------------


def _mp_grading(t, t0, t1, s0, s1, p):
    """Grading map value at ``t`` in mpmath arithmetic (mirror of geometry)."""
    t, t0, t1, s0, s1 = (mp.mpf(v) for v in (t, t0, t1, s0, s1))
    xi = (2 * t - (t0 + t1)) / (t1 - t0)

    def cubic(x):
        return (mp.mpf(1) / 2 - mp.mpf(1) / p) * x**3 + x / p + mp.mpf(1) / 2

    w1 = cubic(-xi) ** p
    w2 = cubic(xi) ** p
    return s0 + (s1 - s0) * w2 / (w1 + w2)


def _mp_segment_eval(segment, s_local):
    """Physical point and unit tangent of a segment at local arclength."""
    from . import geometry  # local import to avoid a cycle at module load

    if isinstance(segment, geometry.LineSegment):
        sx, sy = (mp.mpf(float(v)) for v in segment.start)
        ex, ey = (mp.mpf(float(v)) for v in segment.end)
        length = mp.mpf(float(segment.length))
        dx, dy = (ex - sx) / length, (ey - sy) / length
        return (sx + s_local * dx, sy + s_local * dy), (dx, dy)
    if isinstance(segment, geometry.ArcSegment):
        cx, cy = (mp.mpf(float(v)) for v in segment.center)
        radius = mp.mpf(float(segment.radius))
        ang0 = mp.mpf(float(segment.angle_start))
        sweep_sign = mp.mpf(1 if segment.angle_end >= segment.angle_start else -1)
        phi = ang0 + sweep_sign * s_local / radius
        point = (cx + radius * mp.cos(phi), cy + radius * mp.sin(phi))
        tangent = (-sweep_sign * mp.sin(phi), sweep_sign * mp.cos(phi))
        return point, tangent
    raise OracleError(f"unsupported segment type {type(segment).__name__}")


def _mp_sigma(x1_abs, profile):
    """Absorption profile value at |x1| in mpmath arithmetic."""
    a1 = mp.mpf(float(profile.a1))
    thickness = mp.mpf(float(profile.thickness))
    strength = mp.mpf(float(profile.strength))
    order = profile.order
    if x1_abs <= a1:
        return mp.mpf(0)
    if x1_abs >= a1 + thickness:
        return 2 * strength * thickness
    xi = (2 * x1_abs - (2 * a1 + thickness)) / thickness

    def cubic(x):
        return (mp.mpf(1) / 2 - mp.mpf(1) / order) * x**3 + x / order + mp.mpf(1) / 2

    w1 = cubic(-xi) ** order
    w2 = cubic(xi) ** order
    return 2 * strength * thickness * w2 / (w1 + w2)


def _mp_stretch1(x1, profile):
    """Complexified first coordinate at 50 digits (direct integral of sigma)."""
    a1 = mp.mpf(float(profile.a1))
    mag = abs(x1)
    if mag <= a1:
        return mp.mpc(x1)
    integral = mp.quad(lambda u: _mp_sigma(u, profile), [a1, mag])
    return x1 + 1j * mp.sign(x1) * integral


def _mp_segment_index(mesh, t, side="left"):
    """Segment index containing ``t``; exact breaks resolve to ``side``."""
    t_breaks = [float(tb) for tb in mesh.t_breaks]
    t = float(t)
    for i in range(len(t_breaks) - 1):
        if side == "left":
            if t_breaks[i] < t <= t_breaks[i + 1]:
                return i
        else:
            if t_breaks[i] <= t < t_breaks[i + 1]:
                return i
    return 0 if t <= t_breaks[0] else len(t_breaks) - 2


def _mp_mesh_point(mesh, t, profile, side="left"):
    """Stretched point and stretched tangent at parameter ``t`` (mpmath)."""
    t_breaks = [float(tb) for tb in mesh.t_breaks]
    s_breaks = [float(sb) for sb in mesh.curve.s_breaks]
    idx = _mp_segment_index(mesh, t, side)
    seg = mesh.curve.segments[idx]
    s_global = _mp_grading(
        t, t_breaks[idx], t_breaks[idx + 1], s_breaks[idx], s_breaks[idx + 1],
        mesh.grading_order,
    )
    (px, py), (tx, ty) = _mp_segment_eval(seg, s_global - mp.mpf(s_breaks[idx]))
    x1t = _mp_stretch1(px, profile)
    alpha1 = 1 + 1j * _mp_sigma(abs(px), profile)
    return (x1t, mp.mpc(py)), (alpha1 * tx, mp.mpc(ty))


def _mp_stretched_point(mesh, t, profile, side="left"):
    (pt, _tan) = _mp_mesh_point(mesh, t, profile, side)
    return pt


def _mp_pair_delta(mesh, profile, a, b):
    """Stretched displacement from ``a`` to ``b`` (``a <= b``), telescoped
    segment by segment.

    Each partial difference is evaluated with both endpoints on the same
    segment, so the sub-1e-12 joint mismatches left by double-rounded
    segment data (for example an arc endpoint computed as sin(pi))
    never contaminate microscopic separations.
    """
    t_breaks = [float(tb) for tb in mesh.t_breaks]
    cuts = [float(a)] + [tb for tb in t_breaks if float(a) < tb < float(b)] + [float(b)]
    d1 = mp.mpc(0)
    d2 = mp.mpc(0)
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        (lx, ly) = _mp_stretched_point(mesh, lo, profile, side="right")
        (hx, hy) = _mp_stretched_point(mesh, hi, profile, side="left")
        d1 += hx - lx
        d2 += hy - ly
    return d1, d2


def highprec_mesh_pair(mesh, profile, t_from, t_to):
    """Complexified distance and double-layer numerator at 120 digits.

    Evaluates ``dist(t_from, t_to)`` and the tangent-cross-difference
    numerator (derivative taken at ``t_to``, on the side facing
    ``t_from``) by subtraction in 120-digit arithmetic, which sidesteps
    the double-precision cancellation the production code works around
    with integral forms.  Differences are telescoped segment by segment
    so joint mismatches at the double-rounding level cannot contaminate
    microscopic separations.

    Returns
    -------
    (mpmath.mpc, mpmath.mpc)
        ``(dist, cross_moment)`` where ``cross_moment`` is the
        orientation-free numerator (no parameter-speed factor applied).
    """
    with mp.workdps(120):
        src_side = "left" if float(t_to) >= float(t_from) else "right"
        _pt, (tbx, tby) = _mp_mesh_point(mesh, t_to, profile, side=src_side)
        if float(t_to) >= float(t_from):
            d1, d2 = _mp_pair_delta(mesh, profile, t_from, t_to)
        else:
            d1, d2 = _mp_pair_delta(mesh, profile, t_to, t_from)
            d1, d2 = -d1, -d2
        rho2 = d1 * d1 + d2 * d2
        dist = mp.sqrt(rho2)
        if mp.re(dist) < 0 or (mp.re(dist) == 0 and mp.im(dist) < 0):
            dist = -dist
        cross = tby * d1 - tbx * d2
        return +dist, +cross


# ---------------------------------------------------------------------------
# Layered-medium (flat interface) Green's function oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SommerfeldConfig:
    """Tuning knobs for the spectral-integral reference solution.

    Parameters
    ----------
    truncation_factor : float
        Spectral truncation in multiples of ``k0 * max(n1, n2)``; the
        actual truncation also grows automatically until the evanescent
        tail is below roundoff for the requested point.  Must be >= 10.
    panels : int
        Initial Gauss panel count per smooth zone; refinement doubles it.
    max_refinements : int
        Number of doublings attempted before giving up.
    rtol : float
        Relative agreement required between successive refinements.
    """

    truncation_factor: float = 10.0
    panels: int = 8
    max_refinements: int = 10
    rtol: float = 1e-9

    def __post_init__(self):
        if self.truncation_factor < 10.0:
            raise OracleError("truncation_factor must be at least 10")
        if self.panels < 1 or self.max_refinements < 1:
            raise OracleError("panels and max_refinements must be positive")


_GAUSS16 = np.polynomial.legendre.leggauss(16)


def _panel_quad(f, a: float, b: float, n_panels: int) -> complex:
    """Composite 16-point Gauss quadrature of ``f`` over ``[a, b]``."""
    base_x, base_w = _GAUSS16
    edges = np.linspace(a, b, n_panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    pts = (mid[:, None] + half[:, None] * base_x[None, :]).ravel()
    wts = (half[:, None] * base_w[None, :]).ravel()
    return complex(np.sum(f(pts) * wts))


def _layered_value(x, source, k1, k2, eta1, eta2, lam_max, panels, derivative):
    """One evaluation of the spectral representation at fixed resolution."""
    x1, x2 = float(x[0]), float(x[1])
    s1_, s2_ = float(source[0]), float(source[1])
    big_x = x1 - s1_
    upper = x2 >= 0.0

    def beta(k, xi):
        val = np.asarray(k * k - xi * xi, dtype=complex)
        w = np.sqrt(val)
        w = np.where((w.real == 0.0) & (w.imag < 0.0), -w, w)
        return w

    def refl_trans(b1, b2):
        denom = eta1 * b1 + eta2 * b2
        refl = (eta1 * b1 - eta2 * b2) / denom
        trans = 2.0 * eta1 * b1 / denom
        return refl, trans

    def body(xi, dxi_over_beta1):
        b1 = beta(k1, xi)
        b2 = beta(k2, xi)
        if upper:
            refl, _ = refl_trans(b1, b2)
            amp = refl * np.exp(1j * b1 * (x2 + s2_))
            if derivative == "x2":
                amp = amp * (1j * b1)
        else:
            _, trans = refl_trans(b1, b2)
            amp = trans * np.exp(1j * b1 * s2_) * np.exp(-1j * b2 * x2)
            if derivative == "x2":
                amp = amp * (-1j * b2)
        return amp * np.cos(xi * big_x) * dxi_over_beta1

    total = 0.0 + 0.0j

    # Zone A: xi = k1 sin(theta) on [0, k1]; d(xi)/beta1 = d(theta).
    def zone_a(theta):
        xi = k1 * np.sin(theta)
        return body(xi, 1.0)

    total += _panel_quad(zone_a, 0.0, 0.5 * math.pi, panels)

    u_max = math.sqrt(max(k2 * k2 - k1 * k1, 0.0))
    if u_max > 0.0:
        # Zone B: xi = sqrt(k1^2 + u^2), u = u_max sin(chi);
        # beta1 = i u, beta2 = u_max cos(chi); d(xi)/beta1 = -i u_max cos(chi)/xi d(chi).
        def zone_b(chi):
            u = u_max * np.sin(chi)
            xi = np.sqrt(k1 * k1 + u * u)
            return body(xi, -1j * u_max * np.cos(chi) / xi)

        total += _panel_quad(zone_b, 0.0, 0.5 * math.pi, panels)

    # Zone C: xi = sqrt(k2^2 + v^2), v in [0, V]; beta2 = i v,
    # beta1 = i sqrt(u_max^2 + v^2); d(xi)/beta1 = -i v/(xi sqrt(u_max^2+v^2)) dv.
    v_max = math.sqrt(max(lam_max * lam_max - k2 * k2, 1e-12))

    def zone_c(v):
        xi = np.sqrt(k2 * k2 + v * v)
        s1v = np.sqrt(u_max * u_max + v * v)
        return body(xi, -1j * v / (xi * s1v))

    decay = abs(x2) + s2_
    osc = max(abs(big_x), decay, 1.0)
    n_panels_c = max(panels, int(math.ceil(v_max * osc / (2.0 * math.pi))) *
                     max(1, panels // 8))
    total += _panel_quad(zone_c, 0.0, v_max, n_panels_c)

    value = (1j / (2.0 * math.pi)) * total
    if upper:
        r = math.hypot(x1 - s1_, x2 - s2_)
        if derivative is None:
            value += 0.25j * hankel1(0, k1 * r)
        elif derivative == "x2":
            value += -0.25j * k1 * hankel1(1, k1 * r) * (x2 - s2_) / r
    return value


def layered_green(x, source, medium, config: SommerfeldConfig | None = None,
                  derivative: str | None = None):
    """Total field of a point source over a flat interface at elevation 0.

    Parameters
    ----------
    x : pair of floats
        Evaluation point (either side of the interface, but not the source).
    source : pair of floats
        Source location, strictly in the upper half space.
    medium : LayeredMedium
        Provides ``k0``, ``n1``, ``n2`` and the polarization weights
        ``eta1``, ``eta2``.
    config : SommerfeldConfig, optional
    derivative : {None, "x2"}
        ``"x2"`` returns the partial derivative with respect to the
        second coordinate instead of the value.

    Returns
    -------
    complex

    Raises
    ------
    OracleError
        If the source is not in the upper half space, ``n2 < n1`` (regime
        not exercised by the shipped experiments), coincident points, or
        non-convergence of the panel refinement.
    """
    if config is None:
        config = SommerfeldConfig()
    if derivative not in (None, "x2"):
        raise OracleError(f"unsupported derivative request {derivative!r}")
    s1_, s2_ = float(source[0]), float(source[1])
    if s2_ <= 0.0:
        raise OracleError("layered_green requires the source strictly above the interface")
    if float(x[0]) == s1_ and float(x[1]) == s2_:
        raise OracleError("layered_green is singular at the source point")
    k1 = medium.k0 * medium.n1
    k2 = medium.k0 * medium.n2
    if k2 < k1:
        raise OracleError("layered_green supports n2 >= n1 only")
    eta1, eta2 = medium.eta1, medium.eta2

    # Truncation: spec floor plus whatever the evanescent decay needs.
    decay = abs(float(x[1])) + s2_
    lam_floor = config.truncation_factor * medium.k0 * max(medium.n1, medium.n2)
    lam_decay = math.sqrt((34.0 / decay) ** 2 + k2 * k2)
    lam_max = max(lam_floor, lam_decay)

    panels = config.panels
    prev = _layered_value(x, source, k1, k2, eta1, eta2, lam_max, panels, derivative)
    for _ in range(config.max_refinements):
        panels *= 2
        cur = _layered_value(x, source, k1, k2, eta1, eta2, lam_max, panels, derivative)
        if abs(cur - prev) <= config.rtol * max(abs(cur), 1e-12):
            return cur
        prev = cur
    raise OracleError(
        "layered_green did not converge to rtol="
        f"{config.rtol} after {config.max_refinements} refinements"
    )
