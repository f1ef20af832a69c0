"""Interface geometry: parametrized curves and graded meshes.

A scattering interface (or obstacle boundary) is a piecewise-smooth
curve assembled from straight segments and circular arcs, parametrized
by arclength.  Discretization maps a uniform parameter grid on (0, 1]
through a polynomial grading that clusters nodes at segment junctions,
so densities multiplied by the grading derivative vanish to high order
at corners and endpoints.

Conventions
-----------
* Curve parameter ``s`` is arclength, increasing along the traversal
  direction.  The unit normal used elsewhere is the tangent rotated to
  the right of travel, ``nu = (tau_2, -tau_1)``.
* Mesh parameter ``t`` runs over (0, 1] with nodes ``t_j = j/n``; a node
  falling exactly on a junction belongs to the segment on its left.
* All junction nodes (true corners and smooth-but-curvature-jump
  joints) are treated identically: the grading derivative vanishes
  there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigurationError, MeshTooCoarseError, ParameterError

__all__ = [
    "LineSegment",
    "ArcSegment",
    "PiecewiseCurve",
    "GradedMesh",
    "GeometrySample",
    "grading_map",
    "grading_wprime_offset",
    "build_mesh",
    "classify_side",
    "curve_contains",
    "flat_interface",
    "two_piece_flat_interface",
    "bump_dip_interface",
    "notched_interface",
    "step_interface",
    "teardrop_obstacle",
]

_CONT_TOL = 1e-12


def _as_point(p) -> np.ndarray:
    a = np.asarray(p, dtype=float)
    if a.shape != (2,):
        raise ParameterError(f"expected a 2D point, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class LineSegment:
    """Straight segment from ``start`` to ``end``, arclength-parametrized."""

    start: np.ndarray
    end: np.ndarray
    length: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "start", _as_point(self.start))
        object.__setattr__(self, "end", _as_point(self.end))
        ln = float(np.hypot(*(self.end - self.start)))
        if ln <= 0:
            raise ParameterError("degenerate segment of zero length")
        object.__setattr__(self, "length", ln)

    def point(self, s):
        frac = np.asarray(s, dtype=float) / self.length
        return self.start + np.multiply.outer(frac, self.end - self.start)

    def tangent(self, s):
        tau = (self.end - self.start) / self.length
        return np.broadcast_to(tau, np.shape(s) + (2,)).copy() if np.ndim(s) else tau.copy()

    def second_derivative(self, s):
        return np.zeros(np.shape(s) + (2,)) if np.ndim(s) else np.zeros(2)


@dataclass(frozen=True)
class ArcSegment:
    """Circular arc, arclength-parametrized.

    The arc sweeps the polar angle (about ``center``) linearly from
    ``angle_start`` to ``angle_end``; a decreasing sweep is a clockwise
    arc.
    """

    center: np.ndarray
    radius: float
    angle_start: float
    angle_end: float
    length: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "center", _as_point(self.center))
        if self.radius <= 0:
            raise ParameterError("arc radius must be positive")
        sweep = self.angle_end - self.angle_start
        if sweep == 0:
            raise ParameterError("degenerate arc of zero sweep")
        object.__setattr__(self, "length", self.radius * abs(sweep))

    @property
    def _sign(self) -> float:
        return 1.0 if self.angle_end >= self.angle_start else -1.0

    def _theta(self, s):
        return self.angle_start + self._sign * np.asarray(s, dtype=float) / self.radius

    @property
    def start(self) -> np.ndarray:
        return self.point(0.0)

    @property
    def end(self) -> np.ndarray:
        return self.point(self.length)

    def point(self, s):
        th = self._theta(s)
        return self.center + self.radius * np.stack(
            [np.cos(th), np.sin(th)], axis=-1
        ).reshape(np.shape(s) + (2,) if np.ndim(s) else (2,))

    def tangent(self, s):
        th = self._theta(s)
        out = self._sign * np.stack([-np.sin(th), np.cos(th)], axis=-1)
        return out.reshape(np.shape(s) + (2,) if np.ndim(s) else (2,))

    def second_derivative(self, s):
        th = self._theta(s)
        out = -np.stack([np.cos(th), np.sin(th)], axis=-1) / self.radius
        return out.reshape(np.shape(s) + (2,) if np.ndim(s) else (2,))


class PiecewiseCurve:
    """Continuous chain of segments, parametrized by global arclength.

    Parameters
    ----------
    segments : sequence of LineSegment | ArcSegment
        Consecutive segments; each must start where the previous ends.
    closed : bool
        If True the last segment must end at the first segment's start
        and the curve bounds a region (e.g. an obstacle boundary).
    """

    def __init__(self, segments, closed: bool = False):
        segments = tuple(segments)
        if not segments:
            raise ParameterError("curve needs at least one segment")
        for a, b in zip(segments, segments[1:]):
            if np.max(np.abs(_seg_end(a) - _seg_start(b))) > _CONT_TOL:
                raise ParameterError(
                    f"segments are not contiguous: {_seg_end(a)} != {_seg_start(b)}"
                )
        if closed and np.max(np.abs(_seg_end(segments[-1]) - _seg_start(segments[0]))) > _CONT_TOL:
            raise ParameterError("closed curve must end at its starting point")
        self.segments = segments
        self.closed = closed
        lengths = np.array([s.length for s in segments])
        self.s_breaks = np.concatenate([[0.0], np.cumsum(lengths)])
        self.total_length = float(self.s_breaks[-1])

    @property
    def start(self) -> np.ndarray:
        return _seg_start(self.segments[0])

    @property
    def end(self) -> np.ndarray:
        return _seg_end(self.segments[-1])

    def segment_index(self, s: float, side: str = "left") -> int:
        """Index of the segment containing arclength ``s``.

        At an interior junction, ``side`` picks the left (preceding) or
        right (following) segment.
        """
        if not (-_CONT_TOL <= s <= self.total_length + _CONT_TOL):
            raise ParameterError(f"arclength {s} outside [0, {self.total_length}]")
        s = min(max(s, 0.0), self.total_length)
        k = int(np.searchsorted(self.s_breaks, s, side="left" if side == "left" else "right"))
        if side == "left":
            k -= 1 if s > 0 else 0
            k = max(k, 0)
        else:
            k -= 1
            k = min(k, len(self.segments) - 1)
        return int(np.clip(k, 0, len(self.segments) - 1))

    def point(self, s: float) -> np.ndarray:
        k = self.segment_index(s)
        return self.segments[k].point(s - self.s_breaks[k])

    def tangent(self, s: float, side: str = "left") -> np.ndarray:
        k = self.segment_index(s, side)
        return self.segments[k].tangent(s - self.s_breaks[k])

    def second_derivative(self, s: float, side: str = "left") -> np.ndarray:
        k = self.segment_index(s, side)
        return self.segments[k].second_derivative(s - self.s_breaks[k])

    def has_corner_at(self, k: int) -> bool:
        """Whether the junction between segments ``k-1`` and ``k`` has a
        tangent discontinuity (``k=0`` refers to the closed-curve wrap)."""
        prev = self.segments[(k - 1) % len(self.segments)]
        here = self.segments[k % len(self.segments)]
        t_in = prev.tangent(prev.length)
        t_out = here.tangent(0.0)
        return bool(abs(1.0 - float(t_in @ t_out)) > 1e-9)


def _seg_start(seg) -> np.ndarray:
    return seg.start if isinstance(seg, LineSegment) else seg.point(0.0)


def _seg_end(seg) -> np.ndarray:
    return seg.end if isinstance(seg, LineSegment) else seg.point(seg.length)


def _v_shift(u, p):
    """Exact rewrite of the grading cubic at ``-1 + u``.

    Evaluating this way keeps the tiny end values relative-accurate
    instead of losing eps/u digits to cancellation of the O(1) terms.
    """
    a = 0.5 - 1.0 / p
    return u * ((3.0 * a + 1.0 / p) - 3.0 * a * u + a * u * u)


def grading_wprime_offset(off_lo, off_hi, t0: float, t1: float,
                          s0: float, s1: float, p: int):
    """Grading derivative from exact end offsets.

    ``off_lo = t - t0`` and ``off_hi = t1 - t`` supplied directly, so a
    caller holding a tiny corner offset in full relative precision never
    squeezes it through an absolute parameter value (where ulp(t0)
    quantization would cost eps/offset digits in the vanishing-end
    power).  Vectorized over the offsets.
    """
    off_lo = np.asarray(off_lo, dtype=float)
    off_hi = np.asarray(off_hi, dtype=float)
    dt = t1 - t0
    a = 0.5 - 1.0 / p

    def v(x):
        return a * x**3 + x / p + 0.5

    def vp(x):
        return 3.0 * a * x**2 + 1.0 / p

    u_lo = np.clip(2.0 * off_lo / dt, 0.0, 2.0)
    u_hi = np.clip(2.0 * off_hi / dt, 0.0, 2.0)
    xi = np.where(u_lo <= u_hi, u_lo - 1.0, 1.0 - u_hi)
    w1 = np.where(u_hi < 0.5, _v_shift(u_hi, p), v(-xi))
    w2 = np.where(u_lo < 0.5, _v_shift(u_lo, p), v(xi))
    denom = w1**p + w2**p
    wp = (
        (s1 - s0)
        * (2.0 / dt)
        * p
        * (vp(xi) * w2 ** (p - 1) * w1**p + vp(-xi) * w1 ** (p - 1) * w2**p)
        / denom**2
    )
    return np.where((u_lo <= 1e-13) | (u_hi <= 1e-13), 0.0, wp)


def grading_map(t, t0: float, t1: float, s0: float, s1: float, p: int):
    """Graded parameter-to-arclength map on one segment.

    Maps ``t`` in ``[t0, t1]`` onto arclength ``[s0, s1]`` with
    derivative vanishing to order ``p - 1`` at both ends.  Returns
    ``(w, w_prime)``; both vectorized over ``t``.
    """
    t = np.asarray(t, dtype=float)
    if t1 <= t0:
        raise ParameterError("empty parameter interval")
    xi = np.clip((2.0 * t - (t0 + t1)) / (t1 - t0), -1.0, 1.0)
    a = 0.5 - 1.0 / p

    def v(x):
        return a * x**3 + x / p + 0.5

    def vp(x):
        return 3.0 * a * x**2 + 1.0 / p

    u_lo = np.clip(2.0 * (t - t0) / (t1 - t0), 0.0, 2.0)
    u_hi = np.clip(2.0 * (t1 - t) / (t1 - t0), 0.0, 2.0)
    w1 = np.where(u_hi < 0.5, _v_shift(u_hi, p), v(-xi))
    w2 = np.where(u_lo < 0.5, _v_shift(u_lo, p), v(xi))
    denom = w1**p + w2**p
    w = s0 + (s1 - s0) * w2**p / denom
    wp = (
        (s1 - s0)
        * (2.0 / (t1 - t0))
        * p
        * (vp(xi) * w2 ** (p - 1) * w1**p + vp(-xi) * w1 ** (p - 1) * w2**p)
        / denom**2
    )
    # Snap the interval ends: the derivative vanishes there identically
    # and densities scaled by it must be exactly zero at junction nodes.
    at_hi = xi >= 1.0 - 1e-13
    at_lo = xi <= -1.0 + 1e-13
    w = np.where(at_hi, s1, np.where(at_lo, s0, w))
    wp = np.where(at_hi | at_lo, 0.0, wp)
    if np.ndim(t) == 0:
        return float(w), float(wp)
    return w, wp


@dataclass(frozen=True)
class GeometrySample:
    """Real-geometry data at one curve parameter value."""

    point: np.ndarray        # position (2,)
    tangent: np.ndarray      # d(point)/ds, unit (2,)
    second: np.ndarray       # d2(point)/ds2 (2,)
    arclength: float         # w(t)
    w_prime: float           # dw/dt
    segment: int             # segment index used


class GradedMesh:
    """Uniform parameter grid pushed through per-segment grading.

    Nodes are ``t_j = j/n`` for ``j = 1..n``; junctions (segment
    breaks) land exactly on nodes, and the per-segment node counts are
    even so the grid midpoints of segments are nodes too.
    """

    def __init__(self, curve: PiecewiseCurve, per_segment, grading_order: int):
        counts = tuple(int(c) for c in per_segment)
        if len(counts) != len(curve.segments):
            raise ParameterError("need one node count per segment")
        if any(c < 4 for c in counts):
            raise MeshTooCoarseError(f"per-segment node counts too small: {counts}")
        if any(c % 2 for c in counts):
            raise ParameterError(f"per-segment node counts must be even: {counts}")
        if grading_order < 2:
            raise ParameterError("grading order must be at least 2")
        self.curve = curve
        self.grading_order = int(grading_order)
        self.per_segment = counts
        self.n = int(sum(counts))
        self.h = 1.0 / self.n
        self.t_breaks = np.concatenate([[0.0], np.cumsum(counts) / self.n])
        self.t_nodes = np.arange(1, self.n + 1) / self.n

        s_vals = np.empty(self.n)
        wp_vals = np.empty(self.n)
        seg_of_node = np.empty(self.n, dtype=int)
        for k in range(len(counts)):
            j0 = int(round(self.t_breaks[k] * self.n))      # nodes j0+1 .. j1
            j1 = int(round(self.t_breaks[k + 1] * self.n))
            idx = np.arange(j0, j1)
            tt = self.t_nodes[idx]
            w, wp = grading_map(
                tt,
                self.t_breaks[k],
                self.t_breaks[k + 1],
                curve.s_breaks[k],
                curve.s_breaks[k + 1],
                self.grading_order,
            )
            s_vals[idx] = w
            wp_vals[idx] = wp
            seg_of_node[idx] = k
        self.s_nodes = s_vals
        self.w_prime = wp_vals
        self.segment_of_node = seg_of_node

        pts = np.empty((self.n, 2))
        tans = np.empty((self.n, 2))
        secs = np.empty((self.n, 2))
        for k, seg in enumerate(curve.segments):
            m = seg_of_node == k
            sl = s_vals[m] - curve.s_breaks[k]
            pts[m] = seg.point(sl)
            tans[m] = seg.tangent(sl)
            secs[m] = seg.second_derivative(sl)
        self.points = pts
        self.tangents = tans
        self.seconds = secs

        # Node indices sitting exactly on junctions (t at an interior
        # t-break; for closed curves also the wrap node t = 1).
        junc = []
        for k in range(1, len(counts)):
            junc.append(int(round(self.t_breaks[k] * self.n)) - 1)
        if curve.closed:
            junc.append(self.n - 1)
        self.junction_indices = tuple(junc)

    # -- evaluation at arbitrary parameters ---------------------------------

    def segment_of_param(self, t: float, side: str = "left") -> int:
        if not (-1e-14 <= t <= 1.0 + 1e-14):
            raise ParameterError(f"mesh parameter {t} outside [0, 1]")
        t = min(max(t, 0.0), 1.0)
        k = int(np.searchsorted(self.t_breaks, t, side="left" if side == "left" else "right"))
        if side == "left":
            k -= 1 if t > 0 else 0
        else:
            k -= 1
        return int(np.clip(k, 0, len(self.per_segment) - 1))

    def geometry_at(self, t: float, side: str = "left") -> GeometrySample:
        """Real geometry at mesh parameter ``t`` (see class docstring for
        the junction-side convention)."""
        k = self.segment_of_param(t, side)
        w, wp = grading_map(
            t,
            self.t_breaks[k],
            self.t_breaks[k + 1],
            self.curve.s_breaks[k],
            self.curve.s_breaks[k + 1],
            self.grading_order,
        )
        seg = self.curve.segments[k]
        sl = float(w) - self.curve.s_breaks[k]
        return GeometrySample(
            point=seg.point(sl),
            tangent=seg.tangent(sl),
            second=seg.second_derivative(sl),
            arclength=float(w),
            w_prime=float(wp),
            segment=k,
        )

    def arclength_of_param(self, t: float, side: str = "left") -> float:
        k = self.segment_of_param(t, side)
        w, _ = grading_map(
            t,
            self.t_breaks[k],
            self.t_breaks[k + 1],
            self.curve.s_breaks[k],
            self.curve.s_breaks[k + 1],
            self.grading_order,
        )
        return float(w)

    def param_of_arclength(self, s: float) -> float:
        """Invert the graded map: the ``t`` with arclength ``w(t) = s``."""
        if not (-1e-12 <= s <= self.curve.total_length + 1e-12):
            raise ParameterError(f"arclength {s} outside curve range")
        s = min(max(s, 0.0), self.curve.total_length)
        k = self.curve.segment_index(s)
        s0, s1 = self.curve.s_breaks[k], self.curve.s_breaks[k + 1]
        t0, t1 = self.t_breaks[k], self.t_breaks[k + 1]
        if s <= s0:
            return float(t0)
        if s >= s1:
            return float(t1)

        def f(t):
            w, _ = grading_map(t, t0, t1, s0, s1, self.grading_order)
            return float(w) - s

        return float(brentq(f, t0, t1, xtol=1e-15, rtol=8.9e-16))

    def split_at_breaks(self, ta: float, tb: float):
        """Split the parameter interval [ta, tb] at segment breaks.

        Returns a list of ``(k, lo, hi)`` pieces with ``lo < hi`` lying
        inside segment ``k``.  Requires ``ta <= tb`` within [0, 1].
        """
        if tb < ta:
            raise ParameterError("interval reversed")
        pieces = []
        cuts = [ta] + [float(b) for b in self.t_breaks if ta < b < tb] + [tb]
        for lo, hi in zip(cuts, cuts[1:]):
            if hi - lo > 1e-300:
                mid = 0.5 * (lo + hi)
                pieces.append((self.segment_of_param(mid), lo, hi))
        return pieces


def allocate_node_counts(n: int, num_segments: int) -> tuple[int, ...]:
    """Split a total node budget into even per-segment counts.

    Every segment gets the same even base count; any remainder is handed
    out two nodes at a time starting from the first segment.
    """
    if n % 2:
        raise ParameterError(f"total node count must be even, got {n}")
    base = 2 * (n // (2 * num_segments))
    if base < 4:
        raise MeshTooCoarseError(
            f"{n} nodes cannot cover {num_segments} segments (need >= 4 each)"
        )
    counts = [base] * num_segments
    rem_pairs = (n - base * num_segments) // 2
    for i in range(rem_pairs):
        counts[i] += 2
    return tuple(counts)


def build_mesh(
    curve: PiecewiseCurve,
    n: int | None = None,
    *,
    per_segment=None,
    grading_order: int = 6,
) -> GradedMesh:
    """Build a graded mesh on ``curve``.

    Either pass a total node count ``n`` (split evenly across segments)
    or explicit even ``per_segment`` counts.
    """
    if (n is None) == (per_segment is None):
        raise ParameterError("pass exactly one of n or per_segment")
    if per_segment is None:
        per_segment = allocate_node_counts(int(n), len(curve.segments))
    return GradedMesh(curve, per_segment, grading_order)


# -- point classification ---------------------------------------------------


def _line_crossings(p0, p1, x0):
    """y-values where the open-ended segment p0->p1 crosses x = x0.

    Half-open convention: the start point belongs to the segment, the
    end point does not.  Vertical segments never cross (the caller
    nudges x0 off such lines).
    """
    dx = p1[0] - p0[0]
    if dx == 0.0:
        return []
    u = (x0 - p0[0]) / dx
    if 0.0 <= u < 1.0:
        return [p0[1] + u * (p1[1] - p0[1])]
    return []


def _arc_crossings(seg: ArcSegment, x0):
    c = (x0 - seg.center[0]) / seg.radius
    if abs(c) >= 1.0:
        return []
    th1 = math.acos(c)
    a0, a1 = seg.angle_start, seg.angle_end
    lo, hi = min(a0, a1), max(a0, a1)
    ys = []
    for base in (th1, -th1):
        m0 = math.ceil((lo - base) / (2 * math.pi))
        th = base + 2 * math.pi * m0
        while th <= hi + 1e-15:
            # half-open in traversal order: start included, end excluded
            inside = (a0 <= th < a1 - 1e-15) if a1 > a0 else (a1 + 1e-15 < th <= a0)
            if inside or abs(th - a0) < 1e-15:
                ys.append(seg.center[1] + seg.radius * math.sin(th))
            th += 2 * math.pi
    return ys


def _crossings_below(segments, x0: float, y: float, tails=None) -> int:
    count = 0
    for seg in segments:
        if isinstance(seg, LineSegment):
            ys = _line_crossings(seg.start, seg.end, x0)
        else:
            ys = _arc_crossings(seg, x0)
        count += sum(1 for yy in ys if yy < y)
    if tails is not None:
        (ax, ay), (bx, by) = tails
        if x0 < ax and ay < y:
            count += 1
        if x0 >= bx and by < y:
            count += 1
    return count


def _degenerate_x(segments, x0: float, scale: float) -> bool:
    tol = 1e-12 * scale
    for seg in segments:
        if isinstance(seg, LineSegment):
            crit = [seg.start[0], seg.end[0]]
        else:
            crit = [
                seg.center[0] - seg.radius,
                seg.center[0] + seg.radius,
                seg.point(0.0)[0],
                seg.point(seg.length)[0],
            ]
        if any(abs(x0 - c) < tol for c in crit):
            return True
    return False


def _safe_x(segments, x0: float, scale: float) -> float:
    shift = 1.137e-9 * scale
    for _ in range(8):
        if not _degenerate_x(segments, x0, scale):
            return x0
        x0 += shift
        shift *= 1.7
    raise ConfigurationError("could not find a non-degenerate vertical test line")


def classify_side(curve: PiecewiseCurve, point) -> int:
    """Which half-space a point belongs to: 1 above the interface, 2 below.

    The interface is extended by horizontal tails beyond its endpoints.
    The point must not lie on the extended interface.
    """
    if curve.closed:
        raise ParameterError("classify_side applies to open interfaces")
    p = _as_point(point)
    scale = max(1.0, curve.total_length)
    x0 = _safe_x(curve.segments, p[0], scale)
    a = curve.start
    b = curve.end
    below = _crossings_below(curve.segments, x0, p[1], tails=((a[0], a[1]), (b[0], b[1])))
    return 1 if below % 2 == 1 else 2


def curve_contains(curve: PiecewiseCurve, point) -> bool:
    """Whether a point lies inside a closed curve (crossing parity)."""
    if not curve.closed:
        raise ParameterError("containment test needs a closed curve")
    p = _as_point(point)
    scale = max(1.0, curve.total_length)
    x0 = _safe_x(curve.segments, p[0], scale)
    return _crossings_below(curve.segments, x0, p[1]) % 2 == 1


# -- stock shapes -----------------------------------------------------------


def flat_interface(half_width: float, elevation: float = 0.0) -> PiecewiseCurve:
    """Single flat segment from (-half_width, elevation) to (+half_width, elevation)."""
    return PiecewiseCurve(
        [LineSegment((-half_width, elevation), (half_width, elevation))]
    )


def two_piece_flat_interface(half_width: float = 2.0) -> PiecewiseCurve:
    """Flat interface split into two segments with a joint at the origin."""
    return PiecewiseCurve(
        [
            LineSegment((-half_width, 0.0), (0.0, 0.0)),
            LineSegment((0.0, 0.0), (half_width, 0.0)),
        ]
    )


def bump_dip_interface() -> PiecewiseCurve:
    """Flat line interrupted by a semicircular bump then a semicircular dip.

    Runs from (-3.5, 0) to (3.5, 0): flat to (-2, 0), a radius-1
    semicircle above the axis to (0, 0), a radius-1 semicircle below the
    axis to (2, 0), then flat.  The bump and dip meet the flats at right
    angles (true corners) and each other smoothly (curvature jump only).
    """
    return PiecewiseCurve(
        [
            LineSegment((-3.5, 0.0), (-2.0, 0.0)),
            ArcSegment((-1.0, 0.0), 1.0, math.pi, 0.0),
            ArcSegment((1.0, 0.0), 1.0, math.pi, 2 * math.pi),
            LineSegment((2.0, 0.0), (3.5, 0.0)),
        ]
    )


def notched_interface() -> PiecewiseCurve:
    """Flat interface from (-6.5, 0) to (6.5, 0) with five rectangular
    notches (width 1, depth 0.5) centered at x = -4, -2, 0, 2, 4."""
    segs = []
    x = -6.5
    for cx in (-4.0, -2.0, 0.0, 2.0, 4.0):
        segs.append(LineSegment((x, 0.0), (cx - 0.5, 0.0)))
        segs.append(LineSegment((cx - 0.5, 0.0), (cx - 0.5, -0.5)))
        segs.append(LineSegment((cx - 0.5, -0.5), (cx + 0.5, -0.5)))
        segs.append(LineSegment((cx + 0.5, -0.5), (cx + 0.5, 0.0)))
        x = cx + 0.5
    segs.append(LineSegment((x, 0.0), (6.5, 0.0)))
    return PiecewiseCurve(segs)


def step_interface() -> PiecewiseCurve:
    """Flat at height 0.5 for x < 0, flat at -0.5 for x > 0, joined by a
    vertical wall at x = 0; endpoints at x = -2 and 2."""
    return PiecewiseCurve(
        [
            LineSegment((-2.0, 0.5), (0.0, 0.5)),
            LineSegment((0.0, 0.5), (0.0, -0.5)),
            LineSegment((0.0, -0.5), (2.0, -0.5)),
        ]
    )


def teardrop_obstacle(
    center=(0.0, 1.75), radius: float = 0.75, tip=(0.0, 2.9)
) -> PiecewiseCurve:
    """Closed teardrop: a circle with two tangent lines meeting at a tip.

    Traversed counterclockwise starting at the tip (a true corner).
    The tip must lie outside the circle, directly above its center.
    """
    c = _as_point(center)
    tp = _as_point(tip)
    d = float(np.hypot(*(tp - c)))
    if d <= radius:
        raise ParameterError("tip must lie outside the circle")
    if abs(tp[0] - c[0]) > 1e-12 or tp[1] <= c[1]:
        raise ParameterError("tip must be directly above the circle center")
    half_angle = math.acos(radius / d)  # between center->tip and center->tangency
    # Tangency points at polar angles pi/2 +/- half_angle about the center.
    a_left = math.pi / 2 + half_angle
    a_right = math.pi / 2 - half_angle
    p_left = c + radius * np.array([math.cos(a_left), math.sin(a_left)])
    p_right = c + radius * np.array([math.cos(a_right), math.sin(a_right)])
    return PiecewiseCurve(
        [
            LineSegment(tp, p_left),
            ArcSegment(c, radius, a_left, a_right + 2 * math.pi),
            LineSegment(p_right, tp),
        ],
        closed=True,
    )
