"""Per-subdomain operator assembly and the scaled Neumann-to-Dirichlet matrix.

Each subdomain of the transmission problem is bounded by one open
(truncated) interface arc and, optionally, closed obstacle curves.  On
the uniform parameter grid of every boundary piece this module builds

* dense single-layer and double-layer matrices whose rows realize the
  sixth-order hybrid Gauss-trapezoidal rule: a trapezoidal body away
  from the target node plus off-grid correction points whose density
  values are scattered back onto the grid through trigonometric cardinal
  interpolation;
* the diagonal free-term vector: on the physical part of the interface
  the angle subtended by the curve endpoints plus the discrete static
  double-layer row sum (so the discretization error of the double-layer
  matrix is cancelled consistently), the exact value -1 inside the
  absorbing layer, and row-sum based variants on closed obstacle pieces;
* the scaled Neumann-to-Dirichlet matrix ``N = (K - H)^{-1} S`` which
  maps grading-scaled outward conormal data ``|x'(t_j)| d/d(nu_c) u`` at
  the nodes to boundary traces ``u`` at the nodes.

Near-diagonal and corner-straddling kernel evaluations are routed
through the stabilized pair tables so graded meshes keep full relative
accuracy; all remaining pairs use direct vectorized evaluation.  Row
assembly may be parallelized over row blocks; the result is bit
identical to the serial one because every block is computed by the same
arithmetic regardless of scheduling.
"""

from __future__ import annotations

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import get_lapack_funcs, lu_factor, lu_solve

from .errors import ConfigurationError, ParameterError, SolverError
from .geometry import GradedMesh
from .kernels import (
    KernelContext,
    PairTables,
    double_layer_value,
    laplace_double_layer_value,
    single_layer_value,
)
from .pml import PmlProfile
from .quadrature import AlpertRule, cardinal_weights
from .special_fn import sqrt_nonneg_re

__all__ = [
    "BoundaryPiece",
    "SubdomainBoundary",
    "NtdMatrix",
    "k0_diag",
    "assemble_operator",
    "ntd_matrix",
    "dump_matrix",
    "load_matrix",
]

_log = logging.getLogger(__name__)

_TWO_PI = 2.0 * np.pi

# The correction rule is loaded (and its table checksummed) once at import.
_RULE = AlpertRule.order6()
_OFFSETS = np.concatenate([np.asarray(_RULE.nodes), -np.asarray(_RULE.nodes)])
_GAMMAS = np.concatenate([np.asarray(_RULE.weights)] * 2)
_MASK_OFFSETS = np.arange(-(_RULE.body_offset - 1), _RULE.body_offset)

# Entries per dense-evaluation row block (bounds temporary memory).
_BLOCK_ENTRIES = 2_000_000

# Condition-estimate floor below which a factorization is rejected.
_RCOND_FLOOR = 1e-13


# -- boundary description ---------------------------------------------------


@dataclass(frozen=True)
class BoundaryPiece:
    """One piece of a subdomain boundary.

    Attributes
    ----------
    mesh : GradedMesh
        Node layout of the piece.
    orientation : int
        ``+1`` when the right-of-travel normal of the mesh
        parameterization points out of the subdomain (the natural state
        for the upper half-space on a left-to-right interface and for
        the interior of a counterclockwise closed curve); ``-1`` flips
        the normal, as needed for the lower half-space and for obstacle
        curves seen from outside.
    """

    mesh: GradedMesh
    orientation: int

    def __post_init__(self):
        if self.orientation not in (-1, 1):
            raise ParameterError("piece orientation must be +1 or -1")


@dataclass
class SubdomainBoundary:
    """Boundary, medium, and stretching data of one subdomain.

    Parameters
    ----------
    pieces : tuple of BoundaryPiece
        Boundary pieces; at most one open (interface) piece, and it must
        come first.  Closed pieces follow.
    k0 : float
        Free-space wavenumber ``2 pi / wavelength``.
    refractive_index : float
        Index of the subdomain medium; kernels use the subdomain
        wavenumber ``k0 * refractive_index``.
    eta : float
        Transmission weight of the medium (1 in TE polarization,
        ``1/refractive_index**2`` in TM).
    profile : PmlProfile or None
        Horizontal stretching profile shared by all pieces (None keeps
        real coordinates, as for obstacle-interior problems).
    vertical : PmlProfile or None
        Optional vertical stretching profile (off by default).
    """

    pieces: tuple[BoundaryPiece, ...]
    k0: float
    refractive_index: float
    eta: float
    profile: PmlProfile | None
    vertical: PmlProfile | None = None
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.pieces = tuple(self.pieces)
        if not self.pieces:
            raise ParameterError("boundary needs at least one piece")
        if self.k0 <= 0:
            raise ParameterError("free-space wavenumber must be positive")
        if self.refractive_index <= 0:
            raise ParameterError("refractive index must be positive")
        if self.eta <= 0:
            raise ParameterError("transmission weight must be positive")
        open_pieces = [p for p in self.pieces if not p.mesh.curve.closed]
        if len(open_pieces) > 1:
            raise ParameterError("at most one open (interface) piece is supported")
        if open_pieces and self.pieces[0].mesh.curve.closed:
            raise ParameterError("the open interface piece must come first")

    @property
    def wavenumber(self) -> float:
        return self.k0 * self.refractive_index

    @property
    def block_sizes(self) -> tuple[int, ...]:
        return tuple(p.mesh.n for p in self.pieces)

    @property
    def size(self) -> int:
        return sum(self.block_sizes)

    # -- convenience constructors ------------------------------------------

    @classmethod
    def upper_half(cls, mesh: GradedMesh, *, k0: float, refractive_index: float,
                   eta: float = 1.0, profile: PmlProfile | None,
                   vertical: PmlProfile | None = None,
                   obstacle_mesh: GradedMesh | None = None) -> "SubdomainBoundary":
        """Boundary of the subdomain above the interface; an optional
        counterclockwise closed obstacle mesh becomes a hole piece."""
        pieces = [BoundaryPiece(mesh, +1)]
        if obstacle_mesh is not None:
            if not obstacle_mesh.curve.closed:
                raise ParameterError("obstacle mesh must be a closed curve")
            pieces.append(BoundaryPiece(obstacle_mesh, -1))
        return cls(tuple(pieces), k0, refractive_index, eta, profile, vertical)

    @classmethod
    def lower_half(cls, mesh: GradedMesh, *, k0: float, refractive_index: float,
                   eta: float = 1.0, profile: PmlProfile | None,
                   vertical: PmlProfile | None = None) -> "SubdomainBoundary":
        """Boundary of the subdomain below the interface (outward normal
        opposes the right-of-travel normal)."""
        return cls((BoundaryPiece(mesh, -1),), k0, refractive_index, eta,
                   profile, vertical)

    @classmethod
    def obstacle_interior(cls, mesh: GradedMesh, *, k0: float,
                          refractive_index: float,
                          eta: float = 1.0) -> "SubdomainBoundary":
        """Interior of a closed counterclockwise curve (ordinary
        unstretched boundary integral formulation)."""
        if not mesh.curve.closed:
            raise ParameterError("interior boundary must be a closed curve")
        return cls((BoundaryPiece(mesh, +1),), k0, refractive_index, eta,
                   None, None)


@dataclass(frozen=True, eq=False)
class NtdMatrix:
    """Dense scaled Neumann-to-Dirichlet matrix of one subdomain.

    Applied to the vector of grading-scaled outward conormal data
    ``phi_j = |x'(t_j)| * d/d(nu_c) u`` at the nodes (blocks concatenated
    in piece order) it returns the boundary traces at the nodes.

    Attributes
    ----------
    matrix : ndarray
        The dense complex matrix.
    condition_estimate : float
        1-norm condition estimate of the factorized system.
    block_sizes : tuple of int
        Node counts of the boundary pieces (concatenation layout).
    """

    matrix: np.ndarray
    condition_estimate: float
    block_sizes: tuple[int, ...]

    def __post_init__(self):
        if not np.all(np.isfinite(self.matrix)):
            raise SolverError("Neumann-to-Dirichlet matrix has non-finite entries")

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def apply(self, data) -> np.ndarray:
        """Traces produced by the given scaled conormal data."""
        vec = np.asarray(data, dtype=complex)
        if vec.shape[0] != self.size:
            raise ParameterError(
                f"data length {vec.shape[0]} does not match boundary size {self.size}"
            )
        return self.matrix @ vec


# -- shared machinery -------------------------------------------------------


def _piece_machinery(boundary: SubdomainBoundary, index: int, static: bool):
    """Cached (KernelContext, PairTables) for one piece.

    ``static`` selects the unstretched, wavenumber-free context used by
    the free-term row sums.
    """
    key = ("machinery", "static" if static else "wave", index)
    cache = boundary._cache
    if key not in cache:
        piece = boundary.pieces[index]
        if static:
            ctx = KernelContext(piece.mesh, None, None)
        else:
            ctx = KernelContext(piece.mesh, boundary.profile, boundary.wavenumber,
                                vertical=boundary.vertical)
        cache[key] = (ctx, PairTables(ctx, _OFFSETS))
    return cache[key]


def _row_blocks(n: int) -> list[slice]:
    rows = max(1, min(n, _BLOCK_ENTRIES // max(n, 1)))
    return [slice(s, min(s + rows, n)) for s in range(0, n, rows)]


def _kernel_values(which: str, k: float | None, dist, kappa):
    if which == "S":
        return single_layer_value(k, dist)
    if which == "K":
        return double_layer_value(k, dist, kappa)
    return laplace_double_layer_value(dist, kappa)


def _band_overlays(ctx: KernelContext, tables: PairTables, which: str,
                   k: float | None):
    """Stabilized near-diagonal kernel values to splice into naive blocks.

    Returns ``(cols, vals, keep)`` of shape ``(n, 2 * band_steps)``
    (columns, kernel values, and which entries to use).
    """
    n = ctx.mesh.n
    wp = ctx.w_prime
    rows = np.arange(n)[:, None]
    steps = np.arange(tables.band_steps)[None, :]
    col_parts, val_parts, keep_parts = [], [], []
    for side, sgn in (("right", 1), ("left", -1)):
        d1, d2, dist, kb, valid = tables.band_pair(side)
        cols = (rows + sgn * (steps + 1)) % n
        keep = valid & (dist != 0)
        dist_safe = np.where(keep, dist, 1.0)
        kappa = None if which == "S" else wp[cols] * kb
        vals = _kernel_values(which, k, dist_safe, kappa)
        col_parts.append(cols)
        val_parts.append(vals)
        keep_parts.append(keep)
    return (np.concatenate(col_parts, axis=1),
            np.concatenate(val_parts, axis=1),
            np.concatenate(keep_parts, axis=1))


def _halo_overlays(ctx: KernelContext, tables: PairTables, which: str,
                   k: float | None) -> dict[int, np.ndarray]:
    """Fully stabilized kernel-value rows for targets inside a corner halo."""
    n = ctx.mesh.n
    wp = ctx.w_prime
    out: dict[int, np.ndarray] = {}
    for l in tables.halo_rows:
        l = int(l)
        d1, d2, dist, kb = tables.halo_row(l)
        dead = dist == 0
        dead[l] = True
        dist_safe = np.where(dead, 1.0, dist)
        kappa = None if which == "S" else wp * kb
        row = _kernel_values(which, k, dist_safe, kappa)
        row[dead] = 0.0
        out[l] = row
    return out


def _card_bases(n: int) -> np.ndarray:
    """Cardinal-weight base vectors, one per off-grid correction offset.

    ``bases[i][(j - l) % n]`` is the interpolation weight of grid node j
    for the correction point ``t_l + offsets[i] * h`` (shift structure of
    the periodic cardinal function)."""
    bases = np.empty((_OFFSETS.shape[0], n))
    for i, off in enumerate(_OFFSETS):
        bases[i] = cardinal_weights(n, (1.0 + off) / n)
    return bases


def _correction_coefficients(ctx: KernelContext, tables: PairTables,
                             which: str, k: float | None) -> np.ndarray:
    """Per-row, per-offset correction weights ``gamma * h * kernel``."""
    dist = tables.off_dist
    kappa = None if which == "S" else tables.tau_w_prime * tables.off_kappa_bar
    vals = _kernel_values(which, k, dist, kappa)
    return (_GAMMAS[None, :] / ctx.mesh.n) * vals


def _self_matrix(ctx: KernelContext, tables: PairTables, which: str,
                 k: float | None, threads: int = 1) -> np.ndarray:
    """Discretized self-interaction operator block on one piece."""
    mesh = ctx.mesh
    n = mesh.n
    h = mesh.h
    xt, dxt, wp = ctx.xt, ctx.dxt, ctx.w_prime
    bcols, bvals, bkeep = _band_overlays(ctx, tables, which, k)
    halo_rows = _halo_overlays(ctx, tables, which, k)
    coef = _correction_coefficients(ctx, tables, which, k)
    bases = _card_bases(n)
    col_idx = np.arange(n)
    out = np.empty((n, n), dtype=complex)

    def fill(blk: slice) -> None:
        rows = np.arange(blk.start, blk.stop)
        rloc = rows - blk.start
        d1 = xt[None, :, 0] - xt[blk, 0][:, None]
        d2 = xt[None, :, 1] - xt[blk, 1][:, None]
        dist = sqrt_nonneg_re(d1 * d1 + d2 * d2)
        dist[rloc, rows] = 1.0
        if which == "S":
            vals = single_layer_value(k, dist)
        else:
            kb = dxt[None, :, 1] * d1 - dxt[None, :, 0] * d2
            vals = _kernel_values(which, k, dist, wp[None, :] * kb)
        vals[rloc, rows] = 0.0
        # splice stabilized band values
        br, bc = np.nonzero(bkeep[blk])
        vals[br, bcols[blk][br, bc]] = bvals[blk][br, bc]
        # fully stabilized rows inside corner halos
        for l, row_vals in halo_rows.items():
            if blk.start <= l < blk.stop:
                vals[l - blk.start] = row_vals
        # trapezoidal weight, near-target exclusion, correction scatter
        vals *= h
        vals[rloc[:, None], (rows[:, None] + _MASK_OFFSETS[None, :]) % n] = 0.0
        ridx = (col_idx[None, :] - rows[:, None]) % n
        for i in range(_OFFSETS.shape[0]):
            vals += coef[blk, i][:, None] * bases[i][ridx]
        out[blk] = vals

    blocks = _row_blocks(n)
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, blocks))
    else:
        for blk in blocks:
            fill(blk)
    return out


def _max_node_spacing(mesh: GradedMesh) -> float:
    pts = mesh.points
    gaps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    if mesh.curve.closed:
        gaps = np.append(gaps, np.linalg.norm(pts[0] - pts[-1]))
    return float(np.max(gaps))


def _cross_matrix(ctx_row: KernelContext, ctx_col: KernelContext, which: str,
                  k: float | None) -> np.ndarray:
    """Plain-trapezoid interaction block between two disjoint pieces."""
    p_r = ctx_row.mesh.points
    p_c = ctx_col.mesh.points
    gap = np.min(np.linalg.norm(p_r[:, None, :] - p_c[None, :, :], axis=2))
    spacing = max(_max_node_spacing(ctx_row.mesh), _max_node_spacing(ctx_col.mesh))
    if gap < 0.5 * spacing:
        raise ConfigurationError(
            f"boundary pieces touch or overlap (node separation {gap:.3e} "
            f"below half the node spacing {spacing:.3e})"
        )
    xt_r = ctx_row.xt
    xt_c = ctx_col.xt
    d1 = xt_c[None, :, 0] - xt_r[:, None, 0]
    d2 = xt_c[None, :, 1] - xt_r[:, None, 1]
    dist = sqrt_nonneg_re(d1 * d1 + d2 * d2)
    if which == "S":
        vals = single_layer_value(k, dist)
    else:
        dxt_c = ctx_col.dxt
        kb = dxt_c[None, :, 1] * d1 - dxt_c[None, :, 0] * d2
        vals = _kernel_values(which, k, dist, ctx_col.w_prime[None, :] * kb)
    return ctx_col.mesh.h * vals


# -- operator assembly ------------------------------------------------------


def assemble_operator(boundary: SubdomainBoundary, which: str, *,
                      threads: int = 1) -> np.ndarray:
    """Assemble a discretized boundary operator over the full boundary.

    Parameters
    ----------
    boundary : SubdomainBoundary
    which : str
        ``"S"`` (single layer), ``"K"`` (double layer), or ``"K0"``
        (static double layer on the unstretched geometry, used by the
        free-term machinery).
    threads : int
        Row-block parallelism for the self blocks; the result is bit
        identical for any thread count.

    Returns
    -------
    ndarray
        Dense complex block matrix (cached on the boundary; treat as
        read-only).  Double-layer blocks carry the per-piece normal
        orientation; cross blocks between disjoint pieces use the plain
        trapezoidal rule, which is high-order for their smooth kernels.
    """
    key = str(which).upper()
    if key not in ("S", "K", "K0"):
        raise ParameterError(f"unknown operator {which!r} (expected S, K, or K0)")
    cache_key = ("operator", key)
    cache = boundary._cache
    if cache_key in cache:
        return cache[cache_key]
    static = key == "K0"
    k = None if static else boundary.wavenumber
    sizes = boundary.block_sizes
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    out = np.empty((total, total), dtype=complex)
    for i in range(len(boundary.pieces)):
        ctx_i, tables_i = _piece_machinery(boundary, i, static)
        si = slice(int(offsets[i]), int(offsets[i + 1]))
        out[si, si] = _self_matrix(ctx_i, tables_i, key, k, threads)
        for j in range(len(boundary.pieces)):
            if j == i:
                continue
            ctx_j, _ = _piece_machinery(boundary, j, static)
            sj = slice(int(offsets[j]), int(offsets[j + 1]))
            out[si, sj] = _cross_matrix(ctx_i, ctx_j, key, k)
    if key != "S":
        for j, piece in enumerate(boundary.pieces):
            if piece.orientation < 0:
                sj = slice(int(offsets[j]), int(offsets[j + 1]))
                out[:, sj] *= -1.0
    cache[cache_key] = out
    return out


# -- free terms -------------------------------------------------------------


def _static_rowsums(boundary: SubdomainBoundary, index: int) -> np.ndarray:
    """Row sums of the discrete static double-layer matrix of one piece
    (natural right-of-travel orientation, unstretched geometry)."""
    key = ("static-rowsums", index)
    cache = boundary._cache
    if key not in cache:
        ctx, tables = _piece_machinery(boundary, index, True)
        cache[key] = _self_matrix(ctx, tables, "K0", None).sum(axis=1)
    return cache[key]


def _pml_node_masks(boundary: SubdomainBoundary, mesh: GradedMesh):
    """Boolean masks (inside-layer, exactly-at-entrance) for mesh nodes."""
    pts = mesh.points
    inside = np.zeros(mesh.n, dtype=bool)
    at_edge = np.zeros(mesh.n, dtype=bool)
    if boundary.profile is not None:
        r = np.abs(pts[:, 0])
        inside |= r > boundary.profile.a1
        at_edge |= r == boundary.profile.a1
    if boundary.vertical is not None:
        r = np.abs(pts[:, 1])
        inside |= r > boundary.vertical.a1
        at_edge |= r == boundary.vertical.a1
    return inside & ~at_edge, at_edge


def _interface_case1(boundary: SubdomainBoundary, index: int) -> np.ndarray:
    """Angle-plus-discrete-row free terms at every node of the open piece."""
    key = ("case1", index)
    cache = boundary._cache
    if key not in cache:
        piece = boundary.pieces[index]
        mesh = piece.mesh
        o = piece.orientation
        rows = _static_rowsums(boundary, index)
        a_pt = mesh.curve.segments[0].start
        b_pt = mesh.curve.segments[-1].end
        va = a_pt[None, :] - mesh.points
        vb = b_pt[None, :] - mesh.points
        ang = np.arctan2(va[:, 1], va[:, 0]) - np.arctan2(vb[:, 1], vb[:, 0])
        if o < 0:
            ang = -ang
        theta = np.mod(ang, _TWO_PI)
        degenerate = (np.hypot(va[:, 0], va[:, 1]) == 0.0) | \
                     (np.hypot(vb[:, 0], vb[:, 1]) == 0.0)
        theta = np.where(degenerate, np.pi, theta)
        cache[key] = -theta / np.pi + o * rows
    return cache[key]


def _piece_free_terms(boundary: SubdomainBoundary, index: int) -> np.ndarray:
    piece = boundary.pieces[index]
    mesh = piece.mesh
    if mesh.curve.closed:
        rows = _static_rowsums(boundary, index)
        if piece.orientation > 0:
            return rows.copy()
        return -2.0 - rows
    case1 = _interface_case1(boundary, index)
    inside, at_edge = _pml_node_masks(boundary, mesh)
    if np.any(at_edge):
        _log.info(
            "%d node(s) sit exactly at the layer entrance; using the "
            "angle-plus-row evaluation there", int(np.sum(at_edge))
        )
    return np.where(inside, -1.0 + 0.0j, case1)


def _free_term_vector(boundary: SubdomainBoundary) -> np.ndarray:
    key = "free-terms"
    cache = boundary._cache
    if key not in cache:
        cache[key] = np.concatenate(
            [_piece_free_terms(boundary, i) for i in range(len(boundary.pieces))]
        )
    return cache[key]


def _locate_node(boundary: SubdomainBoundary, l: int) -> tuple[int, int]:
    if not 0 <= l < boundary.size:
        raise ParameterError(f"node index {l} outside boundary of size {boundary.size}")
    local = l
    for i, size in enumerate(boundary.block_sizes):
        if local < size:
            return i, local
        local -= size
    raise ParameterError("unreachable")  # pragma: no cover


def _corner_angle(mesh: GradedMesh, orientation: int, local: int) -> float:
    """Interior angle at a junction node from one-sided tangents."""
    curve = mesh.curve
    nseg = len(curve.segments)
    left = int(mesh.segment_of_node[local])
    right = left + 1
    if right >= nseg:
        if not curve.closed:
            return np.pi
        right = 0
    seg_l = curve.segments[left]
    seg_r = curve.segments[right]
    t_minus = seg_l.tangent(seg_l.length)
    t_plus = seg_r.tangent(0.0)
    a = np.arctan2(-t_minus[1], -t_minus[0])
    b = np.arctan2(t_plus[1], t_plus[0])
    ang = a - b if orientation > 0 else b - a
    return float(np.mod(ang, _TWO_PI))


def k0_diag(boundary: SubdomainBoundary, l: int, *,
            method: str = "auto") -> complex:
    """Free-term diagonal entry at global node index ``l``.

    Parameters
    ----------
    boundary : SubdomainBoundary
    l : int
        Global node index (piece blocks concatenated).
    method : str
        ``"auto"``: position-aware routing — angle plus discrete static
        row on the physical part of the interface, exactly ``-1`` inside
        the absorbing layer, and row-sum variants on closed pieces.
        ``"case1"``: always the angle-plus-discrete-row evaluation (also
        valid at layer nodes, where it reproduces ``-1`` up to
        quadrature error).
        ``"exact"``: the closed-form interior-angle value
        ``-theta*/pi`` (``-1`` at smooth nodes; at junction nodes the
        angle comes from the one-sided tangents).
    """
    piece_idx, local = _locate_node(boundary, l)
    piece = boundary.pieces[piece_idx]
    if method == "auto":
        return complex(_free_term_vector(boundary)[l])
    if method == "case1":
        if piece.mesh.curve.closed:
            rows = _static_rowsums(boundary, piece_idx)
            if piece.orientation > 0:
                return complex(rows[local])
            return complex(-2.0 - rows[local])
        return complex(_interface_case1(boundary, piece_idx)[local])
    if method == "exact":
        mesh = piece.mesh
        if local in mesh.junction_indices:
            theta = _corner_angle(mesh, piece.orientation, local)
            return complex(-theta / np.pi)
        return complex(-1.0)
    raise ParameterError(f"unknown method {method!r} (expected auto, case1, exact)")


# -- the Neumann-to-Dirichlet matrix ---------------------------------------


def ntd_matrix(boundary: SubdomainBoundary, *, threads: int = 1) -> NtdMatrix:
    """Scaled Neumann-to-Dirichlet matrix ``N = (K - H)^{-1} S``.

    ``K`` and ``S`` are the assembled double- and single-layer matrices,
    ``H`` the diagonal free-term matrix.  The system is factorized by
    dense LU with partial pivoting; a 1-norm condition estimate is
    computed and logged, and a numerically singular factorization raises
    ``SolverError`` carrying the estimate.
    """
    cache_key = "ntd"
    cache = boundary._cache
    if cache_key in cache:
        return cache[cache_key]
    mat_s = assemble_operator(boundary, "S", threads=threads)
    mat_k = assemble_operator(boundary, "K", threads=threads)
    free = _free_term_vector(boundary)
    system = mat_k - np.diag(free)
    if not np.all(np.isfinite(system)):
        raise SolverError("operator assembly produced non-finite entries")
    anorm = np.linalg.norm(system, 1)
    lu, piv = lu_factor(system, check_finite=False)
    (gecon,) = get_lapack_funcs(("gecon",), (lu,))
    rcond, info = gecon(lu, anorm, norm="1")
    if info != 0 or not np.isfinite(rcond) or rcond < _RCOND_FLOOR:
        estimate = 1.0 / max(float(rcond), 1e-300)
        raise SolverError(
            "trace system is numerically singular "
            f"(1-norm condition estimate {estimate:.3e})"
        )
    condition = 1.0 / float(rcond)
    _log.info("NtD matrix: %d nodes, 1-norm condition estimate %.3e",
              boundary.size, condition)
    result = NtdMatrix(
        matrix=np.ascontiguousarray(lu_solve((lu, piv), mat_s, check_finite=False)),
        condition_estimate=condition,
        block_sizes=boundary.block_sizes,
    )
    cache[cache_key] = result
    return result


# -- debug matrix dumps -----------------------------------------------------


_DUMP_MAGIC = b"NTDM"
_DUMP_VERSION = 1


def dump_matrix(matrix, path) -> None:
    """Write a dense complex matrix to a self-describing binary file.

    Layout: 4-byte magic, little-endian uint32 version, uint64 row and
    column counts, then row-major little-endian complex128 data.
    """
    mat = np.ascontiguousarray(np.asarray(matrix, dtype=complex))
    if mat.ndim != 2:
        raise ParameterError("matrix dump expects a 2-D array")
    with open(path, "wb") as handle:
        handle.write(_DUMP_MAGIC)
        handle.write(struct.pack("<IQQ", _DUMP_VERSION, mat.shape[0], mat.shape[1]))
        handle.write(mat.astype("<c16", copy=False).tobytes())


def load_matrix(path) -> np.ndarray:
    """Read a matrix written by :func:`dump_matrix`."""
    with open(path, "rb") as handle:
        magic = handle.read(4)
        if magic != _DUMP_MAGIC:
            raise ParameterError("not a matrix dump (bad magic)")
        version, rows, cols = struct.unpack("<IQQ", handle.read(20))
        if version != _DUMP_VERSION:
            raise ParameterError(f"unsupported dump version {version}")
        payload = handle.read()
    if len(payload) != 16 * rows * cols:
        raise ParameterError("matrix dump is truncated")
    data = np.frombuffer(payload, dtype="<c16")
    return data.reshape(int(rows), int(cols)).astype(complex)
