"""Absorbing layer: profile, complex coordinate stretching, and kernels.

The computational strip ``|x1| <= a1`` is surrounded by an absorbing
layer of thickness ``T`` in which the first coordinate is complexified,

    x1 -> x1 + i * integral_0^{x1} sigma(t) dt,

with an even, nonnegative absorption profile ``sigma`` that vanishes
identically inside the strip and rises smoothly (C^{order-1} contact) to
``2 * strength * thickness`` at the outer edge.  Distances between
stretched points use the square root with nonnegative real part, under
which the outgoing wave kernel gains exponential decay inside the layer.

An optional second profile can stretch the vertical coordinate the same
way; none of the stock configurations use one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .geometry import _v_shift
from .quadrature import gauss_legendre
from .special_fn import DomainError, hankel1, log_principal, sqrt_nonneg_re

__all__ = [
    "PmlProfile",
    "sigma1",
    "stretch",
    "rho",
    "green_helmholtz",
    "green_laplace",
]

_STRETCH_GAUSS_ORDER = 20
_STRETCH_PANELS = 8


def _ipow(x, p: int):
    """Integer power by repeated squaring (faster than np.power on
    large arrays, comparable rounding)."""
    out = None
    base = x
    k = p
    while k:
        if k & 1:
            out = base if out is None else out * base
        k >>= 1
        if k:
            base = base * base
    return out


@dataclass(frozen=True)
class PmlProfile:
    """Absorption profile for one coordinate.

    Attributes
    ----------
    a1 : float
        Half-width of the physical (unstretched) region.
    thickness : float
        Layer thickness; absorption happens on ``a1 <= |x| <= a1 + thickness``.
    strength : float
        Absorption magnitude; the profile climbs from 0 to
        ``2 * strength * thickness`` and its integral over one layer is
        ``strength * thickness**2``.
    order : int
        Smoothness order of the ramp (vanishing contact of this order at
        the layer entrance), default 8.
    """

    a1: float
    thickness: float
    strength: float
    order: int = 8

    def __post_init__(self):
        if self.a1 <= 0:
            raise ParameterError("physical half-width must be positive")
        if self.thickness <= 0:
            raise ParameterError("layer thickness must be positive")
        if self.strength < 0:
            raise ParameterError("absorption strength must be nonnegative")
        if self.order < 2:
            raise ParameterError("profile order must be at least 2")

    @property
    def outer_edge(self) -> float:
        return self.a1 + self.thickness

    @property
    def peak(self) -> float:
        return 2.0 * self.strength * self.thickness

    @property
    def layer_integral(self) -> float:
        """integral of sigma over one layer: point-symmetric ramp, mean
        strength*thickness over a width of thickness."""
        return self.strength * self.thickness**2

    # -- pointwise profile --------------------------------------------------

    def _ramp_parts(self, u):
        """Rational-cubic ramp pieces at clipped layer fractions.

        Returns ``(f, w1, w2, w1p, w2p)`` where ``f`` is the layer
        fraction and the ``w`` values keep full relative accuracy near
        both ends (shifted-cubic evaluation close to the vanishing end).
        """
        p = self.order
        a = 0.5 - 1.0 / p
        f = np.clip((u - self.a1) / self.thickness, 0.0, 1.0)
        xi = 2.0 * f - 1.0
        u_lo = 2.0 * f
        u_hi = 2.0 - u_lo
        v_pos = a * xi * xi * xi + xi / p + 0.5
        v_neg = -a * xi * xi * xi - xi / p + 0.5
        w1 = np.where(u_hi < 0.5, _v_shift(u_hi, p), v_neg)
        w2 = np.where(u_lo < 0.5, _v_shift(u_lo, p), v_pos)
        return f, w1, w2, _ipow(w1, p), _ipow(w2, p)

    def sigma(self, x1):
        """Profile value (even in ``x1``)."""
        u = np.abs(np.asarray(x1, dtype=float))
        f, _, _, w1p, w2p = self._ramp_parts(u)
        ramp = self.peak * (w2p / (w1p + w2p))
        out = np.where(u <= self.a1, 0.0, np.where(u >= self.outer_edge, self.peak, ramp))
        return float(out) if np.ndim(x1) == 0 else out

    def sigma_prime(self, x1):
        """d(sigma)/dx1 (odd in ``x1``; zero outside the ramp)."""
        x = np.asarray(x1, dtype=float)
        u = np.abs(x)
        p = self.order
        a = 0.5 - 1.0 / p
        f, w1, w2, w1p, w2p = self._ramp_parts(u)
        xi = 2.0 * f - 1.0
        vp_even = 3.0 * a * xi * xi + 1.0 / p      # vp(xi) = vp(-xi)
        denom = w1p + w2p
        w1_safe = np.where(w1 == 0.0, 1.0, w1)     # endpoints masked below
        w2_safe = np.where(w2 == 0.0, 1.0, w2)
        slope = (
            self.peak
            * (2.0 / self.thickness)
            * p
            * vp_even
            * ((w2p / w2_safe) * w1p + (w1p / w1_safe) * w2p)
            / (denom * denom)
        )
        inside = (u > self.a1) & (u < self.outer_edge)
        out = np.where(inside, np.sign(x) * slope, 0.0)
        return float(out) if np.ndim(x1) == 0 else out

    def sigma_integral(self, x1):
        """integral_0^{x1} sigma(t) dt (odd in ``x1``).

        Inside the ramp the integral is evaluated with fixed-order Gauss
        panels (the integrand is smooth there); beyond the layer it
        continues linearly with slope ``peak``.
        """
        x = np.asarray(x1, dtype=float)
        u = np.abs(x)
        gx, gw = gauss_legendre(_STRETCH_GAUSS_ORDER)
        edges = self.a1 + self.thickness * np.arange(_STRETCH_PANELS + 1) / _STRETCH_PANELS
        ramp_part = np.zeros(u.shape)
        for lo, hi in zip(edges, edges[1:]):
            top = np.clip(u, lo, hi)
            width = top - lo
            pts = lo + np.multiply.outer(width, gx)
            ramp_part = ramp_part + width * (self.sigma(pts) @ gw)
        tail = self.peak * np.maximum(u - self.outer_edge, 0.0)
        out = np.sign(x) * (ramp_part + tail)
        return float(out) if np.ndim(x1) == 0 else out

    def stretch1(self, x1):
        """Complexified coordinate ``x1 + i * sigma_integral(x1)``."""
        x = np.asarray(x1, dtype=float)
        out = x + 1j * self.sigma_integral(x)
        return complex(out) if np.ndim(x1) == 0 else out

    def alpha(self, x1):
        """Stretching derivative ``1 + i * sigma(x1)``."""
        out = 1.0 + 1j * np.asarray(self.sigma(x1))
        return complex(out) if np.ndim(x1) == 0 else out


def sigma1(x1, profile: PmlProfile):
    """Horizontal absorption profile value(s) at ``x1``."""
    return profile.sigma(x1)


def stretch(point, profile: PmlProfile, vertical: PmlProfile | None = None):
    """Complexified coordinates of a physical point (or array of points).

    ``point`` has shape (2,) or (..., 2); returns a complex array of the
    same shape.  Only the first coordinate is stretched unless a
    ``vertical`` profile is supplied.
    """
    p = np.asarray(point, dtype=float)
    if p.shape[-1] != 2:
        raise ParameterError("points must have two coordinates")
    out = np.empty(p.shape, dtype=complex)
    out[..., 0] = profile.stretch1(p[..., 0])
    out[..., 1] = vertical.stretch1(p[..., 1]) if vertical is not None else p[..., 1]
    return out


def rho(xs, ys):
    """Complexified distance between stretched points.

    Componentwise difference, sum of squares, square root with
    nonnegative real part.  Reduces to the Euclidean distance for
    unstretched points.
    """
    a = np.asarray(xs, dtype=complex)
    b = np.asarray(ys, dtype=complex)
    d = a - b
    return sqrt_nonneg_re(d[..., 0] ** 2 + d[..., 1] ** 2)


def green_helmholtz(xs, ys, k: float):
    """Outgoing wave kernel ``(i/4) H1_0(k rho)`` between stretched points."""
    r = np.asarray(rho(xs, ys))
    if np.any(r == 0):
        raise DomainError("coincident points: wave kernel is singular")
    out = 0.25j * hankel1(0, k * r)
    return complex(out) if np.ndim(out) == 0 else out


def green_laplace(xs, ys):
    """Log kernel ``-(1/2 pi) log rho`` between stretched points."""
    r = np.asarray(rho(xs, ys))
    if np.any(r == 0):
        raise DomainError("coincident points: log kernel is singular")
    out = -log_principal(r) / (2.0 * np.pi)
    return complex(out) if np.ndim(out) == 0 else out
