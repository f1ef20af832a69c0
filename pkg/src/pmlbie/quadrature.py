"""Quadrature machinery for the Nystrom discretization.

Three pieces live here:

* a sixth-order hybrid Gauss-trapezoidal rule (Alpert style) for
  1-periodic integrands with a logarithmic singularity at the target
  node: trapezoidal body away from the target plus weighted off-grid
  correction points clustered around it;
* trigonometric cardinal interpolation on the uniform parameter grid
  (used to evaluate densities at the rule's off-grid points);
* Gauss-Legendre nodes/weights on [0, 1] for the stabilization
  integrals.

The rule's nodes and weights are frozen digit-for-digit and protected by
a checksum so silent table corruption is impossible.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import MeshTooCoarseError, ParameterError

__all__ = [
    "AlpertRule",
    "alpert_row",
    "cardinal_weights",
    "trig_interp",
    "gauss_legendre",
]

# Sixth-order correction nodes (offsets from the target, in units of h)
# and weights.  These exact decimal strings are the contract; the
# checksum below freezes them.
_ORDER6_NODES = (
    "4.004884194926570E-03",
    "7.745655373336686E-02",
    "3.972849993523248E-01",
    "1.075673352915104E+00",
    "2.003796927111872E+00",
)
_ORDER6_WEIGHTS = (
    "1.671879691147102E-02",
    "1.636958371447360E-01",
    "4.981856569770637E-01",
    "8.372266245578912E-01",
    "9.841730844088381E-01",
)
_ORDER6_CHECKSUM = "sha256:885dbf1e4d1b6c240cae61a9480703c8feda899e9ce6ece37ce094374a440225"


def _table_digest(nodes, weights, body_offset: int) -> str:
    payload = "|".join(list(nodes) + list(weights) + [str(body_offset)])
    return "sha256:" + hashlib.sha256(payload.encode("ascii")).hexdigest()


@dataclass(frozen=True)
class AlpertRule:
    """Hybrid Gauss-trapezoidal rule for log-singular periodic integrands.

    Attributes
    ----------
    order : int
        Convergence order (only 6 ships).
    num_corrections : int
        Number of off-grid node/weight pairs on each side of the target.
    body_offset : int
        First trapezoidal offset from the target (the body runs over
        offsets ``body_offset .. n - body_offset``).
    nodes, weights : tuple of float
        Correction offsets (in units of the grid spacing) and weights.
    node_strings, weight_strings : tuple of str
        The frozen decimal representations (checksummed).
    """

    order: int
    num_corrections: int
    body_offset: int
    node_strings: tuple[str, ...]
    weight_strings: tuple[str, ...]
    nodes: tuple[float, ...] = field(init=False)
    weights: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(float(s) for s in self.node_strings))
        object.__setattr__(self, "weights", tuple(float(s) for s in self.weight_strings))
        if len(self.nodes) != self.num_corrections or len(self.weights) != self.num_corrections:
            raise ParameterError("correction node/weight count mismatch")
        if list(self.nodes) != sorted(self.nodes):
            raise ParameterError("correction nodes must be increasing")
        if any(w <= 0 for w in self.weights):
            raise ParameterError("correction weights must be positive")

    @classmethod
    def order6(cls) -> "AlpertRule":
        """The shipped sixth-order rule (5 correction pairs, body from offset 3)."""
        rule = cls(
            order=6,
            num_corrections=5,
            body_offset=3,
            node_strings=_ORDER6_NODES,
            weight_strings=_ORDER6_WEIGHTS,
        )
        rule.verify_checksum()
        return rule

    def checksum(self) -> str:
        return _table_digest(self.node_strings, self.weight_strings, self.body_offset)

    def verify_checksum(self) -> None:
        """Raise if the table digits do not match the frozen digest."""
        got = self.checksum()
        if got != _ORDER6_CHECKSUM:
            raise ParameterError(
                f"quadrature table corrupted: digest {got} != {_ORDER6_CHECKSUM}"
            )


def cardinal_weights(n: int, tau: float) -> np.ndarray:
    """Trigonometric cardinal weights at parameter ``tau``.

    Returns the length-``n`` vector ``L(tau - t_j)`` with nodes
    ``t_j = j/n`` (j = 1..n) and ``L(t) = sin(n pi t) / (n tan(pi t))``,
    so that ``weights @ values`` interpolates grid data at ``tau``.
    ``n`` must be even.
    """
    if n % 2 != 0:
        raise ParameterError("cardinal interpolation requires an even node count")
    t_nodes = np.arange(1, n + 1) / n
    u = tau - t_nodes
    s = np.sin(np.pi * u)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.sin(n * np.pi * u) * np.cos(np.pi * u) / (n * s)
    on_node = np.abs(s) < 1e-14
    if np.any(on_node):
        w = np.where(on_node, 1.0, w)
    return w


def trig_interp(values: np.ndarray, tau) -> complex | np.ndarray:
    """Trigonometric interpolation of 1-periodic grid data.

    ``values[j]`` is the sample at ``t = (j+1)/n``.  Exact at the nodes
    and for trigonometric polynomials of degree below ``n/2``.
    """
    values = np.asarray(values)
    n = values.shape[0]
    if np.ndim(tau) == 0:
        return complex(cardinal_weights(n, float(tau)) @ values.astype(complex))
    taus = np.asarray(tau, dtype=float)
    out = np.empty(taus.shape, dtype=complex)
    for idx, tv in np.ndenumerate(taus):
        out[idx] = cardinal_weights(n, float(tv)) @ values.astype(complex)
    return out


def alpert_row(rule: AlpertRule, n: int, kernel_at, l: int) -> np.ndarray:
    """One discretized-operator row for a log-singular periodic integral.

    Approximates ``integral_0^1 kernel(t_l, t) density(t) dt`` as
    ``row @ density_at_nodes`` where nodes are ``t_j = j/n`` (period 1)
    and ``l`` is the 0-based index of the target node ``t_l = (l+1)/n``.

    Parameters
    ----------
    rule : AlpertRule
    n : int
        Node count (even).
    kernel_at : callable
        ``kernel_at(l, t_array) -> complex array`` evaluating the kernel
        with target node index ``l`` at source parameters ``t_array``
        (values in (0, 1], never equal to ``t_l``).
    l : int
        Target row index, 0-based.

    Raises
    ------
    MeshTooCoarseError
        If ``n`` is too small to hold the trapezoidal body.
    """
    if n < 2 * rule.body_offset + 1:
        raise MeshTooCoarseError(
            f"rule needs at least {2 * rule.body_offset + 1} nodes, got {n}"
        )
    h = 1.0 / n
    t_l = (l + 1) * h
    row = np.zeros(n, dtype=complex)

    # Trapezoidal body: offsets body_offset .. n - body_offset, wrapped.
    offsets = np.arange(rule.body_offset, n - rule.body_offset + 1)
    cols = (l + offsets) % n
    t_cols = (cols + 1) * h
    row[cols] += h * kernel_at(l, t_cols)

    # Endpoint corrections at t_l +/- delta_k h; the density there is
    # obtained by cardinal interpolation, so each correction scatters
    # into the whole row.
    for delta, gamma in zip(rule.nodes, rule.weights):
        for sign in (+1.0, -1.0):
            tau = t_l + sign * delta * h
            tau_mod = tau % 1.0
            if tau_mod == 0.0:
                tau_mod = 1.0
            val = complex(kernel_at(l, np.array([tau_mod]))[0])
            row += (gamma * h * val) * cardinal_weights(n, tau_mod)
    return row


_MAX_GAUSS = 64
_gauss_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1].

    Exact for polynomials of degree ``2n - 1``.  Supported orders are
    1..64; results are cached.
    """
    if not (1 <= n <= _MAX_GAUSS):
        raise ParameterError(f"gauss_legendre supports orders 1..{_MAX_GAUSS}, got {n}")
    if n not in _gauss_cache:
        x, w = np.polynomial.legendre.leggauss(n)
        _gauss_cache[n] = (0.5 * (x + 1.0), 0.5 * w)
    return _gauss_cache[n]
