"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 2,
solver/oracle failures with 3, acceptance failures with 4.
"""

from __future__ import annotations

__all__ = [
    "PmlbieError",
    "ConfigurationError",
    "ParameterError",
    "SolverError",
    "OracleError",
    "NearBoundaryError",
    "UnsupportedRegionError",
    "UnsupportedIncidenceError",
    "MeshTooCoarseError",
]


class PmlbieError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(PmlbieError):
    """Invalid user-supplied configuration (geometry, media, run setup)."""


class ParameterError(ConfigurationError):
    """Invalid parameter passed to a library routine."""


class MeshTooCoarseError(ParameterError):
    """Mesh has too few nodes for the quadrature rule."""


class SolverError(PmlbieError):
    """Numerical failure inside a solve (singular system, bad conditioning)."""


class NearBoundaryError(SolverError):
    """Field evaluation requested too close to a boundary mesh."""


class UnsupportedRegionError(SolverError):
    """Field evaluation requested inside the absorbing layer."""


class UnsupportedIncidenceError(ConfigurationError):
    """Incidence type not supported for the given geometry or parameters."""


class OracleError(PmlbieError):
    """Reference-solution machinery failed to converge to its tolerance."""
