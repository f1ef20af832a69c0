"""Boundary-integral solver for 2D time-harmonic scattering by a locally
perturbed interface between two homogeneous half-spaces.

The outgoing scattered field is damped by complex coordinate stretching
(a perfectly matched layer applied directly to the integral kernels), so
the interface can be truncated to a finite arc and discretized with a
high-order Nystrom scheme: graded meshes at corners, Alpert quadrature
for the logarithmic singularity, and stabilized near-corner kernel
evaluation.  Each half-space contributes a Neumann-to-Dirichlet matrix;
a small transmission system couples them (plus, optionally, a penetrable
obstacle above the interface).
"""

from __future__ import annotations

__version__ = "0.1.0"
