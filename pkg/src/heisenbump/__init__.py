"""Numerical toolkit for the CR Nirenberg problem on the Heisenberg group.

Subpackages by role:

    group       exact group algebra, gauge geometry, transforms, operators
    bubbles     the extremal bubble family, weights, constants, energy levels
    fields      quadrature over H^n (boxes, spheres, radial) and grid fields
    functional  subcritical energy, first variation, pointwise PDE residual
    multibump   bump superpositions, gradient flow, representation, ansatz
    audit       integral-identity checks with machine-readable reports
    cli         verify / solve / sweep entry points
"""

from .bubbles import BumpParams, Constants, bubble, constants, energy_level, \
    standard_bubble, weight_h
from .group import AffineMap, HPoint, ScalarField, compose, dilate, dist, \
    gauge_norm, inverse

__all__ = [
    "AffineMap", "BumpParams", "Constants", "HPoint", "ScalarField",
    "bubble", "compose", "constants", "dilate", "dist", "energy_level",
    "gauge_norm", "inverse", "standard_bubble", "weight_h",
]

__version__ = "0.1.0"
