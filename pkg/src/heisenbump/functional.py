"""Subcritical energy functional and its first variation.

The variational problem is

    I(u) = 1/2 int |grad_H u|^2 - 1/(q - tau) int R H^tau |u|^(q - tau)

over H^n, with q = Q* = 2Q/(Q-2) and the subcritical power
p = (Q+2)/(Q-2) - tau.  Critical points solve

    -Delta_H u = R H^tau |u|^(p-1) u,

where H is the conformal weight of the sphere pullback.  tau = 0 is the
critical case; tau > 0 compactifies the problem, and the solver walks
tau down to zero.  Powers of u are signed (|u|^(p-1) u) throughout, so
sign-changing iterates need no clipping.

Scaling operators: translate_field realizes the isometry
T_a u = u(a o .), and rescale_field realizes

    (T_{lam,xi} u)(eta) = lam^(2/(1-p)) u(xi o delta_{1/lam}(eta)),

which at tau = 0 has exponent (2-Q)/2 and preserves the gradient norm
exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .group import AffineMap, ScalarField, as_coords, inverse, sub_laplacian
from .bubbles import constants, weight_field
from .fields import GridSpec, grad_inner, integrate


@dataclass(frozen=True)
class SubcriticalExponent:
    """tau in [0, 2/(Q-2)] and the matching power p = (Q+2)/(Q-2) - tau."""

    tau: float
    p: float

    def __post_init__(self):
        if self.tau < 0.0:
            raise ValueError(f"tau = {self.tau} must be nonnegative")
        if self.p <= 1.0:
            raise ValueError(f"subcritical power p = {self.p} must exceed 1")


def subcritical_exponent(tau: float, n: int = 1) -> SubcriticalExponent:
    Q = 2 * n + 2
    if not 0.0 <= tau <= 2.0 / (Q - 2):
        raise ValueError(f"tau = {tau} outside [0, {2.0 / (Q - 2)}]")
    return SubcriticalExponent(tau=float(tau),
                               p=(Q + 2.0) / (Q - 2.0) - float(tau))


@dataclass(frozen=True)
class EnergyBreakdown:
    """Kinetic and potential halves of I; total = kinetic - potential."""

    kinetic: float
    potential: float

    @property
    def total(self) -> float:
        return self.kinetic - self.potential


def signed_power(values: np.ndarray, p: float) -> np.ndarray:
    """|v|^(p-1) v, the odd power used in all nonlinear terms."""
    v = np.asarray(values, dtype=float)
    return np.sign(v) * np.abs(v) ** p


def curvature_field(R, n: int = 1) -> ScalarField:
    """Coerce a prescribed-curvature argument to a ScalarField.

    Accepts an RSpec-like object (anything with a `field` attribute), a
    ScalarField, a bare callable of coordinates, or a constant.
    """
    if hasattr(R, "field"):
        return R.field
    if isinstance(R, ScalarField):
        return R
    if callable(R):
        return ScalarField(R, n=n)
    value = float(R)
    return ScalarField(lambda c: np.full(c.shape[:-1], value),
                       gradient=lambda c: np.zeros(c.shape),
                       hessian=lambda c: np.zeros(c.shape + (c.shape[-1],)),
                       n=n)


def _potential_integrand(u, R, exp: SubcriticalExponent, n: int):
    Rf = curvature_field(R, n)
    H = weight_field(constants(n))
    q = constants(n).Qstar - exp.tau

    def f(pts):
        w = H(pts) ** exp.tau if exp.tau != 0.0 else 1.0
        return Rf(pts) * w * np.abs(u(pts)) ** q
    return f, q


def energy(u: ScalarField, R, exp: SubcriticalExponent, spec: GridSpec,
           tail_center=None, tail_scale: float = 1.0) -> EnergyBreakdown:
    """I(u) split into its kinetic and potential parts.

    Both integrals get analytic tails: the gradient pairing decays like
    2(Q-1) with the gradient profile, and R H^tau |u|^(q-tau) decays
    like (Q-2) Q* for every tau (the H^tau factor exactly cancels the
    -tau in the exponent of |u|), with the bubble profile.  tail_center
    and tail_scale anchor both references on a dominant bump.
    """
    cst = constants(spec.n)
    kinetic = 0.5 * grad_inner(u, u, spec, tail_center=tail_center,
                               tail_scale=tail_scale)
    f, q = _potential_integrand(u, R, exp, spec.n)
    pot = integrate(f, spec, tail_exponent=(cst.Q - 2.0) * cst.Qstar,
                    tail_shape="bubble", tail_center=tail_center,
                    tail_scale=tail_scale)
    return EnergyBreakdown(kinetic=kinetic, potential=pot.value / q)


def first_variation(u: ScalarField, R, exp: SubcriticalExponent,
                    spec: GridSpec, direction: ScalarField,
                    tail_center=None, tail_scale: float = 1.0) -> float:
    """I'(u) applied to one test direction.

    int grad_H u . grad_H phi - int R H^tau |u|^(p-1) u phi.
    """
    cst = constants(spec.n)
    pairing = grad_inner(u, direction, spec, tail_center=tail_center,
                         tail_scale=tail_scale)
    Rf = curvature_field(R, spec.n)
    H = weight_field(cst)

    def f(pts):
        w = H(pts) ** exp.tau if exp.tau != 0.0 else 1.0
        return Rf(pts) * w * signed_power(u(pts), exp.p) * direction(pts)

    nonlinear = integrate(f, spec, tail_exponent=(cst.Q - 2.0) * cst.Qstar,
                          tail_shape="bubble", tail_center=tail_center,
                          tail_scale=tail_scale)
    return pairing - nonlinear.value


def pde_residual(u: ScalarField, R, exp: SubcriticalExponent, at) -> np.ndarray:
    """-Delta_H u - R H^tau |u|^(p-1) u at the given points."""
    pts = as_coords(at)
    n = (pts.shape[-1] - 1) // 2
    Rf = curvature_field(R, n)
    H = weight_field(constants(n))
    w = H(pts) ** exp.tau if exp.tau != 0.0 else 1.0
    return (-sub_laplacian(u, pts)
            - Rf(pts) * w * signed_power(u(pts), exp.p))


def translate_field(a, u: ScalarField) -> ScalarField:
    """T_a u = u(a o .), the left-translation isometry."""
    return u.compose_affine(AffineMap.left_translation(as_coords(a)), 1.0)


def rescale_field(lam: float, xi, exp: SubcriticalExponent,
                  u: ScalarField) -> ScalarField:
    """lam^(2/(1-p)) u(xi o delta_{1/lam}(.)); isometric at tau = 0."""
    if lam <= 0.0:
        raise ValueError("rescale factor must be positive")
    e = 2.0 / (1.0 - exp.p)
    amap = AffineMap.dilation(1.0 / lam, n=(as_coords(xi).shape[-1] - 1) // 2
                              ).then(AffineMap.left_translation(as_coords(xi)))
    return u.compose_affine(amap, lam ** e)


def inverse_rescale_field(lam: float, xi, exp: SubcriticalExponent,
                          u: ScalarField) -> ScalarField:
    """Exact inverse of rescale_field with the same (lam, xi, exp)."""
    if lam <= 0.0:
        raise ValueError("rescale factor must be positive")
    e = 2.0 / (1.0 - exp.p)
    c = as_coords(xi)
    amap = AffineMap.left_translation(inverse(c)).then(
        AffineMap.dilation(lam, n=(c.shape[-1] - 1) // 2))
    return u.compose_affine(amap, lam ** (-e))
