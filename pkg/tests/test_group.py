"""Group algebra, transforms, and differential operators.

Exactness bars: group identities to a few ulp, closed-form derivative
identities to 1e-8 against independent finite differences, transform
involutions and sphere constraints to rounding.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heisenbump import group
from heisenbump.group import (AffineMap, HPoint, ScalarField, a_matrix,
                              a_matrix_apply, as_coords, cayley,
                              cayley_inverse, cayley_jacobian, compose,
                              constant_field, cr_inversion, dilate,
                              dilation_generator, dilation_generator_field,
                              dist, gauge_norm, horizontal_gradient, inverse,
                              left_invariant_derivative_field,
                              left_invariant_derivatives, sub_laplacian,
                              sub_laplacian_div_form)

RNG = np.random.default_rng(42)


def random_points(count, n=1, scale=3.0, rng=RNG):
    return rng.uniform(-scale, scale, size=(count, 2 * n + 1))


def ulp_close(a, b, ulps=8, scale=None):
    """|a - b| within `ulps` last-place units of the working magnitude.

    scale defaults to the larger operand; pass the magnitude of the
    terms entering a cancelling sum when the result itself is small.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if scale is None:
        scale = np.maximum(np.abs(a), np.abs(b))
    tol = ulps * np.spacing(np.asarray(scale, dtype=float))
    return np.all(np.abs(a - b) <= np.maximum(tol, ulps * np.finfo(float).tiny))


def t_term_scale(*factors):
    # magnitude of the largest product feeding the twisted t sum
    mags = [np.max(np.abs(np.asarray(f)), axis=-1, keepdims=True)
            for f in factors]
    total = sum(mags)
    return total + 2.0 * sum(m1 * m2 for i, m1 in enumerate(mags)
                             for m2 in mags[i + 1:])


def smooth_test_field(n=1):
    # polynomial-times-gaussian profile with closed-form gradient
    def value(c):
        q = np.sum(c * c, axis=-1)
        return (1.0 + c[..., 0] + 0.5 * c[..., -1]) * np.exp(-0.25 * q)

    def gradient(c):
        q = np.sum(c * c, axis=-1)
        base = 1.0 + c[..., 0] + 0.5 * c[..., -1]
        e = np.exp(-0.25 * q)
        g = -0.5 * c * (base * e)[..., None]
        g[..., 0] += e
        g[..., -1] += 0.5 * e
        return g

    return ScalarField(value, gradient, n=n)


# ---------------------------------------------------------------- group law

def test_compose_identity_and_inverse():
    pts = random_points(100)
    origin = np.zeros(3)
    assert ulp_close(compose(origin, pts), pts, 0)
    scale = t_term_scale(pts, pts)
    assert ulp_close(compose(pts, inverse(pts)), np.zeros_like(pts), 4,
                     scale=scale)
    assert ulp_close(compose(inverse(pts), pts), np.zeros_like(pts), 4,
                     scale=scale)


def test_compose_convention_example():
    assert np.allclose(compose((1.0, 0.0, 0.0), (0.0, 1.0, 0.0)),
                       (1.0, 1.0, -2.0), atol=0)


def test_inverse_examples():
    assert np.all(inverse(np.zeros(3)) == np.zeros(3))
    assert np.all(inverse((1.0, 2.0, 3.0)) == (-1.0, -2.0, -3.0))


def test_associativity_random_triples():
    a, b, c = (random_points(1000) for _ in range(3))
    left = compose(compose(a, b), c)
    right = compose(a, compose(b, c))
    assert ulp_close(left, right, 8, scale=t_term_scale(a, b, c))


@given(st.lists(st.floats(-10, 10), min_size=9, max_size=9))
@settings(max_examples=200, deadline=None)
def test_group_axioms_property(vals):
    a, b, c = (np.array(vals[3 * i:3 * i + 3]) for i in range(3))
    assert ulp_close(compose(compose(a, b), c), compose(a, compose(b, c)), 8,
                     scale=t_term_scale(a, b, c))
    assert ulp_close(compose(a, inverse(a)), np.zeros(3), 4,
                     scale=t_term_scale(a, a))


def test_left_invariance_fixes_group_law_sign():
    # the convention is the one that makes X_j, Y_j, T left-invariant
    f = smooth_test_field()
    a = np.array([0.7, -1.2, 0.5])
    shifted = f.compose_affine(AffineMap.left_translation(a))
    pts = random_points(50, scale=2.0)
    xf, yf, tf = left_invariant_derivatives(shifted, pts)
    xe, ye, te = left_invariant_derivatives(f, compose(a, pts))
    assert np.allclose(xf, xe, rtol=1e-8, atol=1e-12)
    assert np.allclose(yf, ye, rtol=1e-8, atol=1e-12)
    assert np.allclose(tf, te, rtol=1e-8, atol=1e-12)


# ------------------------------------------------------- gauge and dilation

def test_gauge_norm_examples():
    assert gauge_norm((1.0, 0.0, 0.0)) == 1.0
    assert gauge_norm((0.0, 0.0, 4.0)) == 2.0
    assert np.all(dilate(2.0, (1.0, 0.0, 1.0)) == (2.0, 0.0, 4.0))


def test_gauge_norm_homogeneous_under_dilation():
    pts = random_points(200)
    for lam in (0.3, 2.0, 7.5):
        assert np.allclose(gauge_norm(dilate(lam, pts)),
                           lam * gauge_norm(pts), rtol=1e-14)


def test_dilate_rejects_nonpositive():
    with pytest.raises(ValueError):
        dilate(0.0, (1.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        dilate(-1.0, (1.0, 0.0, 0.0))


def test_dist_left_invariant():
    a, b, g = (random_points(100) for _ in range(3))
    assert np.allclose(dist(compose(g, a), compose(g, b)), dist(a, b),
                       rtol=1e-12, atol=1e-12)


# ------------------------------------------------------------- cr inversion

def test_cr_inversion_examples():
    assert np.allclose(cr_inversion((0.0, 0.0, 1.0)), (0.0, 0.0, 1.0),
                       atol=1e-15)
    assert np.allclose(cr_inversion((0.0, 0.0, 4.0)), (0.0, 0.0, 0.25),
                       atol=1e-15)


def test_cr_inversion_involution_and_norm():
    pts = random_points(100)
    pts = pts[gauge_norm(pts) > 1e-3]
    back = cr_inversion(cr_inversion(pts))
    # each output coordinate mixes all inputs, so the rounding scale is
    # the point's homogeneous size: |xi| for x, y and |xi|^2 for t
    gn = gauge_norm(pts)
    scale = np.stack([gn, gn, gn ** 2], axis=-1)
    assert ulp_close(back, pts, 8, scale=np.maximum(scale, np.abs(pts)))
    assert np.allclose(gauge_norm(cr_inversion(pts)), 1.0 / gauge_norm(pts),
                       rtol=1e-12)


def test_cr_inversion_rejects_origin():
    with pytest.raises(ValueError):
        cr_inversion(np.zeros(3))


# ------------------------------------------------------------------- cayley

def test_cayley_north_pole_and_jacobian():
    z = cayley(np.zeros(3))
    assert np.allclose(z, np.array([0.0, 1.0], dtype=complex), atol=0)
    assert cayley_jacobian(np.zeros(3)) == pytest.approx(8.0, rel=1e-15)


def test_cayley_on_sphere_and_round_trip():
    pts = random_points(100)
    z = cayley(pts)
    assert np.max(np.abs(np.sum(np.abs(z) ** 2, axis=-1) - 1.0)) < 1e-12
    assert np.allclose(cayley_inverse(z), pts, rtol=1e-10, atol=1e-10)


def test_cayley_inverse_rejects_south_pole():
    south = np.array([0.0, -1.0], dtype=complex)
    with pytest.raises(ValueError):
        cayley_inverse(south)


# ------------------------------------------------- differential operators

def test_left_invariant_derivatives_of_t():
    f = ScalarField(lambda c: c[..., -1].copy(),
                    lambda c: np.concatenate(
                        [np.zeros_like(c[..., :-1]),
                         np.ones_like(c[..., -1:])], axis=-1), n=1)
    pts = random_points(20)
    xf, yf, tf = left_invariant_derivatives(f, pts)
    assert np.allclose(xf[..., 0], 2.0 * pts[..., 1], rtol=1e-14)
    assert np.allclose(yf[..., 0], -2.0 * pts[..., 0], rtol=1e-14)
    assert np.allclose(tf, 1.0, rtol=1e-14)


def test_sub_laplacian_of_x_squared():
    f = ScalarField(lambda c: c[..., 0] ** 2,
                    lambda c: np.stack(
                        [2.0 * c[..., 0], np.zeros_like(c[..., 0]),
                         np.zeros_like(c[..., 0])], axis=-1), n=1)
    pts = random_points(20)
    assert np.allclose(sub_laplacian(f, pts), 2.0, atol=1e-9)


def test_fd_gradient_fallback_matches_closed_form():
    f = smooth_test_field()
    fd_only = ScalarField(f.value, n=1)
    pts = random_points(30, scale=2.0)
    assert np.allclose(fd_only.grad(pts), f.grad(pts), rtol=1e-6, atol=1e-8)


def polynomial_test_field(n=1):
    # f = x^2 y + x t + t^2 with exact derivatives
    def value(c):
        x, y, t = c[..., 0], c[..., 1], c[..., 2]
        return x * x * y + x * t + t * t

    def gradient(c):
        x, y, t = c[..., 0], c[..., 1], c[..., 2]
        return np.stack([2.0 * x * y + t, x * x, x + 2.0 * t], axis=-1)

    def hessian(c):
        x, y, t = c[..., 0], c[..., 1], c[..., 2]
        one = np.ones_like(x)
        zero = np.zeros_like(x)
        return np.stack([
            np.stack([2.0 * y, 2.0 * x, one], axis=-1),
            np.stack([2.0 * x, zero, zero], axis=-1),
            np.stack([one, zero, 2.0 * one], axis=-1)], axis=-2)

    return ScalarField(value, gradient, hessian, n=n)


def test_sub_laplacian_dilation_homogeneity():
    # Delta_H(f o delta_lam)(xi) = lam^2 (Delta_H f)(delta_lam xi)
    f = polynomial_test_field()
    lam = 1.7
    scaled = f.compose_affine(AffineMap.dilation(lam, 1))
    pts = random_points(30, scale=1.5)
    lhs = sub_laplacian(scaled, pts)
    rhs = lam ** 2 * sub_laplacian(f, dilate(lam, pts))
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_dilation_generator_homogeneity():
    # |xi|^4 = |z|^4 + t^2 is homogeneous of degree 4 under delta_lam
    def value(c):
        z2 = c[..., 0] ** 2 + c[..., 1] ** 2
        return z2 ** 2 + c[..., 2] ** 2

    def gradient(c):
        z2 = c[..., 0] ** 2 + c[..., 1] ** 2
        return np.stack([4.0 * z2 * c[..., 0], 4.0 * z2 * c[..., 1],
                         2.0 * c[..., 2]], axis=-1)

    f = ScalarField(value, gradient, n=1)
    pts = random_points(50)
    assert np.allclose(dilation_generator(f, pts), 4.0 * value(pts),
                       rtol=1e-13)
    gen = dilation_generator_field(f)
    assert np.allclose(gen(pts), 4.0 * value(pts), rtol=1e-13)


def test_a_matrix_at_origin():
    A = a_matrix(np.zeros(3))
    expected = np.diag([1.0, 1.0, 0.0])
    assert np.allclose(A, expected, atol=0)
    v = np.array([1.0, 2.0, 3.0])
    assert np.allclose(a_matrix_apply(np.zeros(3), v), expected @ v, atol=0)


def test_a_matrix_quadratic_form_is_horizontal_energy():
    # grad u . A grad u = |grad_H u|^2: A = M^T M for the horizontal frame
    f = smooth_test_field()
    pts = random_points(30, scale=2.0)
    g = f.grad(pts)
    quad = np.einsum("pi,pi->p", g, a_matrix_apply(pts, g))
    hg = horizontal_gradient(f, pts)
    assert np.allclose(quad, np.sum(hg * hg, axis=-1), rtol=1e-12)


def test_divergence_form_matches_sub_laplacian():
    f = smooth_test_field()
    pts = random_points(20, scale=2.0)
    div = sub_laplacian_div_form(f, pts)
    assert np.allclose(div, sub_laplacian(f, pts), atol=1e-8)


def test_left_invariant_derivative_field_consistency():
    f = smooth_test_field()
    pts = random_points(20, scale=2.0)
    xf, yf, tf = left_invariant_derivatives(f, pts)
    assert np.allclose(left_invariant_derivative_field(f, 0)(pts),
                       xf[..., 0], rtol=1e-12)
    assert np.allclose(left_invariant_derivative_field(f, 1)(pts),
                       yf[..., 0], rtol=1e-12)
    assert np.allclose(left_invariant_derivative_field(f, 2)(pts),
                       tf, rtol=1e-12)


# --------------------------------------------------------------- structure

def test_hpoint_views():
    p = HPoint.from_coords((1.0, 2.0, 3.0))
    assert p.n == 1
    assert np.all(p.z == np.array([1.0 + 2.0j]))
    assert np.all(HPoint.origin(1).coords == np.zeros(3))


def test_coordinate_length_validation():
    with pytest.raises(ValueError):
        group.infer_n(np.zeros(2))
    with pytest.raises(ValueError):
        HPoint.from_coords((1.0, 2.0))
    assert np.all(as_coords((1.0, 2.0, 3.0)) == np.array([1.0, 2.0, 3.0]))


def test_compose_preserves_hpoint_type():
    a = HPoint.from_coords((1.0, 0.0, 0.0))
    b = HPoint.from_coords((0.0, 1.0, 0.0))
    out = compose(a, b)
    assert isinstance(out, HPoint)
    assert np.allclose(out.coords, (1.0, 1.0, -2.0))


def test_affine_map_algebra():
    a = np.array([0.3, -0.7, 1.1])
    amap = AffineMap.left_translation(a).then(AffineMap.dilation(2.0, 1))
    pts = random_points(20)
    expected = dilate(2.0, compose(a, pts))
    assert np.allclose(amap.apply(pts), expected, rtol=1e-14)
    back = amap.inverse_map().apply(amap.apply(pts))
    assert np.allclose(back, pts, rtol=1e-12, atol=1e-12)


def test_constant_field_has_zero_derivatives():
    f = constant_field(3.5)
    pts = random_points(5)
    assert np.all(f(pts) == 3.5)
    assert np.all(f.grad(pts) == 0.0)
    assert np.all(sub_laplacian(f, pts) == 0.0)
