"""Heisenberg group algebra, gauge geometry, transforms, and the
differential operators built from the left-invariant frame.

Points of H^n = C^n x R are real arrays [x_1..x_n, y_1..y_n, t] on the
trailing axis; z = x + iy is a view, never stored.  The group law

    (z, t) o (z^, t^) = (z + z^, t + t^ + 2*(y . x^ - x . y^))

carries the sign that makes the frame

    X_j = d/dx_j + 2 y_j d/dt,   Y_j = d/dy_j - 2 x_j d/dt,   T = d/dt

left-invariant: X_j(f o tau_a) = (X_j f) o tau_a for every a, where
tau_a(xi) = a o xi.  The homogeneous dimension is Q = 2n + 2; the gauge
|xi| = (|z|^4 + t^2)^(1/4) is 1-homogeneous under the anisotropic
dilation delta_lam(z, t) = (lam z, lam^2 t).

All operations are pure and vectorized over leading axes of the
coordinate arrays; nothing here holds mutable state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


def dim(n: int) -> int:
    """Coordinate dimension 2n + 1 of H^n."""
    return 2 * n + 1


def homogeneous_dimension(n: int) -> int:
    """Q = 2n + 2."""
    return 2 * n + 2


def infer_n(coords: np.ndarray) -> int:
    d = coords.shape[-1]
    if d < 3 or d % 2 == 0:
        raise ValueError(f"coordinate axis has length {d}, expected odd >= 3")
    return (d - 1) // 2


@dataclass(frozen=True)
class HPoint:
    """A point (x, y, t) of H^n; z = x + iy is exposed as a view."""

    x: np.ndarray
    y: np.ndarray
    t: float

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        object.__setattr__(self, "y", np.atleast_1d(np.asarray(self.y, dtype=float)))
        object.__setattr__(self, "t", float(self.t))
        if self.x.ndim != 1 or self.x.shape != self.y.shape:
            raise ValueError("x and y must be 1-d arrays of equal length")

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def z(self) -> np.ndarray:
        return self.x + 1j * self.y

    @property
    def coords(self) -> np.ndarray:
        return np.concatenate([self.x, self.y, [self.t]])

    @classmethod
    def from_coords(cls, coords) -> "HPoint":
        c = np.asarray(coords, dtype=float)
        n = infer_n(c)
        return cls(c[:n], c[n:2 * n], c[2 * n])

    @classmethod
    def origin(cls, n: int = 1) -> "HPoint":
        return cls(np.zeros(n), np.zeros(n), 0.0)


def as_coords(xi) -> np.ndarray:
    """Coordinate array of a point given as HPoint, tuple, list or ndarray."""
    if isinstance(xi, HPoint):
        return xi.coords
    return np.asarray(xi, dtype=float)


def _wrap_like(template, coords: np.ndarray):
    if isinstance(template, HPoint):
        return HPoint.from_coords(coords)
    return coords


def split(coords: np.ndarray):
    """Views (x, y, t) of a coordinate array; t loses the trailing axis."""
    n = infer_n(coords)
    return coords[..., :n], coords[..., n:2 * n], coords[..., 2 * n]


# ---------------------------------------------------------------------------
# group law, gauge, dilations

def compose(a, b):
    """Group product a o b.

    t-component t_a + t_b + 2*(y_a . x_b - x_a . y_b); the sign is pinned
    by left-invariance of the X_j / Y_j frame (module docstring).
    """
    ca, cb = as_coords(a), as_coords(b)
    xa, ya, ta = split(ca)
    xb, yb, tb = split(cb)
    t = ta + tb + 2.0 * (np.sum(ya * xb, axis=-1) - np.sum(xa * yb, axis=-1))
    xy = ca[..., :-1] + cb[..., :-1]
    out = np.concatenate([xy, t[..., None]], axis=-1)
    if isinstance(a, HPoint) and isinstance(b, HPoint):
        return HPoint.from_coords(out)
    return out


def inverse(xi):
    """Group inverse xi^{-1} = -xi componentwise."""
    return _wrap_like(xi, -as_coords(xi))


def dilate(lam: float, xi):
    """Anisotropic dilation delta_lam(z, t) = (lam z, lam^2 t); lam > 0."""
    lam = float(lam)
    if not lam > 0.0:
        raise ValueError(f"dilation parameter must be positive, got {lam}")
    c = np.array(as_coords(xi), dtype=float)
    c[..., :-1] *= lam
    c[..., -1] *= lam * lam
    return _wrap_like(xi, c)


def gauge_norm(xi):
    """Homogeneous gauge |xi| = (|z|^4 + t^2)^(1/4)."""
    x, y, t = split(as_coords(xi))
    zsq = np.sum(x * x + y * y, axis=-1)
    return (zsq * zsq + t * t) ** 0.25


def dist(a, b):
    """Left-invariant gauge distance d(a, b) = |b^{-1} o a|."""
    return gauge_norm(compose(inverse(b), a))


# ---------------------------------------------------------------------------
# conformal transforms

def cr_inversion(xi):
    """CR inversion on H^n minus the origin.

    xv = -(x t + y |z|^2)/|xi|^4,  yv = (y t - x |z|^2)/|xi|^4,
    tv = t/|xi|^4.  Involutive, with |inverted xi| = 1/|xi|.
    """
    c = as_coords(xi)
    x, y, t = split(c)
    zsq = np.sum(x * x + y * y, axis=-1)
    norm4 = zsq * zsq + t * t
    if np.any(norm4 == 0.0):
        raise ValueError("CR inversion is undefined at the origin")
    n4 = norm4[..., None]
    xv = -(x * t[..., None] + y * zsq[..., None]) / n4
    yv = (y * t[..., None] - x * zsq[..., None]) / n4
    tv = t / norm4
    return _wrap_like(xi, np.concatenate([xv, yv, tv[..., None]], axis=-1))


def cayley(xi) -> np.ndarray:
    """Cayley transform H^n -> S^{2n+1} subset C^{n+1} (misses the south pole).

    zeta = (2 z / w, (2 - w)/w) with w = 1 + |z|^2 + i t; |zeta| = 1 and
    the origin maps to the north pole (0, ..., 0, 1).
    """
    c = as_coords(xi)
    x, y, t = split(c)
    z = x + 1j * y
    zsq = np.sum(x * x + y * y, axis=-1)
    w = 1.0 + zsq + 1j * t
    return np.concatenate([2.0 * z / w[..., None], ((2.0 - w) / w)[..., None]],
                          axis=-1)


def cayley_inverse(zeta) -> np.ndarray:
    """Inverse Cayley transform; the south pole (0,...,0,-1) is rejected."""
    zt = np.asarray(zeta, dtype=complex)
    denom = 1.0 + zt[..., -1]
    if np.any(np.abs(denom) < 1e-14):
        raise ValueError("inverse Cayley transform is undefined at the south pole")
    z = zt[..., :-1] / denom[..., None]
    t = np.imag(2.0 / denom)
    return np.concatenate([z.real, z.imag, t[..., None]], axis=-1)


def cayley_jacobian(xi):
    """|J_C| = 2^(2n+1) / ((1 + |z|^2)^2 + t^2)^(n+1)."""
    c = as_coords(xi)
    n = infer_n(c)
    x, y, t = split(c)
    zsq = np.sum(x * x + y * y, axis=-1)
    return 2.0 ** (2 * n + 1) / ((1.0 + zsq) ** 2 + t * t) ** (n + 1)


# ---------------------------------------------------------------------------
# affine maps: translations and dilations are affine in (x, y, t), so
# closed-form fields and their derivatives push through one composition

@dataclass(frozen=True)
class AffineMap:
    """Affine map xi -> linear @ xi + shift on coordinate arrays."""

    linear: np.ndarray
    shift: np.ndarray

    @classmethod
    def identity(cls, n: int) -> "AffineMap":
        d = dim(n)
        return cls(np.eye(d), np.zeros(d))

    @classmethod
    def left_translation(cls, a) -> "AffineMap":
        """tau_a(xi) = a o xi."""
        ca = as_coords(a)
        n = infer_n(ca)
        lin = np.eye(dim(n))
        lin[-1, :n] = 2.0 * ca[n:2 * n]      # + 2 y_a . x
        lin[-1, n:2 * n] = -2.0 * ca[:n]     # - 2 x_a . y
        return cls(lin, ca.copy())

    @classmethod
    def dilation(cls, lam: float, n: int) -> "AffineMap":
        lam = float(lam)
        if not lam > 0.0:
            raise ValueError(f"dilation parameter must be positive, got {lam}")
        scale = np.full(dim(n), lam)
        scale[-1] = lam * lam
        return cls(np.diag(scale), np.zeros(dim(n)))

    def then(self, other: "AffineMap") -> "AffineMap":
        """Composite xi -> other(self(xi))."""
        return AffineMap(other.linear @ self.linear,
                         other.linear @ self.shift + other.shift)

    def inverse_map(self) -> "AffineMap":
        inv = np.linalg.inv(self.linear)
        return AffineMap(inv, -inv @ self.shift)

    def apply(self, pts) -> np.ndarray:
        return np.asarray(pts, dtype=float) @ self.linear.T + self.shift

    __call__ = apply


# ---------------------------------------------------------------------------
# scalar fields

@dataclass(frozen=True)
class ScalarField:
    """Scalar function on H^n with optional closed-form derivatives.

    value / gradient / hessian map coordinate arrays (..., 2n+1) to
    shapes (...), (..., 2n+1), (..., 2n+1, 2n+1).  Missing derivatives
    fall back to centered differences of step fd_step (hessian from
    values alone widens the step: second differences lose half the
    significant digits).  kind is "closed-form" or "grid-sampled".
    """

    value: Callable[[np.ndarray], np.ndarray]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    n: int = 1
    fd_step: float = 1e-5
    kind: str = "closed-form"

    def __call__(self, pts) -> np.ndarray:
        return self.value(as_coords(pts))

    def grad(self, pts) -> np.ndarray:
        c = as_coords(pts)
        if self.gradient is not None:
            return self.gradient(c)
        return _fd_gradient(self.value, c, self.fd_step)

    def hess(self, pts) -> np.ndarray:
        c = as_coords(pts)
        if self.hessian is not None:
            return self.hessian(c)
        if self.gradient is not None:
            return _fd_jacobian(self.gradient, c, self.fd_step)
        return _fd_hessian(self.value, c, max(self.fd_step, 3e-4))

    def compose_affine(self, amap: AffineMap, scale: float = 1.0) -> "ScalarField":
        """Field xi -> scale * f(amap(xi)) with exact chain-rule derivatives."""
        lin = amap.linear
        f = self

        def value(c):
            return scale * f.value(amap.apply(c))

        gradient = None
        if f.gradient is not None:
            def gradient(c):
                return scale * (f.gradient(amap.apply(c)) @ lin)

        hessian = None
        if f.hessian is not None:
            def hessian(c):
                return scale * np.einsum("ji,...jk,kl->...il",
                                         lin, f.hessian(amap.apply(c)), lin)

        return ScalarField(value, gradient, hessian,
                           n=f.n, fd_step=f.fd_step, kind=f.kind)

    def chain(self, fn, dfn=None, d2fn=None) -> "ScalarField":
        """Scalar post-composition fn(f) with chain-rule derivatives.

        dfn and d2fn are fn' and fn''; derivative closures are built only
        as far as both the outer derivatives and this field's own are
        available.
        """
        f = self

        def value(c):
            return fn(f.value(c))

        gradient = None
        if dfn is not None and f.gradient is not None:
            def gradient(c):
                return dfn(f.value(c))[..., None] * f.gradient(c)

        hessian = None
        if dfn is not None and d2fn is not None and f.gradient is not None \
                and f.hessian is not None:
            def hessian(c):
                v = f.value(c)
                g = f.gradient(c)
                outer = g[..., :, None] * g[..., None, :]
                return (d2fn(v)[..., None, None] * outer
                        + dfn(v)[..., None, None] * f.hessian(c))

        return ScalarField(value, gradient, hessian,
                           n=f.n, fd_step=f.fd_step, kind=f.kind)

    # pointwise algebra; derivative closures survive only when both
    # operands carry them, otherwise the finite-difference fallback applies
    def __add__(self, other):
        if isinstance(other, ScalarField):
            f, g = self, other
            grad = (lambda c: f.gradient(c) + g.gradient(c)) \
                if (f.gradient and g.gradient) else None
            hess = (lambda c: f.hessian(c) + g.hessian(c)) \
                if (f.hessian and g.hessian) else None
            return ScalarField(lambda c: f.value(c) + g.value(c), grad, hess,
                               n=f.n, fd_step=min(f.fd_step, g.fd_step))
        shift = float(other)
        f = self
        return ScalarField(lambda c: f.value(c) + shift, f.gradient, f.hessian,
                           n=f.n, fd_step=f.fd_step, kind=f.kind)

    __radd__ = __add__

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        return self + (-other if isinstance(other, ScalarField) else -float(other))

    def __mul__(self, other):
        f = self
        if isinstance(other, ScalarField):
            g = other
            grad = None
            hess = None
            if f.gradient and g.gradient:
                def grad(c):
                    return (f.value(c)[..., None] * g.gradient(c)
                            + g.value(c)[..., None] * f.gradient(c))
                if f.hessian and g.hessian:
                    def hess(c):
                        df, dg = f.gradient(c), g.gradient(c)
                        cross = df[..., :, None] * dg[..., None, :]
                        return (f.value(c)[..., None, None] * g.hessian(c)
                                + g.value(c)[..., None, None] * f.hessian(c)
                                + cross + np.swapaxes(cross, -1, -2))
            return ScalarField(lambda c: f.value(c) * g.value(c), grad, hess,
                               n=f.n, fd_step=min(f.fd_step, g.fd_step))
        s = float(other)
        grad = (lambda c: s * f.gradient(c)) if f.gradient else None
        hess = (lambda c: s * f.hessian(c)) if f.hessian else None
        return ScalarField(lambda c: s * f.value(c), grad, hess,
                           n=f.n, fd_step=f.fd_step, kind=f.kind)

    __rmul__ = __mul__


def constant_field(c: float, n: int = 1) -> ScalarField:
    c = float(c)
    d = dim(n)
    return ScalarField(
        value=lambda pts: np.full(pts.shape[:-1], c),
        gradient=lambda pts: np.zeros(pts.shape),
        hessian=lambda pts: np.zeros(pts.shape[:-1] + (d, d)),
        n=n)


def _fd_gradient(value, c, h):
    d = c.shape[-1]
    out = np.empty(c.shape, dtype=float)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        out[..., i] = (value(c + e) - value(c - e)) / (2.0 * h)
    return out


def _fd_jacobian(gradient, c, h):
    d = c.shape[-1]
    out = np.empty(c.shape + (d,), dtype=float)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        out[..., i, :] = (gradient(c + e) - gradient(c - e)) / (2.0 * h)
    # mixed partials commute for the C^2 fields handled here
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def _fd_hessian(value, c, h):
    d = c.shape[-1]
    f0 = value(c)
    out = np.empty(c.shape + (d,), dtype=float)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h
        out[..., i, i] = (value(c + ei) - 2.0 * f0 + value(c - ei)) / (h * h)
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h
            fij = (value(c + ei + ej) - value(c + ei - ej)
                   - value(c - ei + ej) + value(c - ei - ej)) / (4.0 * h * h)
            out[..., i, j] = fij
            out[..., j, i] = fij
    return out


# ---------------------------------------------------------------------------
# left-invariant derivatives and second-order operators

def left_invariant_derivatives(f: ScalarField, xi):
    """(Xf, Yf, Tf): X_j f = f_xj + 2 y_j f_t, Y_j f = f_yj - 2 x_j f_t, Tf = f_t."""
    c = as_coords(xi)
    n = infer_n(c)
    g = f.grad(c)
    x, y, _ = split(c)
    gt = g[..., -1]
    xf = g[..., :n] + 2.0 * y * gt[..., None]
    yf = g[..., n:2 * n] - 2.0 * x * gt[..., None]
    return xf, yf, gt


def horizontal_gradient(f: ScalarField, xi) -> np.ndarray:
    """(X_1..X_n, Y_1..Y_n) f, length 2n on the trailing axis."""
    xf, yf, _ = left_invariant_derivatives(f, xi)
    return np.concatenate([xf, yf], axis=-1)


def sub_laplacian(f: ScalarField, xi):
    """Delta_H f = sum_j (X_j^2 + Y_j^2) f via the Cartesian Hessian.

    First-order terms cancel for C^2 fields, leaving
    tr_xy Hess + 4 sum_j (y_j f_{x_j t} - x_j f_{y_j t}) + 4 |z|^2 f_tt.
    """
    c = as_coords(xi)
    n = infer_n(c)
    H = f.hess(c)
    x, y, _ = split(c)
    zsq = np.sum(x * x + y * y, axis=-1)
    lap_xy = np.trace(H[..., :2 * n, :2 * n], axis1=-2, axis2=-1)
    mixed = (np.sum(y * H[..., :n, -1], axis=-1)
             - np.sum(x * H[..., n:2 * n, -1], axis=-1))
    return lap_xy + 4.0 * mixed + 4.0 * zsq * H[..., -1, -1]


def a_matrix(xi) -> np.ndarray:
    """Symmetric coefficient matrix A with Delta_H = div(A grad).

    Blocks [[I, 0, 2y], [0, I, -2x], [2y, -2x, 4|z|^2]]; each column is
    divergence-free, which is what makes the two code paths below agree.
    """
    c = as_coords(xi)
    n = infer_n(c)
    d = dim(n)
    x, y, _ = split(c)
    zsq = np.sum(x * x + y * y, axis=-1)
    A = np.zeros(c.shape[:-1] + (d, d))
    diag = np.arange(2 * n)
    A[..., diag, diag] = 1.0
    A[..., :n, -1] = 2.0 * y
    A[..., -1, :n] = 2.0 * y
    A[..., n:2 * n, -1] = -2.0 * x
    A[..., -1, n:2 * n] = -2.0 * x
    A[..., -1, -1] = 4.0 * zsq
    return A


def a_matrix_apply(xi, v) -> np.ndarray:
    """A(xi) @ v without forming A."""
    c = as_coords(xi)
    n = infer_n(c)
    v = np.asarray(v, dtype=float)
    x, y, _ = split(c)
    zsq = np.sum(x * x + y * y, axis=-1)
    vx, vy, vt = v[..., :n], v[..., n:2 * n], v[..., -1]
    ox = vx + 2.0 * y * vt[..., None]
    oy = vy - 2.0 * x * vt[..., None]
    ot = (2.0 * np.sum(y * vx, axis=-1) - 2.0 * np.sum(x * vy, axis=-1)
          + 4.0 * zsq * vt)
    return np.concatenate([ox, oy, ot[..., None]], axis=-1)


def sub_laplacian_div_form(f: ScalarField, xi, step: float = 1e-4):
    """div(A grad f) by centered differences of the flux A grad f.

    Deliberately independent of the Hessian contraction in sub_laplacian;
    the two agree to O(step^2) on smooth fields.
    """
    c = as_coords(xi)
    d = c.shape[-1]
    total = 0.0
    for i in range(d):
        e = np.zeros(d)
        e[i] = step
        gp = a_matrix_apply(c + e, f.grad(c + e))[..., i]
        gm = a_matrix_apply(c - e, f.grad(c - e))[..., i]
        total = total + (gp - gm) / (2.0 * step)
    return total


# ---------------------------------------------------------------------------
# dilation generators

def dilation_generator(f: ScalarField, xi):
    """Generator of lam -> f(delta_lam xi) at lam = 1: x.f_x + y.f_y + 2t f_t."""
    c = as_coords(xi)
    g = f.grad(c)
    coeff = np.array(c, dtype=float)
    coeff[..., -1] *= 2.0
    return np.sum(coeff * g, axis=-1)


def centered_dilation_coefficients(xi, center) -> np.ndarray:
    """Coefficient vector of the dilation generator conjugated to a center.

    Differentiating lam -> xi0 o delta_lam(xi0^{-1} o xi) at lam = 1 gives
    (x - x0, y - y0) in the horizontal slots and
    2*(t - t0 + (x0 . y - y0 . x)) in the t slot.  Applied to the gauge
    distance from xi0 it returns that distance: the homogeneity oracle.
    """
    c = as_coords(xi)
    c0 = as_coords(center)
    x, y, _ = split(c)
    x0, y0, _ = split(c0)
    twist = np.sum(x0 * y, axis=-1) - np.sum(y0 * x, axis=-1)
    out = np.array(c - c0, dtype=float)
    out[..., -1] = 2.0 * (out[..., -1] + twist)
    return out


def centered_dilation_generator(f: ScalarField, xi, center):
    """Conjugated dilation generator applied to f at xi."""
    c = as_coords(xi)
    return np.sum(centered_dilation_coefficients(c, center) * f.grad(c), axis=-1)


# ---------------------------------------------------------------------------
# derivative fields: same operators, but returning ScalarField values so
# the results can be integrated, composed with affine maps, or differentiated
# once more (their gradients consume the parent's hessian)

def left_invariant_derivative_field(f: ScalarField, index: int) -> ScalarField:
    """X_j f for index j < n, Y_j f for n <= index < 2n, Tf for index = 2n."""
    n = f.n
    d = dim(n)
    if not 0 <= index < d:
        raise ValueError(f"derivative index {index} out of range for n={n}")
    if f.gradient is None:
        raise ValueError("derivative fields need a closed-form gradient")

    if index == 2 * n:
        def value(c):
            return f.gradient(c)[..., -1]

        grad = None
        if f.hessian is not None:
            def grad(c):
                return f.hessian(c)[..., -1, :]
    elif index < n:
        j = index

        def value(c):
            g = f.gradient(c)
            return g[..., j] + 2.0 * c[..., n + j] * g[..., -1]

        grad = None
        if f.hessian is not None:
            def grad(c):
                H = f.hessian(c)
                row = H[..., j, :] + 2.0 * c[..., n + j, None] * H[..., -1, :]
                row = np.array(row)
                row[..., n + j] += 2.0 * f.gradient(c)[..., -1]
                return row
    else:
        j = index - n

        def value(c):
            g = f.gradient(c)
            return g[..., n + j] - 2.0 * c[..., j] * g[..., -1]

        grad = None
        if f.hessian is not None:
            def grad(c):
                H = f.hessian(c)
                row = H[..., n + j, :] - 2.0 * c[..., j, None] * H[..., -1, :]
                row = np.array(row)
                row[..., j] -= 2.0 * f.gradient(c)[..., -1]
                return row

    return ScalarField(value, grad, None, n=n, fd_step=f.fd_step)


def right_invariant_derivative_field(f: ScalarField, index: int) -> ScalarField:
    """The right-invariant mirror of the frame: tilde X_j = d/dx_j - 2y_j T,
    tilde Y_j = d/dy_j + 2x_j T, and T again at index 2n.

    These generate left translations, so they are the derivatives of a
    field with respect to motion of its translation center.
    """
    n = f.n
    d = dim(n)
    if not 0 <= index < d:
        raise ValueError(f"derivative index {index} out of range for n={n}")
    if f.gradient is None:
        raise ValueError("derivative fields need a closed-form gradient")

    if index == 2 * n:
        return left_invariant_derivative_field(f, index)

    if index < n:
        j, other, sign = index, n + index, -2.0
    else:
        j, other, sign = index, index - n, 2.0

    def value(c):
        g = f.gradient(c)
        return g[..., j] + sign * c[..., other] * g[..., -1]

    grad = None
    if f.hessian is not None:
        def grad(c):
            H = f.hessian(c)
            row = H[..., j, :] + sign * c[..., other, None] * H[..., -1, :]
            row = np.array(row)
            row[..., other] += sign * f.gradient(c)[..., -1]
            return row

    return ScalarField(value, grad, None, n=n, fd_step=f.fd_step)


def dilation_generator_field(f: ScalarField) -> ScalarField:
    """x.f_x + y.f_y + 2t f_t as a field, gradient by one more chain rule."""
    if f.gradient is None:
        raise ValueError("derivative fields need a closed-form gradient")
    n = f.n

    def value(c):
        g = f.gradient(c)
        coeff = np.array(c, dtype=float)
        coeff[..., -1] *= 2.0
        return np.sum(coeff * g, axis=-1)

    grad = None
    if f.hessian is not None:
        def grad(c):
            g = f.gradient(c)
            H = f.hessian(c)
            coeff = np.array(c, dtype=float)
            coeff[..., -1] *= 2.0
            out = np.einsum("...j,...ji->...i", coeff, H)
            out = np.array(out)
            out[..., :-1] += g[..., :-1]
            out[..., -1] += 2.0 * g[..., -1]
            return out

    return ScalarField(value, grad, None, n=n, fd_step=f.fd_step)
