"""Multi-bump ansatz, neighborhood tests, and the descent solver.

States near a sum of k separated concentrated bubbles are parameterized
by k(2n+3) numbers (alpha_i, xi_i, lambda_i) plus a small correction v.
The tangent frame at each bump is

    w/alpha,  X_j w,  Y_j w,  T w,  lam d/dlam w,

whose inner products (in the gradient pairing) form the Gram metric of
the parameter manifold.  Orthogonality of v to this frame is the
optimality certificate of the representation.

The solver is a projected line-search descent: amplitudes are pinned to
the per-bump Nehari conditions dI/dalpha_i = 0 at every step (the
amplitude direction of a mountain-pass point repels plain descent, and
on the Nehari slice the multi-bump level is a constrained minimum), and
the remaining center/scale parameters move along the Gram-preconditioned
negative gradient with halving line search.  At tau > 0 the conformal
weight H^tau makes the concentration scale equilibrate at a finite
lambda; at tau = 0 curvature maxima pull lambda upward until the
gradient tolerance is met, which is the desk-scale shadow of blow-up
along the subcritical continuation.

Quadrature for all flow inner products lives on per-bump covariant
grids: a fixed box in each bump frame, mapped by a o delta_{1/lam},
with scaled-gauge Voronoi masks to avoid double counting.  The node set
moves with the bumps, so translating the whole problem translates every
intermediate quantity exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import cached_property

import numpy as np
from scipy import ndimage

from . import group
from .group import (AffineMap, ScalarField, as_coords, compose, dilate,
                    dilation_generator_field, dist, gauge_norm, inverse,
                    left_invariant_derivative_field,
                    right_invariant_derivative_field, sub_laplacian)
from .bubbles import (BumpParams, Constants, bubble, bubble_frame_map,
                      bubble_power_integral, constants, quartic_power_field,
                      standard_bubble, weight_field)
from .fields import GridSpec, integrate, grad_inner
from .functional import (SubcriticalExponent, curvature_field, energy,
                         signed_power, subcritical_exponent)


# ---------------------------------------------------------------------------
# regions

def region_center(region) -> np.ndarray:
    return np.array([(lo + hi) / 2.0 for lo, hi in region], dtype=float)


def in_region(pts, region) -> np.ndarray:
    c = as_coords(pts)
    ok = np.ones(c.shape[:-1], dtype=bool)
    for i, (lo, hi) in enumerate(region):
        ok &= (c[..., i] >= lo) & (c[..., i] <= hi)
    return ok


def _check_regions(regions, min_separation: float = 1.0) -> None:
    """Boxes must be pairwise separated by at least min_separation,
    measured through the per-axis gap vector in the gauge norm (a
    desk-scale box distance; exact for configurations split along the
    horizontal axes)."""
    for i in range(len(regions)):
        for j in range(i + 1, len(regions)):
            gaps = np.array([max(0.0, regions[j][a][0] - regions[i][a][1],
                                 regions[i][a][0] - regions[j][a][1])
                             for a in range(len(regions[i]))])
            if gauge_norm(gaps) < min_separation:
                raise ValueError(
                    f"regions {i} and {j} overlap or sit closer than "
                    f"{min_separation}")


# ---------------------------------------------------------------------------
# prescribed-curvature families

def _abs_power_term(axis: int, coef: float, expo: float, n: int) -> ScalarField:
    """coef |xi_axis|^expo with closed first derivatives.

    The second derivative is unbounded at the hyperplane for expo < 2,
    so no hessian closure is attached; nothing in the solver or audits
    differentiates a curvature twice.
    """
    def value(c):
        return coef * np.abs(c[..., axis]) ** expo

    def gradient(c):
        g = np.zeros(c.shape, dtype=float)
        x = c[..., axis]
        g[..., axis] = coef * expo * np.sign(x) * np.abs(x) ** (expo - 1.0)
        return g

    return ScalarField(value, gradient, n=n)


@dataclass(frozen=True)
class RSpec:
    """Prescribed curvature: one of four families.

    constant     R = value.
    flatness     R = value + sum_j a_j|x_j|^beta + b_j|y_j|^beta
                 + c|t|^{beta/2} in coordinates translated so base_point
                 is the expansion point; beta in (Q-2, Q); optional floor
                 clamps the values from below far from the peak.
    periodicSum  R = value + amplitude * sum_j exp(-|hat{xi}^{-j} o
                 .|^4 / width^4) over lattice powers |j| <= cells.
    perturbation the piecewise-modified field built by
                 build_perturbation; carries its component masks.
    """

    kind: str
    value: float = 1.0
    base_point: tuple | None = None
    beta: float | None = None
    coeff_a: tuple | None = None
    coeff_b: tuple | None = None
    coeff_c: float | None = None
    floor: float | None = None
    period: tuple | None = None
    amplitude: float | None = None
    width: float | None = None
    cells: int = 2
    base: "RSpec | None" = None
    psi: ScalarField | None = None
    eps: float | None = None
    anchors: tuple | None = None
    level: int | None = None
    psi_infinity: float = 0.0
    tail_amplitude: float | None = None
    components: tuple = ()
    n: int = 1

    def __post_init__(self):
        kinds = ("constant", "flatness", "periodicSum", "perturbation")
        if self.kind not in kinds:
            raise ValueError(f"unknown curvature kind {self.kind!r}")
        if self.kind == "flatness":
            Q = 2 * self.n + 2
            if not Q - 2 < self.beta < Q:
                raise ValueError(
                    f"flatness exponent beta = {self.beta} outside "
                    f"({Q - 2}, {Q})")
            coeffs = list(self.coeff_a) + list(self.coeff_b) + [self.coeff_c]
            if any(c == 0.0 for c in coeffs):
                raise ValueError("flatness coefficients must be nonzero")
        if self.kind == "periodicSum" and self.width <= 0.0:
            raise ValueError("periodicSum width must be positive")

    @cached_property
    def field(self) -> ScalarField:
        return _build_curvature_field(self)

    @property
    def r_infinity(self) -> float:
        """Level far from all structure (exact for every kind but
        flatness, which has none)."""
        if self.kind == "perturbation":
            return self.base.r_infinity
        return self.value

    def nondegeneracy(self, kappa: float) -> float:
        """sum(a_j + b_j) + kappa c for the flatness family; its sign
        decides solvability in the flatness regime and must not vanish.
        """
        if self.kind != "flatness":
            raise ValueError("nondegeneracy scalar is a flatness-only notion")
        return float(sum(self.coeff_a) + sum(self.coeff_b)
                     + kappa * self.coeff_c)


def _build_curvature_field(r: RSpec) -> ScalarField:
    n = r.n
    if r.kind == "constant":
        return group.constant_field(r.value, n)

    if r.kind == "flatness":
        terms = None
        for j in range(n):
            for axis, coef in ((j, r.coeff_a[j]), (n + j, r.coeff_b[j])):
                t = _abs_power_term(axis, coef, r.beta, n)
                terms = t if terms is None else terms + t
        terms = terms + _abs_power_term(2 * n, r.coeff_c, r.beta / 2.0, n)
        base = as_coords(np.asarray(r.base_point, dtype=float))
        f = (terms + r.value).compose_affine(
            AffineMap.left_translation(inverse(base)), 1.0)
        if r.floor is None:
            return f
        floor = float(r.floor)

        def value(c):
            return np.maximum(f.value(c), floor)

        def gradient(c):
            g = f.gradient(c)
            return np.where((f.value(c) > floor)[..., None], g, 0.0)

        return ScalarField(value, gradient, n=n)

    if r.kind == "periodicSum":
        g4 = quartic_power_field(1.0, 0.0, 1.0, n)
        s4 = float(r.width) ** 4
        profile = g4.chain(lambda u: r.amplitude * np.exp(-u / s4),
                           lambda u: -r.amplitude / s4 * np.exp(-u / s4),
                           lambda u: r.amplitude / s4 ** 2 * np.exp(-u / s4))
        period = np.asarray(r.period, dtype=float)
        total = None
        for j in range(-r.cells, r.cells + 1):
            cell = profile.compose_affine(
                AffineMap.left_translation(inverse(j * period)), 1.0)
            total = cell if total is None else total + cell
        return total + r.value

    # perturbation: base outside, the shifted-psi expression on the
    # detected components; continuous across each component boundary by
    # construction of the strict-inequality set
    base_field = r.base.field

    def value(c):
        pts = as_coords(c)
        out = np.array(base_field(pts), dtype=float, copy=True)
        for comp in r.components:
            sel, expr = comp.select(pts, r)
            if np.any(sel):
                out[sel] = expr
        return out

    def gradient(c):
        pts = as_coords(c)
        out = np.array(base_field.grad(pts), dtype=float, copy=True)
        for comp in r.components:
            sel, _ = comp.select(pts, r)
            if np.any(sel):
                amap = AffineMap.left_translation(inverse(comp.anchor_power))
                shifted = amap.apply(pts[sel])
                out[sel] = r.eps * (r.psi.grad(shifted) @ amap.linear)
        return out

    return ScalarField(value, gradient, n=r.n)


def constant_curvature(value: float, n: int = 1) -> RSpec:
    return RSpec(kind="constant", value=float(value), n=n)


def flatness_curvature(base_point, beta: float, coeff_a, coeff_b,
                       coeff_c: float, base_value: float = 1.0,
                       floor: float | None = None) -> RSpec:
    base = as_coords(base_point)
    n = group.infer_n(base)
    return RSpec(kind="flatness", value=float(base_value),
                 base_point=tuple(float(v) for v in base), beta=float(beta),
                 coeff_a=tuple(float(v) for v in np.atleast_1d(coeff_a)),
                 coeff_b=tuple(float(v) for v in np.atleast_1d(coeff_b)),
                 coeff_c=float(coeff_c), floor=floor, n=n)


def periodic_sum_curvature(period, amplitude: float, width: float,
                           base_value: float = 1.0, cells: int = 2) -> RSpec:
    per = as_coords(period)
    return RSpec(kind="periodicSum", value=float(base_value),
                 period=tuple(float(v) for v in per),
                 amplitude=float(amplitude), width=float(width),
                 cells=int(cells), n=group.infer_n(per))


def monotone_curvature(n: int = 1, level: float = 2.0,
                       slope: float = 0.5) -> ScalarField:
    """R = level + tanh(slope x_1): X_1 R > 0 everywhere, the classic
    Kazdan-Warner nonexistence profile."""

    def value(c):
        return level + np.tanh(slope * c[..., 0])

    def gradient(c):
        g = np.zeros(c.shape, dtype=float)
        g[..., 0] = slope / np.cosh(slope * c[..., 0]) ** 2
        return g

    return ScalarField(value, gradient, n=n)


def default_psi(amplitude: float = 1.0, psi_infinity: float = 0.0,
                n: int = 1) -> ScalarField:
    """psi = psi_inf + amplitude (1+|xi|^4)^{-1/2}: radial in the gauge
    and strictly decreasing along dilations away from the origin."""
    g4 = quartic_power_field(1.0, 0.0, 1.0, n)
    a = float(amplitude)
    return g4.chain(lambda u: psi_infinity + a * (1.0 + u) ** -0.5,
                    lambda u: -0.5 * a * (1.0 + u) ** -1.5,
                    lambda u: 0.75 * a * (1.0 + u) ** -2.5)


# ---------------------------------------------------------------------------
# multi-bump states

@dataclass(frozen=True)
class MultiBump:
    """k bubbles plus an optional correction field."""

    bumps: tuple
    correction: ScalarField | None = None

    def __post_init__(self):
        object.__setattr__(self, "bumps", tuple(self.bumps))
        if not self.bumps:
            raise ValueError("a MultiBump needs at least one bump")

    @property
    def k(self) -> int:
        return len(self.bumps)

    @property
    def n(self) -> int:
        return self.bumps[0].n

    def canonical(self) -> "MultiBump":
        """Bumps sorted by center (x_1, then y_1, then t)."""
        order = sorted(range(self.k),
                       key=lambda i: tuple(self.bumps[i].center))
        return MultiBump(tuple(self.bumps[i] for i in order), self.correction)

    @cached_property
    def field(self) -> ScalarField:
        cst = constants(self.n)
        total = bubble(self.bumps[0], cst)
        for p in self.bumps[1:]:
            total = total + bubble(p, cst)
        if self.correction is not None:
            total = total + self.correction
        return total

    def separation(self) -> float:
        if self.k == 1:
            return math.inf
        return min(dist(self.bumps[i].center, self.bumps[j].center)
                   for i in range(self.k) for j in range(i + 1, self.k))


def bump_directions(p: BumpParams, cst: Constants) -> list[ScalarField]:
    """Orthogonality frame [w/alpha, X_j w, Y_j w, T w, lam d_lam w].

    This is the frame of the optimal-representation certificates: the
    correction v of a decomposed state is gradient-orthogonal to every
    member.  Everything reduces to derivative fields of the standard
    bubble pushed through the frame map: left-invariance moves X_j
    across the translation and picks up lam (lam^2 for T) across the
    dilation, and lam d_lam w = s w + alpha lam^s (chi W) o frame with
    s = (Q-2)/2.
    """
    n = p.n
    Q = cst.Q
    s = (Q - 2.0) / 2.0
    W = standard_bubble(cst)
    frame = bubble_frame_map(p)
    lam = p.scale
    out = [W.compose_affine(frame, lam ** s)]
    for idx in range(2 * n + 1):
        power = s + (2.0 if idx == 2 * n else 1.0)
        D = left_invariant_derivative_field(W, idx)
        out.append(D.compose_affine(frame, p.alpha * lam ** power))
    chi = dilation_generator_field(W)
    out.append(bubble(p, cst) * s
               + chi.compose_affine(frame, p.alpha * lam ** s))
    return out


def bump_parameter_directions(p: BumpParams, cst: Constants
                              ) -> list[ScalarField]:
    """True derivatives of w with respect to (alpha, center, log lam).

    Center motion generates left translations, i.e. the right-invariant
    mirror frame, plus a T-correction from the twist of the group law:

        dw/dx_a = -alpha lam^{s+1} (tX_j W) o frame + 2 y_a T w,
        dw/dy_a = -alpha lam^{s+1} (tY_j W) o frame - 2 x_a T w,
        dw/dt_a = -T w.

    Descent and Gram projection in the flow use this frame so that
    parameter increments and function-space increments agree exactly.
    """
    n = p.n
    Q = cst.Q
    s = (Q - 2.0) / 2.0
    W = standard_bubble(cst)
    frame = bubble_frame_map(p)
    lam = p.scale
    center = as_coords(p.center)
    T = left_invariant_derivative_field(W, 2 * n)
    t_factor = p.alpha * lam ** (s + 2.0)
    out = [W.compose_affine(frame, lam ** s)]
    for j in range(n):
        D = right_invariant_derivative_field(W, j)
        d = D.compose_affine(frame, -p.alpha * lam ** (s + 1.0))
        out.append(d + T.compose_affine(frame,
                                        2.0 * center[n + j] * t_factor))
    for j in range(n):
        D = right_invariant_derivative_field(W, n + j)
        d = D.compose_affine(frame, -p.alpha * lam ** (s + 1.0))
        out.append(d + T.compose_affine(frame,
                                        -2.0 * center[j] * t_factor))
    out.append(T.compose_affine(frame, -t_factor))
    chi = dilation_generator_field(W)
    out.append(bubble(p, cst) * s
               + chi.compose_affine(frame, p.alpha * lam ** s))
    return out


# ---------------------------------------------------------------------------
# flow configuration and quadrature context

DEFAULT_FLOW_SPEC = GridSpec(1, ((-8.0, 8.0), (-8.0, 8.0), (-24.0, 24.0)),
                             (0.5, 0.5, 1.5))
DEFAULT_CORRECTION_SPEC = GridSpec(1, ((-9.0, 9.0), (-9.0, 9.0),
                                       (-27.0, 27.0)), (0.3, 0.3, 0.9))


@dataclass(frozen=True)
class FlowConfig:
    step_size: float = 1.0
    max_steps: int = 120
    gradient_tolerance: float = 2e-3
    tau_schedule: tuple = (0.1, 0.05, 0.02, 0.01, 0.0)
    projection: str = "parameter-manifold"
    regions: tuple | None = None
    quad_spec: GridSpec | None = None
    correction_spec: GridSpec | None = None
    substeps: int = 4

    def __post_init__(self):
        if self.step_size <= 0.0:
            raise ValueError("step_size must be positive")
        if self.gradient_tolerance <= 0.0:
            raise ValueError("gradient_tolerance must be positive")
        if self.projection not in ("parameter-manifold", "full-grid"):
            raise ValueError(f"unknown projection {self.projection!r}")
        if any(t < 0 for t in self.tau_schedule) or \
                list(self.tau_schedule) != sorted(self.tau_schedule,
                                                  reverse=True):
            raise ValueError("tau_schedule must be nonincreasing and >= 0")


@dataclass(frozen=True)
class FlowResult:
    final: MultiBump
    trace: tuple
    status: str
    energy: float
    grad_norm: float


def _flow_quadrature(bumps, spec: GridSpec):
    """Union of per-bump covariant grids with scaled-gauge Voronoi masks.

    Bump i's grid is the fixed bump-frame box mapped by
    a_i o delta_{1/lam_i}; its trapezoid weights shrink by lam^{-Q}.  A
    node is kept by the bump whose scaled distance lam_j d(node, a_j) is
    smallest (first index wins ties), so overlapping grids tile space
    without double counting and the whole node set is equivariant under
    translations of the configuration.
    """
    axes = spec.axes()
    Q = 2 * spec.n + 2
    mesh = np.meshgrid(*axes, indexing="ij")
    eta = np.stack([m.ravel() for m in mesh], axis=-1)
    w_eta = np.ones(eta.shape[0], dtype=float)
    for i, a in enumerate(axes):
        h = a[1] - a[0]
        w_ax = np.full(a.size, h)
        w_ax[0] = w_ax[-1] = h / 2.0
        shape = [1] * len(axes)
        shape[i] = a.size
        w_eta = w_eta * np.broadcast_to(
            w_ax.reshape(shape), mesh[0].shape).ravel()

    all_nodes = []
    all_weights = []
    for i, p in enumerate(bumps):
        amap = AffineMap.dilation(1.0 / p.scale, spec.n).then(
            AffineMap.left_translation(as_coords(p.center)))
        nodes = amap.apply(eta)
        if len(bumps) > 1:
            scaled = np.stack(
                [q.scale * dist(nodes, as_coords(q.center)) for q in bumps],
                axis=-1)
            keep = np.argmin(scaled, axis=-1) == i
            nodes = nodes[keep]
            w = w_eta[keep] * p.scale ** (-Q)
        else:
            w = w_eta * p.scale ** (-Q)
        all_nodes.append(nodes)
        all_weights.append(w)
    return np.concatenate(all_nodes), np.concatenate(all_weights)


def _eta_mesh(spec: GridSpec):
    axes = spec.axes()
    mesh = np.meshgrid(*axes, indexing="ij")
    eta = np.stack([m.ravel() for m in mesh], axis=-1)
    w = np.ones(eta.shape[0], dtype=float)
    for i, a in enumerate(axes):
        h = a[1] - a[0]
        w_ax = np.full(a.size, h)
        w_ax[0] = w_ax[-1] = h / 2.0
        shape = [1] * len(axes)
        shape[i] = a.size
        w = w * np.broadcast_to(w_ax.reshape(shape), mesh[0].shape).ravel()
    return eta, w


def _push_map(p: BumpParams, n: int) -> AffineMap:
    return AffineMap.dilation(1.0 / p.scale, n).then(
        AffineMap.left_translation(as_coords(p.center)))


class _FlowContext:
    """Covariant quadrature with frozen Voronoi ownership.

    Each bump carries the pushforward of one fixed bump-frame box, so
    the quadrature energy inherits the exact symmetries of the
    continuum functional: it is invariant under translating the whole
    configuration and, at tau = 0 with constant R, independent of the
    concentration scales.  Ownership of the box overlap is decided once
    (scaled-gauge Voronoi at the construction parameters) and kept, so
    the energy is a single smooth function of the parameters for the
    lifetime of the context; its derivatives are taken by centered
    differences, which keeps the descent free of the slowly decaying
    truncation bias that plagues the continuum pairing with the
    dilation direction on a finite box.
    """

    def __init__(self, bumps, R, exp: SubcriticalExponent, spec: GridSpec,
                 correction: ScalarField | None):
        self.n = bumps[0].n
        self.cst = constants(self.n)
        self.exp = exp
        eta, weta = _eta_mesh(spec)
        k = len(bumps)
        if k > 1:
            nodes = [_push_map(p, self.n).apply(eta) for p in bumps]
            self.eta, self.weta = [], []
            for i in range(k):
                scaled = np.stack(
                    [q.scale * dist(nodes[i], as_coords(q.center))
                     for q in bumps], axis=-1)
                keep = np.argmin(scaled, axis=-1) == i
                self.eta.append(eta[keep])
                self.weta.append(weta[keep])
        else:
            self.eta = [eta]
            self.weta = [weta]
        self.Rfield = curvature_field(R, self.n)
        self.Hfield = weight_field(self.cst)
        self.correction = correction
        self.rebase(bumps)

    # -- caches -----------------------------------------------------------

    def _mesh_arrays(self, i: int, p: BumpParams):
        nodes = _push_map(p, self.n).apply(self.eta[i])
        qw = self.weta[i] * p.scale ** (-self.cst.Q)
        Rv = np.asarray(self.Rfield(nodes), dtype=float)
        if self.exp.tau != 0.0:
            Hv = np.asarray(self.Hfield(nodes), dtype=float) ** self.exp.tau
        else:
            Hv = np.ones(nodes.shape[0])
        return nodes, qw, Rv, Hv

    def _unit_eval(self, p: BumpParams, nodes):
        w = bubble(BumpParams(1.0, p.center, p.scale), self.cst)
        return (np.asarray(w(nodes), dtype=float),
                group.horizontal_gradient(w, nodes))

    def _corr_eval(self, nodes):
        if self.correction is None:
            return 0.0, 0.0
        return (np.asarray(self.correction(nodes), dtype=float),
                group.horizontal_gradient(self.correction, nodes))

    def rebase(self, bumps) -> None:
        """Recache geometry, unit bubbles, and R/H samples at bumps."""
        self.base = tuple(bumps)
        self.nodes, self.qw, self.Rv, self.Hv = [], [], [], []
        self.ub, self.corr = [], []
        for i, p in enumerate(bumps):
            nodes, qw, Rv, Hv = self._mesh_arrays(i, p)
            self.nodes.append(nodes)
            self.qw.append(qw)
            self.Rv.append(Rv)
            self.Hv.append(Hv)
            self.ub.append([self._unit_eval(pj, nodes) for pj in bumps])
            self.corr.append(self._corr_eval(nodes))
        self.cat_nodes = np.concatenate(self.nodes)
        self.cat_qw = np.concatenate(self.qw)
        self.cat_Rv = np.concatenate(self.Rv)
        self.cat_Hv = np.concatenate(self.Hv)
        k = len(bumps)
        self.cat_ub = [(np.concatenate([self.ub[i][j][0] for i in range(k)]),
                        np.concatenate([self.ub[i][j][1] for i in range(k)]))
                       for j in range(k)]
        if self.correction is None:
            self.cat_corr = (0.0, 0.0)
        else:
            self.cat_corr = (np.concatenate([c[0] for c in self.corr]),
                             np.concatenate([c[1] for c in self.corr]))

    def set_correction(self, correction: ScalarField | None) -> None:
        self.correction = correction
        self.rebase(self.base)

    def _is_base(self, bumps) -> bool:
        return len(bumps) == len(self.base) and \
            all(p is q for p, q in zip(bumps, self.base))

    # -- energy and derivatives -------------------------------------------

    def energy_at(self, bumps, moved=()) -> float:
        """Quadrature energy at bumps.

        Callers guarantee that any bump whose center or scale differs
        from the cached base appears in moved; amplitude changes are
        free because unit-bubble samples are cached.
        """
        q = self.cst.Qstar - self.exp.tau
        moved = set(moved)
        total = 0.0
        for i in range(len(bumps)):
            if i in moved:
                nodes, qw, Rv, Hv = self._mesh_arrays(i, bumps[i])
                cv, cg = self._corr_eval(nodes)
                uv, ug = cv, cg
                for pj in bumps:
                    v, g = self._unit_eval(pj, nodes)
                    uv = uv + pj.alpha * v
                    ug = ug + pj.alpha * g
            else:
                qw, Rv, Hv = self.qw[i], self.Rv[i], self.Hv[i]
                cv, cg = self.corr[i]
                uv, ug = cv, cg
                for j, pj in enumerate(bumps):
                    if j in moved:
                        v, g = self._unit_eval(pj, self.nodes[i])
                    else:
                        v, g = self.ub[i][j]
                    uv = uv + pj.alpha * v
                    ug = ug + pj.alpha * g
            kin = 0.5 * float(np.sum(qw * np.sum(ug * ug, axis=-1)))
            pot = float(np.sum(qw * Rv * Hv * np.abs(uv) ** q)) / q
            total += kin - pot
        return total

    def discrete_gradient(self, bumps, components=None) -> np.ndarray:
        """Centered differences of the quadrature energy in the packed
        parameters (alpha, center, log lam per bump).  components picks
        the indices to fill; the rest stay zero (after the amplitude
        projection the alpha components vanish, so flows skip them)."""
        theta = _pack(bumps)
        d_per = 2 * self.n + 3
        g = np.zeros(theta.size)
        idx = range(theta.size) if components is None else components
        for m in idx:
            i, r = divmod(m, d_per)
            moved = () if r == 0 else (i,)
            # center steps are absolute so the gradient commutes with
            # translating the whole configuration
            if 0 < r < d_per - 1:
                h = 1e-5
            else:
                h = 1e-5 * max(1.0, abs(theta[m]))
            tp = theta.copy()
            tm = theta.copy()
            tp[m] += h
            tm[m] -= h
            g[m] = (self.energy_at(_unpack(tp, self.n), moved)
                    - self.energy_at(_unpack(tm, self.n), moved)) / (2.0 * h)
        return g

    # -- pairings on the concatenated node set -----------------------------

    def pair_kinetic(self, hg_a, hg_b) -> float:
        return float(np.sum(self.cat_qw * np.sum(hg_a * hg_b, axis=-1)))

    def state_arrays(self, bumps):
        """Values and horizontal gradients of sum(bubbles) + correction
        on the concatenated nodes; cached when bumps is the base."""
        if self._is_base(bumps):
            vals, hg = self.cat_corr
            for p, (v, g) in zip(bumps, self.cat_ub):
                vals = vals + p.alpha * v
                hg = hg + p.alpha * g
            return vals, hg
        vals, hg = self.cat_corr
        for p in bumps:
            w = bubble(p, self.cst)
            vals = vals + np.asarray(w(self.cat_nodes), dtype=float)
            hg = hg + group.horizontal_gradient(w, self.cat_nodes)
        return vals, hg

    def variation(self, vals, hg, d_vals, d_hg) -> float:
        """I'(u) applied to one direction, on the flow nodes."""
        nl = float(np.sum(self.cat_qw * self.cat_Rv * self.cat_Hv
                          * signed_power(vals, self.exp.p) * d_vals))
        return self.pair_kinetic(hg, d_hg) - nl

    def direction_arrays(self, bumps, frame: str = "invariant"):
        """Values and horizontal gradients of every tangent direction."""
        build = bump_directions if frame == "invariant" \
            else bump_parameter_directions
        d_vals, d_hg = [], []
        for p in bumps:
            for f in build(p, self.cst):
                d_vals.append(np.asarray(f(self.cat_nodes), dtype=float))
                d_hg.append(group.horizontal_gradient(f, self.cat_nodes))
        return d_vals, d_hg

    def move_gram(self, bumps) -> np.ndarray:
        """Kinetic Gram of the center and log-scale parameter directions,
        block-diagonal across bumps (each block paired on its own mesh;
        cross-bump couplings decay too fast at admissible separations to
        matter for a preconditioner)."""
        d_move = 2 * self.n + 2
        k = len(bumps)
        G = np.zeros((k * d_move, k * d_move))
        for i, p in enumerate(bumps):
            dirs = bump_parameter_directions(p, self.cst)[1:]
            qw = self.qw[i]
            hg = [group.horizontal_gradient(f, self.nodes[i]) for f in dirs]
            for a in range(d_move):
                for b in range(a, d_move):
                    v = float(np.sum(qw * np.sum(hg[a] * hg[b], axis=-1)))
                    o = i * d_move
                    G[o + a, o + b] = G[o + b, o + a] = v
        return G

    def nehari_amplitudes(self, bumps, iters: int = 8):
        """Rescale amplitudes so dE/dalpha_i = 0 for every bump.

        With shapes frozen, u(alpha) = sum alpha_i b_i + v and the
        conditions are k smooth equations solved by damped Newton; the
        Jacobian uses d/dalpha_j of the nonlinear term with the signed
        power's p|u|^{p-1} derivative.
        """
        if not self._is_base(bumps):
            raise ValueError("amplitude projection runs at the cached base")
        k = len(bumps)
        b_vals = [self.cat_ub[j][0] for j in range(k)]
        b_hg = [self.cat_ub[j][1] for j in range(k)]
        cv, cg = self.cat_corr
        K = np.empty((k, k))
        for i in range(k):
            for j in range(i, k):
                K[i, j] = K[j, i] = self.pair_kinetic(b_hg[i], b_hg[j])
        cross = np.array([self.pair_kinetic(cg, b_hg[i]) for i in range(k)]) \
            if self.correction is not None else np.zeros(k)
        alphas = np.array([p.alpha for p in bumps], dtype=float)
        w8 = self.cat_qw * self.cat_Rv * self.cat_Hv
        p_exp = self.exp.p
        for _ in range(iters):
            u = cv + sum(a * bv for a, bv in zip(alphas, b_vals))
            su = signed_power(u, p_exp)
            g = K @ alphas + cross - np.array(
                [float(np.sum(w8 * su * bv)) for bv in b_vals])
            du = p_exp * np.abs(u) ** (p_exp - 1.0)
            J = K - np.array(
                [[float(np.sum(w8 * du * b_vals[i] * b_vals[j]))
                  for j in range(k)] for i in range(k)])
            try:
                step = np.linalg.solve(J, g)
            except np.linalg.LinAlgError:
                break
            new = alphas - step
            new = np.clip(new, 0.05 * np.abs(alphas), 20.0 * np.abs(alphas))
            if np.max(np.abs(new - alphas)) < 1e-13 * np.max(np.abs(alphas)):
                alphas = new
                break
            alphas = new
        return tuple(BumpParams(float(a), p.center, p.scale)
                     for a, p in zip(alphas, bumps))


def _pack(bumps) -> np.ndarray:
    rows = []
    for p in bumps:
        rows.append(np.concatenate([[p.alpha], as_coords(p.center),
                                    [math.log(p.scale)]]))
    return np.concatenate(rows)


def _unpack(theta: np.ndarray, n: int):
    d = 2 * n + 3
    out = []
    for i in range(len(theta) // d):
        row = theta[i * d:(i + 1) * d]
        out.append(BumpParams(float(row[0]), row[1:d - 1].copy(),
                              math.exp(float(row[d - 1]))))
    return tuple(out)


def _assign_regions(bumps, regions):
    """Match each bump to its nearest region center, one-to-one."""
    taken = [False] * len(regions)
    owner = []
    for p in bumps:
        dists = [math.inf if taken[j]
                 else dist(as_coords(p.center), region_center(r))
                 for j, r in enumerate(regions)]
        j = int(np.argmin(dists))
        taken[j] = True
        owner.append(j)
    return owner


# ---------------------------------------------------------------------------
# gradient flow

def gradient_flow(start: MultiBump, R, exp: SubcriticalExponent,
                  cfg: FlowConfig) -> FlowResult:
    """Projected descent on the bump parameters (and, in full-grid mode,
    the correction samples).

    Per step: pin amplitudes to the Nehari conditions (the amplitude
    direction of a mountain-pass point repels plain descent; on the
    Nehari slice the level is a constrained minimum), take the discrete
    gradient of the covariant quadrature energy in the center and
    log-scale parameters, precondition with the Gram matrix of the true
    parameter directions, and move along the preconditioned negative
    gradient with a halving line search on that same energy.  The trace
    records (step, tau, energy, grad_norm, parameters); since ownership
    masks are frozen, the recorded energies sample one smooth function
    and the trace is exactly non-increasing.
    """
    n = start.n
    spec = cfg.quad_spec if cfg.quad_spec is not None else DEFAULT_FLOW_SPEC
    bumps = tuple(start.bumps)
    owners = _assign_regions(bumps, cfg.regions) if cfg.regions else None
    # parameter-manifold mode moves on the pure bubble-sum manifold: any
    # correction on the start (for example the cutoff deficit of an
    # ansatz) is not in the span of the parameter directions and would
    # otherwise ride along frozen, so it is projected away here
    correction = start.correction if cfg.projection == "full-grid" else None
    corr_state = None
    if cfg.projection == "full-grid":
        cspec = cfg.correction_spec if cfg.correction_spec is not None \
            else DEFAULT_CORRECTION_SPEC
        caxes = cspec.axes()
        cvals = np.zeros(tuple(a.size for a in caxes))
        if correction is not None:
            mesh = np.meshgrid(*caxes, indexing="ij")
            cvals = np.asarray(
                correction(np.stack(mesh, axis=-1)), dtype=float)
        corr_state = (cspec, cvals)
        correction = _clipped_grid_field(cspec, cvals)

    ctx = _FlowContext(bumps, R, exp, spec, correction)
    trace = []
    status = "max-steps"
    e_val = math.nan
    g_norm = math.nan
    # indices of center and log-scale coordinates inside each bump block
    d_per = 2 * n + 3
    move = [i for b in range(len(bumps))
            for i in range(b * d_per + 1, (b + 1) * d_per)]
    all_moved = tuple(range(len(bumps)))

    for step in range(cfg.max_steps):
        bumps = ctx.nehari_amplitudes(bumps)
        e_val = ctx.energy_at(bumps)
        g = ctx.discrete_gradient(bumps, components=move)[move]

        G = ctx.move_gram(bumps)
        scale = 1.0 / np.sqrt(np.maximum(np.diag(G), 1e-30))
        Gs = G * scale[:, None] * scale[None, :]
        Gs[np.diag_indices_from(Gs)] += 1e-10
        gs = g * scale
        ds = np.linalg.solve(Gs, gs)
        g_norm = float(np.sqrt(max(np.dot(gs, ds), 0.0)))
        dtheta_move = -(ds * scale)

        theta = _pack(bumps)
        trace.append((step, exp.tau, e_val, g_norm) + tuple(theta))
        if g_norm < cfg.gradient_tolerance:
            status = "converged"
            break

        s = cfg.step_size
        accepted = False
        while s >= 1e-12:
            cand = theta.copy()
            cand[move] += s * dtheta_move
            cand_bumps = _unpack(cand, n)
            if ctx.energy_at(cand_bumps, moved=all_moved) < e_val:
                accepted = True
                break
            s *= 0.5
        if not accepted:
            status = "step-collapse"
            break
        bumps = _unpack(cand, n)
        ctx.rebase(bumps)

        if owners is not None:
            for p, j in zip(bumps, owners):
                if not bool(in_region(as_coords(p.center), cfg.regions[j])):
                    status = "escape"
                    break
            if status == "escape":
                break

        if corr_state is not None:
            cspec, cvals = corr_state
            e_here = ctx.energy_at(bumps)
            dt_scale = 1.0
            for _ in range(5):
                cand_vals = _evolve_correction(cspec, cvals, bumps, R, exp,
                                               cfg.substeps, dt_scale)
                ctx.set_correction(_clipped_grid_field(cspec, cand_vals))
                if ctx.energy_at(bumps) <= e_here:
                    cvals = cand_vals
                    break
                dt_scale *= 0.25
            else:
                # no stable substep found: keep the old correction
                ctx.set_correction(_clipped_grid_field(cspec, cvals))
            corr_state = (cspec, cvals)

    final = MultiBump(bumps, ctx.correction).canonical()
    return FlowResult(final=final, trace=tuple(trace), status=status,
                      energy=e_val, grad_norm=g_norm)


def covariant_energy(state: MultiBump, R, exp: SubcriticalExponent,
                     spec: GridSpec | None = None,
                     tails: bool = True) -> float:
    """Continuum energy estimate of a bump-manifold state.

    Covariant quadrature resolves the concentration cores at any scale,
    but misses the exterior of the pushforward boxes.  For the dominant
    self terms both halves are known in closed form (the full-space
    gradient and power integrals of a unit bubble), so adding

        0.5 alpha_i^2 (S_n^Q - K_box) - alpha_i^q lam^(-tau s) R H^tau
            (int W^q - P_box) / q

    per bump cancels the in-box discretization error of those terms
    exactly; what remains discrete are cross terms and the correction,
    both resolved on the meshes.  Uniform grids cannot do this job once
    lam >> 1: the cores fall between nodes.

    tails=False skips the exterior corrections; use it with an eta box
    large enough to cover the whole support of a compactly supported
    state (for example a cutoff ansatz), where adding bubble tails
    would be wrong.
    """
    spec = spec if spec is not None else DEFAULT_FLOW_SPEC
    ctx = _FlowContext(state.bumps, R, exp, spec, state.correction)
    cst = ctx.cst
    q = cst.Qstar - exp.tau
    e = ctx.energy_at(state.bumps)
    if not tails:
        return e
    k_full = float(cst.Sn ** cst.Q)
    p_full = bubble_power_integral(q, cst)
    W = standard_bubble(cst)
    s = (cst.Q - 2.0) / 2.0
    for i, p in enumerate(state.bumps):
        eta, weta = ctx.eta[i], ctx.weta[i]
        hg = group.horizontal_gradient(W, eta)
        k_box = float(np.sum(weta * np.sum(hg * hg, axis=-1)))
        p_box = float(np.sum(weta * np.asarray(W(eta), dtype=float) ** q))
        center = as_coords(p.center)
        r_xi = float(ctx.Rfield(center))
        h_xi = float(ctx.Hfield(center)) ** exp.tau
        lam_pot = p.scale ** (-exp.tau * s)
        e += 0.5 * p.alpha ** 2 * (k_full - k_box)
        e -= abs(p.alpha) ** q * lam_pot * r_xi * h_xi * (p_full - p_box) / q
    return e


def _clipped_grid_field(spec: GridSpec, values: np.ndarray) -> ScalarField:
    """Linear interpolant of grid samples, zero outside the safe box.

    The evolving correction is forced to vanish on a margin inside the
    box, so extension by zero keeps the field continuous and lets the
    covariant quadrature nodes roam beyond the grid.
    """
    from scipy.interpolate import RegularGridInterpolator

    axes = spec.axes()
    pad = 2
    lo = np.array([a[pad] for a in axes])
    hi = np.array([a[-1 - pad] for a in axes])
    it_v = RegularGridInterpolator(axes, values, method="linear",
                                   bounds_error=False, fill_value=0.0)
    grads = np.gradient(values, *axes, edge_order=2)
    it_g = [RegularGridInterpolator(axes, gr, method="linear",
                                    bounds_error=False, fill_value=0.0)
            for gr in grads]

    def inside(c):
        return np.all((c >= lo) & (c <= hi), axis=-1)

    def value(c):
        c = as_coords(c)
        flat = c.reshape(-1, c.shape[-1])
        out = np.where(inside(flat), it_v(flat), 0.0)
        return out.reshape(c.shape[:-1])

    def gradient(c):
        c = as_coords(c)
        flat = c.reshape(-1, c.shape[-1])
        mask = inside(flat)
        out = np.stack([np.where(mask, g(flat), 0.0) for g in it_g], axis=-1)
        return out.reshape(c.shape)

    return ScalarField(value, gradient, n=spec.n, kind="grid-sampled")


def _grid_sub_laplacian(values: np.ndarray, axes) -> np.ndarray:
    """Delta_H of grid samples by second-order array stencils (n = 1)."""
    x, y = axes[0], axes[1]
    gx, gy, gt = np.gradient(values, *axes, edge_order=2)
    fxx = np.gradient(gx, x, axis=0, edge_order=2)
    fyy = np.gradient(gy, y, axis=1, edge_order=2)
    fxt = np.gradient(gx, axes[2], axis=2, edge_order=2)
    fyt = np.gradient(gy, axes[2], axis=2, edge_order=2)
    ftt = np.gradient(gt, axes[2], axis=2, edge_order=2)
    X = x[:, None, None]
    Y = y[None, :, None]
    return (fxx + fyy + 4.0 * Y * fxt - 4.0 * X * fyt
            + 4.0 * (X * X + Y * Y) * ftt)


def _evolve_correction(spec: GridSpec, cvals, bumps, R,
                       exp: SubcriticalExponent, substeps: int,
                       dt_scale: float = 1.0) -> np.ndarray:
    """Explicit L2-descent substeps for the correction samples.

    dv/ds = Delta_H u + R H^tau |u|^{p-1} u on the grid, u = bumps + v;
    the time step obeys the anisotropic stability bound (the t-direction
    coefficient grows like 4|z|^2) and a 3-cell margin stays pinned at
    zero so the interpolant extends continuously by zero.
    """
    cst = constants(spec.n)
    axes = spec.axes()
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack(mesh, axis=-1)
    Rf = curvature_field(R, spec.n)
    Rv = np.asarray(Rf(pts), dtype=float)
    Hv = weight_field(cst)(pts) ** exp.tau if exp.tau != 0.0 else 1.0

    bubble_vals = 0.0
    bubble_lap = 0.0
    for p in bumps:
        w = bubble(p, cst)
        bubble_vals = bubble_vals + w(pts)
        bubble_lap = bubble_lap + sub_laplacian(w, pts)

    hx, hy, ht = (a[1] - a[0] for a in axes)
    z2max = max(np.max(np.abs(axes[0])), np.max(np.abs(axes[1]))) ** 2 * 2.0
    rate = 2.0 / hx ** 2 + 2.0 / hy ** 2 + 4.0 * z2max / ht ** 2 \
        + 8.0 * math.sqrt(z2max) / (min(hx, hy) * ht)
    dt = 0.2 * dt_scale / rate

    v = np.array(cvals, dtype=float, copy=True)
    for _ in range(substeps):
        u = bubble_vals + v
        resid = (bubble_lap + _grid_sub_laplacian(v, axes)
                 + Rv * Hv * signed_power(u, exp.p))
        v += dt * resid
        v[:3, :, :] = v[-3:, :, :] = 0.0
        v[:, :3, :] = v[:, -3:, :] = 0.0
        v[:, :, :3] = v[:, :, -3:] = 0.0
    return v


# ---------------------------------------------------------------------------
# representation and neighborhood test

@dataclass(frozen=True)
class Representation:
    bumps: tuple
    v: ScalarField
    residual_norm: float
    orthogonality: tuple
    converged: bool
    on_boundary: bool
    u_norm: float


def _peak_scan(u: ScalarField, region, rounds: int = 3, per_axis: int = 17):
    """Coarse-to-fine argmax of u over a box.

    Ties (constant or plateaued fields) break toward the box midpoint,
    so a structureless region yields its center rather than whichever
    corner the raveled argmax happens to hit.
    """
    lo = np.array([a for a, _ in region], dtype=float)
    hi = np.array([b for _, b in region], dtype=float)
    mid = (lo + hi) / 2.0
    best_val = -math.inf
    best = mid.copy()
    for _ in range(rounds):
        axes = [np.linspace(lo[i], hi[i], per_axis) for i in range(len(lo))]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack(mesh, axis=-1).reshape(-1, len(lo))
        vals = np.asarray(u(pts)).reshape(-1)
        vmax = float(vals.max())
        near = pts[vals >= vmax - 1e-12 * max(1.0, abs(vmax))]
        cand = near[int(np.argmin(np.sum((near - mid) ** 2, axis=1)))]
        if vmax > best_val:
            best_val = vmax
            best = cand
        span = (hi - lo) / (per_axis - 1)
        lo = np.maximum(lo, best - 1.5 * span)
        hi = np.minimum(hi, best + 1.5 * span)
    return best, best_val


def optimal_representation(u: ScalarField, k: int, eps: float, regions, R,
                           quad_spec: GridSpec | None = None,
                           max_iter: int = 60,
                           amplitude_bound: float | None = None
                           ) -> Representation:
    """Best k-bump approximation of u in the gradient norm.

    Seeds one bump per region from the peak height (lambda from the
    exact peak formula alpha lam^{(Q-2)/2} c0, alpha from the curvature
    value), then Gauss-Newton on the stationarity system
    <d_m, u - S(theta)> = 0, whose normal matrix is the direction Gram.
    Returns the remainder v = u - S, its norm, and the normalized
    orthogonality residuals of v against every tangent direction, which
    certify optimality.  on_boundary flags a minimizer pinned at the
    amplitude or scale fence of the admissible domain.
    """
    if k != len(regions):
        raise ValueError("one region per requested bump")
    _check_regions(regions)
    n = group.infer_n(region_center(regions[0]))
    cst = constants(n)
    spec = quad_spec if quad_spec is not None else DEFAULT_FLOW_SPEC
    Rf = curvature_field(R, n)
    s = (cst.Q - 2.0) / 2.0

    seeds = []
    for reg in regions:
        center, peak = _peak_scan(u, reg)
        rv = float(Rf(center))
        alpha = rv ** (-s / 2.0) if rv > 0 else 1.0
        if peak <= 1e-8:
            lam = 2.0 / eps
        else:
            lam = (peak / (alpha * cst.c0)) ** (1.0 / s)
        seeds.append(BumpParams(alpha, center, max(lam, 1e-3)))
    bumps = tuple(seeds)

    exp0 = subcritical_exponent(0.0, n)
    converged = False

    def system(ctx, u_hg, cand):
        """Stationarity residuals <d_m, u - S(theta)> in the
        orthogonality frame, with the frame norms for scaling."""
        _, chg = ctx.state_arrays(cand)
        _, dhg = ctx.direction_arrays(cand, frame="invariant")
        F = np.array([ctx.pair_kinetic(u_hg - chg, h) for h in dhg])
        dn = np.array([math.sqrt(max(ctx.pair_kinetic(h, h), 1e-30))
                       for h in dhg])
        return F, dn, dhg

    for _ in range(max_iter):
        ctx = _FlowContext(bumps, 1.0, exp0, spec, None)
        u_hg = group.horizontal_gradient(u, ctx.cat_nodes)
        u_ref = math.sqrt(max(ctx.pair_kinetic(u_hg, u_hg), 1e-30))
        F, dn, d_hg = system(ctx, u_hg, bumps)
        fnorm = float(np.max(np.abs(F) / (dn * u_ref)))
        if fnorm < 1e-12:
            converged = True
            break
        # Newton on F = 0: the dominant Jacobian block is the mixed
        # Gram of the orthogonality frame against the true parameter
        # derivatives, dF_m/dtheta_k = -<d_m, dS/dtheta_k> + O(|v|)
        _, p_hg = ctx.direction_arrays(bumps, frame="parameter")
        m = len(d_hg)
        M = np.empty((m, m))
        for a in range(m):
            for b in range(m):
                M[a, b] = ctx.pair_kinetic(d_hg[a], p_hg[b])
        pn = np.array([math.sqrt(max(ctx.pair_kinetic(h, h), 1e-30))
                       for h in p_hg])
        Ms = M / dn[:, None] / pn[None, :]
        upd = np.linalg.solve(Ms, F / dn) / pn
        theta = _pack(bumps)
        step = 1.0
        accepted = False
        while step >= 1e-8:
            cand = _unpack(theta + step * upd, n)
            Fc, dnc, _ = system(ctx, u_hg, cand)
            if float(np.max(np.abs(Fc) / (dnc * u_ref))) \
                    < fnorm * (1.0 - 1e-4 * step) + 1e-15:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        bumps = _unpack(theta + step * upd, n)
        if float(np.max(np.abs(step * upd))) \
                < 1e-13 * max(1.0, float(np.max(np.abs(theta)))):
            converged = True
            break

    order = sorted(range(len(bumps)), key=lambda i: tuple(bumps[i].center))
    bumps = tuple(bumps[i] for i in order)

    ctx = _FlowContext(bumps, 1.0, exp0, spec, None)
    u_hg = group.horizontal_gradient(u, ctx.cat_nodes)
    s_vals, s_hg = ctx.state_arrays(bumps)
    r_hg = u_hg - s_hg
    res_norm = float(np.sqrt(max(ctx.pair_kinetic(r_hg, r_hg), 0.0)))
    d_vals, d_hg = ctx.direction_arrays(bumps)
    orth = []
    for a in range(len(d_vals)):
        dn = math.sqrt(max(ctx.pair_kinetic(d_hg[a], d_hg[a]), 1e-30))
        if res_norm < 1e-12:
            orth.append(0.0)
        else:
            orth.append(abs(ctx.pair_kinetic(r_hg, d_hg[a]))
                        / (dn * res_norm))

    bound = amplitude_bound
    if bound is None:
        peaks = [float(Rf(as_coords(p.center))) for p in bumps]
        bound = max(max(peaks), 1.0)
    a_hi = 2.0 * bound ** (s / 2.0)
    a_lo = 1.0 / a_hi
    lam_min = 1.0 / (4.0 * eps)
    on_boundary = any(
        p.alpha <= a_lo * 1.0001 or p.alpha >= a_hi * 0.9999
        or p.scale <= lam_min * 1.0001 for p in bumps)

    bubble_field = MultiBump(bumps).field
    v = u - bubble_field
    u_norm = float(np.sqrt(max(ctx.pair_kinetic(u_hg, u_hg), 0.0)))
    return Representation(bumps=bumps, v=v, residual_norm=res_norm,
                          orthogonality=tuple(orth), converged=converged,
                          on_boundary=on_boundary, u_norm=u_norm)


def v_neighborhood_test(u, k: int, eps: float, regions, R,
                        quad_spec: GridSpec | None = None):
    """Membership test for the k-bump neighborhood V(k, eps).

    True iff the optimal representation has residual below eps, every
    amplitude within eps of R(center)^{(2-Q)/4}, every scale above
    1/eps, every center inside its region, and witness centers pairwise
    at least 1 apart.  Returns the verdict and the witness
    representation.
    """
    if isinstance(u, MultiBump):
        u = u.field
    _check_regions(regions)
    n = group.infer_n(region_center(regions[0]))
    cst = constants(n)
    rep = optimal_representation(u, k, eps, regions, R, quad_spec=quad_spec)
    Rf = curvature_field(R, n)
    s = (cst.Q - 2.0) / 2.0
    checks = [rep.residual_norm < eps]
    for i in range(len(rep.bumps)):
        for j in range(i + 1, len(rep.bumps)):
            checks.append(dist(as_coords(rep.bumps[i].center),
                               as_coords(rep.bumps[j].center)) >= 1.0)
    for p, reg in zip(rep.bumps,
                      sorted(regions, key=lambda r: tuple(region_center(r)))):
        rv = float(Rf(as_coords(p.center)))
        target = rv ** (-s / 2.0) if rv > 0 else math.inf
        checks.append(abs(p.alpha - target) < eps)
        checks.append(p.scale > 1.0 / eps)
        checks.append(bool(in_region(as_coords(p.center), reg)))
    return all(checks), rep


# ---------------------------------------------------------------------------
# ansatz and perturbation construction

def _smoothstep_cutoff(center, r0: float, r1: float, n: int) -> ScalarField:
    """1 inside gauge radius r0 of center, 0 outside r1, quintic ramp in
    |.|^4 between (polynomial argument keeps derivatives smooth at the
    center, where the gauge norm itself is not differentiable)."""
    g4 = quartic_power_field(1.0, 0.0, 1.0, n).compose_affine(
        AffineMap.left_translation(inverse(as_coords(center))), 1.0)
    a, b = r0 ** 4, r1 ** 4

    def ramp(v):
        s = np.clip((b - v) / (b - a), 0.0, 1.0)
        return s * s * s * (10.0 + s * (-15.0 + 6.0 * s))

    def dramp(v):
        s = np.clip((b - v) / (b - a), 0.0, 1.0)
        return 30.0 * s * s * (1.0 - s) ** 2 * (-1.0 / (b - a))

    def d2ramp(v):
        s = np.clip((b - v) / (b - a), 0.0, 1.0)
        return 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s) / (b - a) ** 2

    return g4.chain(ramp, dramp, d2ramp)


def ansatz(regions, R, cst: Constants, lam: float, thetas,
           c1: float = 2.0, cutoff_radii: tuple = (1.0, 2.0)) -> MultiBump:
    """Path-family endpoint states theta_i c1 R(xi_i)^{(2-Q)/4} eta_i w_i.

    xi_i is the curvature maximum inside region i, eta_i a smooth gauge
    cutoff.  thetas = 1/c1 lands on the V(k, eps) amplitudes; pushing
    any theta to 1 overshoots the mountain pass and drives the energy
    negative.  The cutoff deficit (eta - 1) w is carried as the
    correction field, so the returned MultiBump evaluates to the exact
    cut-off sum.
    """
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    if len(thetas) != len(regions):
        raise ValueError("one theta per region")
    _check_regions(regions)
    n = group.infer_n(region_center(regions[0]))
    Rf = curvature_field(R, n)
    s = (cst.Q - 2.0) / 2.0
    sep = math.inf
    for i in range(len(regions)):
        for j in range(i + 1, len(regions)):
            sep = min(sep, dist(region_center(regions[i]),
                                region_center(regions[j])))
    r1 = min(cutoff_radii[1], 0.45 * sep)
    r0 = min(cutoff_radii[0], 0.5 * r1)

    bumps = []
    correction = None
    for theta, reg in zip(thetas, regions):
        xi, _ = _peak_scan(Rf, reg)
        amp = float(theta) * c1 * float(Rf(xi)) ** (-s / 2.0)
        if amp == 0.0:
            # a zero-amplitude bump contributes nothing; keep a
            # placeholder so the state remains k-bump shaped
            amp = 0.0
        p = BumpParams(max(amp, 1e-300), xi, lam)
        bumps.append(p)
        eta = _smoothstep_cutoff(xi, r0, r1, n)
        deficit = (eta - 1.0) * bubble(p, cst)
        correction = deficit if correction is None else correction + deficit
    return MultiBump(tuple(bumps), correction)


@dataclass(frozen=True)
class _PerturbComponent:
    anchor: tuple
    anchor_power: np.ndarray
    spec: GridSpec
    mask: np.ndarray
    sup_deviation: float

    def select(self, pts: np.ndarray, r: "RSpec"):
        """Points that lie in this component: inside the local box, on a
        mask node, and satisfying the defining strict inequality."""
        axes = self.spec.axes()
        sel = np.ones(pts.shape[:-1], dtype=bool)
        idx = []
        for i, a in enumerate(axes):
            h = a[1] - a[0]
            ii = np.round((pts[..., i] - a[0]) / h).astype(int)
            sel &= (ii >= 0) & (ii < a.size)
            idx.append(np.clip(ii, 0, a.size - 1))
        sel &= self.mask[tuple(idx)]
        if not np.any(sel):
            return sel, None
        chosen = pts[sel]
        amap = AffineMap.left_translation(inverse(self.anchor_power))
        expr = (r.eps * (r.psi(amap.apply(chosen)) - r.psi_infinity)
                + r.r_infinity - r.tail_amplitude)
        base_here = r.base.field(chosen)
        strict = expr > base_here
        out = np.where(strict, expr, base_here)
        sel2 = np.array(sel)
        sel2[sel] = strict
        return sel2, expr[strict]


def _group_power(e: np.ndarray, l: int) -> np.ndarray:
    """l-fold product e o e o ... o e; the twist vanishes for parallel
    horizontal parts, so the power is the scalar multiple l e."""
    return float(l) * as_coords(e)


def _gauge_sphere_samples(n: int, radii=(0.5, 1.0, 2.0, 4.0, 8.0)
                          ) -> np.ndarray:
    """Points on gauge spheres |xi| = r, z-part along the first complex
    axis: rho = r sqrt(sin phi), t = r^2 cos phi keeps the gauge norm
    exactly r."""
    pts = []
    for r in radii:
        for phi in np.linspace(0.05, math.pi - 0.05, 9):
            for th in np.linspace(0.0, 2.0 * math.pi, 12, endpoint=False):
                rho = r * math.sqrt(math.sin(phi))
                row = [0.0] * (2 * n + 1)
                row[0] = rho * math.cos(th)
                row[n] = rho * math.sin(th)
                row[-1] = r * r * math.cos(phi)
                pts.append(row)
    return np.array(pts)


def tail_oscillation(f: ScalarField, radius: float, limit: float,
                     n: int = 1) -> float:
    """max over sampled |xi| >= radius of |f - limit|, the A_S bound."""
    pts = _gauge_sphere_samples(
        n, radii=tuple(radius * m for m in (1.0, 1.5, 2.0, 3.0, 5.0)))
    return float(np.max(np.abs(np.asarray(f(pts)) - limit)))


def build_perturbation(base: RSpec, psi: ScalarField, eps: float, k: int,
                       m: int, l: int, anchors,
                       psi_infinity: float = 0.0,
                       resolution: int = 49) -> RSpec:
    """The piecewise-perturbed curvature with m detected components.

    On the connected component (grid flood fill) of the strict
    sub-level violation set

        eps (psi((e_i)^{-l} o xi) - psi_inf) + R_inf - A_{sqrt l} > R(xi)

    containing the anchor power (e_i)^l, the left side replaces R; the
    two expressions agree on the component boundary, so the result is
    continuous.  A_{sqrt l} is the sampled tail oscillation of R and
    psi beyond radius sqrt(l).
    """
    anchors = [as_coords(a) for a in anchors]
    if len(anchors) != m:
        raise ValueError("need exactly m anchor points")
    for i in range(m):
        for j in range(i + 1, m):
            if np.allclose(anchors[i], anchors[j]):
                raise ValueError("anchor points must be distinct")
    n = base.n
    # psi must decrease along dilations away from the group origin
    chi = np.asarray(dilation_generator_field(psi)(
        _gauge_sphere_samples(n)))
    if np.any(chi >= 0.0):
        raise ValueError("psi must decrease along dilations away from "
                         "the origin (dilation generator applied to psi "
                         "is nonnegative at a sample point)")
    S = math.sqrt(l)
    a_tail = tail_oscillation(base.field, S, base.r_infinity, n) \
        + tail_oscillation(psi, S, psi_infinity, n)

    comps = []
    half = 1.5 * S
    for e in anchors:
        anchor_power = _group_power(e, l)
        box = []
        for i in range(2 * n):
            box.append((anchor_power[i] - half, anchor_power[i] + half))
        box.append((anchor_power[-1] - half * half,
                    anchor_power[-1] + half * half))
        spacing = tuple((hi - lo) / (resolution - 1) for lo, hi in box)
        spec = GridSpec(n, tuple(box), spacing)
        axes = spec.axes()
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack(mesh, axis=-1)
        amap = AffineMap.left_translation(inverse(anchor_power))
        expr = (eps * (np.asarray(psi(amap.apply(pts))) - psi_infinity)
                + base.r_infinity - a_tail)
        inside = expr > np.asarray(base.field(pts))
        labels, _ = ndimage.label(inside)
        idx = tuple(int(np.clip(round((anchor_power[i] - axes[i][0])
                                      / (axes[i][1] - axes[i][0])),
                                0, axes[i].size - 1))
                    for i in range(2 * n + 1))
        lab = labels[idx]
        if lab == 0:
            raise ValueError(
                "anchor power lies outside its perturbation component; "
                "increase eps or the psi amplitude")
        mask = labels == lab
        sup_dev = float(np.max(np.abs(np.where(mask, expr, 0.0)
                                      - np.where(mask,
                                                 np.asarray(
                                                     base.field(pts)), 0.0))))
        comps.append(_PerturbComponent(
            anchor=tuple(float(v) for v in e),
            anchor_power=anchor_power, spec=spec, mask=mask,
            sup_deviation=sup_dev))

    return RSpec(kind="perturbation", base=base, psi=psi, eps=float(eps),
                 anchors=tuple(tuple(float(v) for v in a) for a in anchors),
                 level=int(l), psi_infinity=float(psi_infinity),
                 tail_amplitude=a_tail, components=tuple(comps),
                 value=base.value, n=n)


# ---------------------------------------------------------------------------
# subcritical continuation

@dataclass(frozen=True)
class ContinuationStage:
    tau: float
    result: FlowResult
    peak_height: float


def subcritical_continuation(start: MultiBump, R, cfg: FlowConfig
                             ) -> list[ContinuationStage]:
    """Walk the tau schedule down to zero, warm-starting each flow.

    The recorded peak height max_i alpha_i c0 lam_i^{(Q-2)/2} is the
    blow-up diagnostic: bounded for flatness exponents in (Q-2, Q),
    growing when the critical limit concentrates.
    """
    cst = constants(start.n)
    s = (cst.Q - 2.0) / 2.0
    stages = []
    state = start
    for tau in cfg.tau_schedule:
        exp = subcritical_exponent(tau, start.n)
        result = gradient_flow(state, R, exp, cfg)
        peak = max(p.alpha * cst.c0 * p.scale ** s for p in result.final.bumps)
        stages.append(ContinuationStage(tau=tau, result=result,
                                        peak_height=peak))
        if result.status in ("escape", "step-collapse"):
            break
        state = result.final
    return stages
