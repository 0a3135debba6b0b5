"""Pointwise coefficient fields and discrete regularity diagnostics.

The non-divergence form of the regularized equation has coefficients

    a_ij = delta_ij + (p(x) - 2) u_i u_j / v^2,      v = sqrt(eps + |grad u|^2)
    a_rhs = log(v) <grad u, grad p> + f v^(2 - p)

whose eigenvalues are 1 and 1 + (p-2)|grad u|^2/v^2, hence the uniform
ellipticity sandwich min(p1-1, 1) <= xi.a.xi <= max(p2-1, 1) for unit xi.
The rest of the module estimates interior second-derivative mass two
independent ways (lattice difference quotients of the recovered gradient,
and element gradients of the recovered gradient), measures the exponent
split used for sources of low integrability, and checks the boundary
curvature identity that drives the convex-domain estimate.
"""

from __future__ import annotations

import math
import warnings as _warnings
from dataclasses import dataclass

import numpy as np

from .assembly import P1Function
from .expressions import parse_field
from .varexp import (ExponentField, QuadratureContext, field_values,
                     luxemburg_norm, PreconditionError)

__all__ = [
    "CoefficientSample",
    "GridSampling",
    "coefficients",
    "ellipticity_check",
    "EllipticityReport",
    "sample_on_lattice",
    "difference_quotient",
    "default_window",
    "recover_gradient",
    "h1_window_distance",
    "h2_estimate_dq",
    "h2_estimate_recovery",
    "lp_gradient_norm",
    "split_exponents",
    "integrability_split_report",
    "SplitReport",
    "log_bound_check",
    "curvature_identity_check",
    "IdentityReport",
    "p1_scaling_report",
    "ScalingReport",
    "SamplingError",
]


class SamplingError(ValueError):
    pass


@dataclass
class CoefficientSample:
    """Coefficient fields sampled at a batch of points (array fields)."""

    points: np.ndarray
    grad: np.ndarray
    p_vals: np.ndarray
    f_vals: np.ndarray
    grad_p: np.ndarray
    eps: np.ndarray
    v_eps: np.ndarray
    a11: np.ndarray
    a12: np.ndarray
    a22: np.ndarray
    a_rhs: np.ndarray

    @classmethod
    def from_state(cls, points, grad, p_vals, f_vals, grad_p, eps):
        """Build the coefficient fields from raw state (vectorized)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        grad = np.atleast_2d(np.asarray(grad, dtype=float))
        p_vals = np.asarray(p_vals, dtype=float)
        f_vals = np.asarray(f_vals, dtype=float)
        grad_p = np.atleast_2d(np.asarray(grad_p, dtype=float))
        eps = np.broadcast_to(np.asarray(eps, dtype=float), p_vals.shape)
        if np.any(eps <= 0) or np.any(eps > 1):
            raise ValueError("eps must lie in (0, 1]")
        gx, gy = grad[:, 0], grad[:, 1]
        v2 = eps + gx * gx + gy * gy
        v = np.sqrt(v2)
        c = (p_vals - 2.0) / v2
        a11 = 1.0 + c * gx * gx
        a12 = c * gx * gy
        a22 = 1.0 + c * gy * gy
        dot = gx * grad_p[:, 0] + gy * grad_p[:, 1]
        a_rhs = np.log(v) * dot + f_vals * v ** (2.0 - p_vals)
        return cls(points, grad, p_vals, f_vals, grad_p, eps, v, a11, a12,
                   a22, a_rhs)

    def __len__(self):
        return len(self.p_vals)


def coefficients(u: P1Function, p: ExponentField, f, eps,
                 pts) -> CoefficientSample:
    """Sample the non-divergence coefficients of the current iterate."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    grad = u.gradient_at(x, y)
    pv = field_values(p, x, y)
    fv = field_values(f, x, y)
    gpx, gpy = p.gradient(x, y)
    return CoefficientSample.from_state(pts, grad, pv, fv,
                                        np.column_stack([gpx, gpy]), eps)


@dataclass
class EllipticityReport:
    lower: float
    upper: float
    low_margin: float
    high_margin: float
    satisfied: bool
    n_samples: int
    trials: int


def ellipticity_check(sample: CoefficientSample, p1: float, p2: float,
                      trials: int = 8, seed: int = 0,
                      tol: float = 1e-10) -> EllipticityReport:
    """Uniform ellipticity sandwich over random unit directions.

    For every sample and ``trials`` random unit vectors xi, checks
    min(p1-1, 1) - tol <= xi.a.xi <= max(p2-1, 1) + tol.
    """
    if not (1.0 < p1 <= p2):
        raise ValueError("need 1 < p1 <= p2")
    n = len(sample)
    rng = np.random.Generator(np.random.Philox(seed))
    xi = rng.normal(size=(trials, n, 2))
    norm = np.hypot(xi[..., 0], xi[..., 1])
    small = norm < 1e-12
    xi[small] = (1.0, 0.0)
    norm[small] = 1.0
    xi /= norm[..., None]
    q = (xi[..., 0] ** 2 * sample.a11
         + 2.0 * xi[..., 0] * xi[..., 1] * sample.a12
         + xi[..., 1] ** 2 * sample.a22)
    lower = min(p1 - 1.0, 1.0)
    upper = max(p2 - 1.0, 1.0)
    low_margin = float(np.min(q - lower))
    high_margin = float(np.min(upper - q))
    ok = low_margin >= -tol and high_margin >= -tol
    return EllipticityReport(lower, upper, low_margin, high_margin, ok, n,
                             trials)


@dataclass
class GridSampling:
    """Values on an axis-aligned lattice: values[ix, iy] sits at
    origin + (ix*spacing, iy*spacing)."""

    origin: tuple
    spacing: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise SamplingError("lattice values must be 2-d")
        if not (self.spacing > 0):
            raise SamplingError("lattice spacing must be positive")

    @property
    def shape(self):
        return self.values.shape

    def points(self):
        nx, ny = self.values.shape
        xs = self.origin[0] + self.spacing * np.arange(nx)
        ys = self.origin[1] + self.spacing * np.arange(ny)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return gx, gy


def sample_on_lattice(f, origin, spacing, nx, ny, domain=None) -> GridSampling:
    """Sample a field on a lattice; with a domain, enforce the interior
    margin of two lattice spacings."""
    if nx < 2 or ny < 2:
        raise SamplingError("lattice needs at least 2 points per axis")
    xs = origin[0] + spacing * np.arange(nx)
    ys = origin[1] + spacing * np.arange(ny)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    if domain is not None:
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        clearance = domain.line_distance(pts)
        if np.min(clearance) < 2.0 * spacing - 1e-12:
            k = int(np.argmin(clearance))
            raise SamplingError(
                f"lattice point ({pts[k, 0]:.6g}, {pts[k, 1]:.6g}) violates "
                f"the 2h margin (clearance {clearance[k]:.3e})")
    vals = field_values(f, gx, gy)
    return GridSampling((float(origin[0]), float(origin[1])), float(spacing),
                        vals)


def difference_quotient(grid: GridSampling, axis: int, order: int = 1,
                        backward: bool = False) -> GridSampling:
    """Lattice difference quotient along an axis.

    Order 1 is (F(x + h e_k) - F(x))/h, attached at x for the forward
    version and at x + h e_k for the backward (step -h) version.  Order 2 is
    literally the backward quotient of the forward quotient, i.e. the
    centered second difference on the interior nodes.
    """
    if axis not in (0, 1):
        raise ValueError("axis must be 0 or 1")
    if order == 2:
        return difference_quotient(
            difference_quotient(grid, axis, 1, backward=False),
            axis, 1, backward=True)
    if order != 1:
        raise ValueError("order must be 1 or 2")
    v = grid.values
    if v.shape[axis] < 2:
        raise SamplingError("lattice too small for a difference quotient")
    d = np.diff(v, axis=axis) / grid.spacing
    origin = list(grid.origin)
    if backward:
        origin[axis] += grid.spacing
    return GridSampling(tuple(origin), grid.spacing, d)


def _polygon_centroid(poly):
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * np.sum(cross)
    cx = np.sum((x + xn) * cross) / (6.0 * a)
    cy = np.sum((y + yn) * cross) / (6.0 * a)
    return np.array([cx, cy])


def default_window(domain, spacing, margin=None):
    """Largest centered axis-aligned lattice window with an interior margin
    of two lattice spacings.  Returns (origin, spacing, nx, ny).

    If the requested spacing leaves no room for at least a 3x3 lattice the
    spacing is halved (at most four times) before giving up; the returned
    spacing is the one actually used.
    """
    c = _polygon_centroid(domain.polyline)
    lo, hi = domain.bounding_box()
    half = 0.5 * (hi - lo)
    corners_dir = np.array([(-1, -1), (-1, 1), (1, -1), (1, 1)], dtype=float)

    def max_extent(req_margin):
        def fits(alpha):
            pts = c + alpha * corners_dir * half
            return bool(np.all(domain.line_distance(pts) >= req_margin))

        if not fits(1e-6):
            return None
        lo_a, hi_a = 1e-6, 1.0
        if fits(1.0):
            lo_a = 1.0
        else:
            for _ in range(48):
                mid = 0.5 * (lo_a + hi_a)
                if fits(mid):
                    lo_a = mid
                else:
                    hi_a = mid
        return lo_a * half

    s = float(spacing)
    for _ in range(5):
        m = 2.0 * s if margin is None else float(margin)
        ext = max_extent(m)
        if ext is not None:
            nx = int(math.floor(2.0 * ext[0] / s)) + 1
            ny = int(math.floor(2.0 * ext[1] / s)) + 1
            if nx >= 3 and ny >= 3:
                origin = (c[0] - 0.5 * (nx - 1) * s,
                          c[1] - 0.5 * (ny - 1) * s)
                return origin, s, nx, ny
        s *= 0.5
    raise SamplingError(
        f"no lattice window with margin fits inside the domain "
        f"(requested spacing {spacing:.3g})")


def recover_gradient(u: P1Function):
    """Continuous P1 gradient by area-weighted vertex averaging."""
    mesh = u.mesh
    g = u.triangle_gradients()
    num = np.zeros((mesh.n_points, 2))
    den = np.zeros(mesh.n_points)
    for i in range(3):
        np.add.at(num, mesh.triangles[:, i], mesh.areas[:, None] * g)
        np.add.at(den, mesh.triangles[:, i], mesh.areas)
    w = num / den[:, None]
    return P1Function(mesh, w[:, 0]), P1Function(mesh, w[:, 1])


def h2_estimate_dq(u: P1Function, window) -> float:
    """Interior H2 seminorm estimate: l2 lattice norm of first difference
    quotients of the recovered gradient components."""
    origin, spacing, nx, ny = window
    if u.mesh.h > spacing + 1e-12:
        _warnings.warn(
            f"mesh size {u.mesh.h:.3g} exceeds lattice spacing "
            f"{spacing:.3g}; difference quotients may be under-resolved",
            RuntimeWarning, stacklevel=2)
    wx, wy = recover_gradient(u)
    total = 0.0
    for comp in (wx, wy):
        grid = sample_on_lattice(comp, origin, spacing, nx, ny)
        for axis in (0, 1):
            d = difference_quotient(grid, axis)
            total += float(np.sum(d.values ** 2))
    return math.sqrt(spacing * spacing * total)


def h1_window_distance(ua: P1Function, ub: P1Function, window) -> float:
    """Discrete H1 distance between two solutions on a lattice window.

    The solutions may live on different meshes; both are sampled (values
    and recovered gradients) on the same lattice, which must lie inside
    both domains.
    """
    origin, spacing, nx, ny = window
    total = 0.0
    for fa, fb in ((ua, ub),
                   *zip(recover_gradient(ua), recover_gradient(ub))):
        ga = sample_on_lattice(fa, origin, spacing, nx, ny)
        gb = sample_on_lattice(fb, origin, spacing, nx, ny)
        total += float(np.sum((ga.values - gb.values) ** 2))
    return math.sqrt(spacing * spacing * total)


def h2_estimate_recovery(u: P1Function) -> float:
    """Global H2 seminorm estimate: L2 norm of the element gradients of the
    recovered gradient components."""
    wx, wy = recover_gradient(u)
    mesh = u.mesh
    total = 0.0
    for comp in (wx, wy):
        g = comp.triangle_gradients()
        total += float(np.sum(mesh.areas * np.einsum("td,td->t", g, g)))
    return math.sqrt(total)


def lp_gradient_norm(u: P1Function, p: ExponentField,
                     qctx: QuadratureContext) -> float:
    """Luxemburg norm of |grad u| with the variable exponent."""
    g = u.triangle_gradients()
    gn = np.hypot(g[:, 0], g[:, 1])
    vals = np.broadcast_to(gn[:, None], qctx.x.shape)
    return luxemburg_norm(vals, p, qctx)


def split_exponents(p_vals, q_vals):
    """Pointwise split exponents on the region where p < 2.

    Returns (f_exponent, weight_exponent, growth_exponent): the Hoelder
    exponent applied to the source, its conjugate partner applied to the
    degenerate weight, and the resulting growth exponent of the weight.
    """
    p_vals = np.asarray(p_vals, dtype=float)
    q_vals = np.asarray(q_vals, dtype=float)
    if np.any(p_vals >= 2.0):
        raise ValueError("split exponents are defined only where p < 2")
    if np.any(q_vals <= 2.0):
        raise ValueError("the integrability exponent must exceed 2")
    branch1 = p_vals >= 1.0 / q_vals + 1.5
    f_exp = np.where(branch1, 1.0 / (2.0 * p_vals - 3.0) + 1.0,
                     0.5 * q_vals + 1.0)
    w_exp = 2.0 * f_exp / (f_exp - 2.0)
    growth = w_exp * (2.0 - p_vals)
    return f_exp, w_exp, growth


@dataclass
class SplitReport:
    vacuous: bool
    meas_A2: float
    q1: float
    q2: float
    f_exponent_range: tuple
    weight_exponent_range: tuple
    growth_range: tuple
    band: tuple
    band_satisfied: bool
    conjugate_defect: float
    direct: float
    split_f: float
    split_weight: float
    split: float
    holder_satisfied: bool


def integrability_split_report(u: P1Function, p: ExponentField, f,
                               q: ExponentField, eps: float,
                               qctx: QuadratureContext,
                               tol: float = 1e-9) -> SplitReport:
    """Compare the direct weighted-source L2 norm on {p < 2} against the
    Hoelder-split bound 2 |f|_(f_exp) |v^(2-p)|_(w_exp)."""
    pv = field_values(p, qctx.x, qctx.y)
    qv = field_values(q, qctx.x, qctx.y)
    mask = (pv < 2.0).astype(float)
    meas = float(np.sum(qctx.weights * mask))
    if meas == 0.0:
        return SplitReport(True, 0.0, math.nan, math.nan,
                           (math.nan, math.nan), (math.nan, math.nan),
                           (math.nan, math.nan), (math.nan, math.nan), True,
                           0.0, 0.0, 0.0, 0.0, 0.0, True)
    sel = mask > 0
    q1 = float(np.min(qv[sel]))
    q2 = float(np.max(qv[sel]))
    if q1 <= 2.0:
        raise PreconditionError(
            f"integrability exponent must exceed 2 on the degenerate region, "
            f"found {q1}")

    f_exp = np.full_like(pv, 4.0)
    w_exp = np.full_like(pv, 4.0)
    growth = np.full_like(pv, 0.0)
    fe, we, gr = split_exponents(pv[sel], qv[sel])
    f_exp[sel], w_exp[sel], growth[sel] = fe, we, gr

    band_low = 1.0 + 2.0 / q2
    band_high = max(2.0, 2.0 + 8.0 / (q1 - 2.0))
    band_ok = bool(np.all((gr >= band_low - 1e-12)
                          & (gr <= band_high + 1e-12)))
    conj = float(np.max(np.abs(2.0 / fe + 2.0 / we - 1.0)))

    g = u.triangle_gradients()
    gn2 = np.einsum("td,td->t", g, g)
    v = np.sqrt(gn2[:, None] + eps)
    v = np.broadcast_to(v, qctx.x.shape)
    fv = field_values(f, qctx.x, qctx.y)
    weight = v ** (2.0 - pv)

    two = ExponentField.constant(2.0)
    direct = luxemburg_norm(fv * weight, two, qctx, mask=mask)
    split_f = luxemburg_norm(fv, f_exp, qctx, mask=mask)
    split_w = luxemburg_norm(weight, w_exp, qctx, mask=mask)
    split = split_f * split_w
    return SplitReport(
        vacuous=False, meas_A2=meas, q1=q1, q2=q2,
        f_exponent_range=(float(np.min(fe)), float(np.max(fe))),
        weight_exponent_range=(float(np.min(we)), float(np.max(we))),
        growth_range=(float(np.min(gr)), float(np.max(gr))),
        band=(band_low, band_high), band_satisfied=band_ok,
        conjugate_defect=conj, direct=direct, split_f=split_f,
        split_weight=split_w, split=split,
        holder_satisfied=bool(direct <= 2.0 * split + tol))


def log_bound_check(u: P1Function, eps: float, s: float,
                    qctx: QuadratureContext):
    """Check log(v) <= (2/(e s)) v^(s/2) on the region |grad u| > 1.

    Returns a dict with the observed maximum ratio, the bound, and the
    measure of the region; vacuous (and satisfied) when the region is empty.
    """
    if not (0.0 < s < 1.0):
        raise ValueError("s must lie in (0, 1)")
    g = u.triangle_gradients()
    gn2 = np.einsum("td,td->t", g, g)
    mask = gn2 > 1.0
    bound = 2.0 / (math.e * s)
    meas = float(np.sum(qctx.weights * mask[:, None]))
    if not np.any(mask):
        return {"max_ratio": 0.0, "bound": bound, "satisfied": True,
                "omega1_measure": 0.0, "vacuous": True}
    v = np.sqrt(gn2[mask] + eps)
    ratio = float(np.max(np.log(v) / v ** (0.5 * s)))
    return {"max_ratio": ratio, "bound": bound,
            "satisfied": bool(ratio <= bound + 1e-12),
            "omega1_measure": meas, "vacuous": False}


@dataclass
class IdentityReport:
    lhs: float
    rhs: float
    abs_err: float


def curvature_identity_check(u, n_r: int = 96, n_theta: int = 512,
                             boundary_tol: float = 1e-10) -> IdentityReport:
    """Determinant-of-Hessian identity on the unit disk.

    For u vanishing on the unit circle,

        integral over the disk of (u_xy^2 - u_xx u_yy)
            = - integral over the circle of (du/dnu)^2 * (H/2),  H = 1.

    Both sides are evaluated with polar quadrature (Gauss-Legendre radially,
    uniform in angle); u must vanish on the boundary to ``boundary_tol``.
    """
    if isinstance(u, str):
        u = parse_field(u)
    th_check = 2.0 * np.pi * np.arange(4096) / 4096
    bvals = u.evaluate(np.cos(th_check), np.sin(th_check))
    worst = int(np.argmax(np.abs(bvals)))
    if np.abs(bvals[worst]) > boundary_tol:
        raise PreconditionError(
            f"u does not vanish on the unit circle: |u| = "
            f"{np.abs(bvals[worst]):.3e}",
            math.cos(th_check[worst]), math.sin(th_check[worst]))

    ux = u.diff("x")
    uy = u.diff("y")
    uxx = ux.diff("x")
    uxy = ux.diff("y")
    uyy = uy.diff("y")

    nodes, wts = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * (nodes + 1.0)
    wr = 0.5 * wts
    th = 2.0 * np.pi * np.arange(n_theta) / n_theta
    wt = 2.0 * np.pi / n_theta
    R, TH = np.meshgrid(r, th, indexing="ij")
    X = R * np.cos(TH)
    Y = R * np.sin(TH)
    det = uxy.evaluate(X, Y) ** 2 - uxx.evaluate(X, Y) * uyy.evaluate(X, Y)
    lhs = float(np.sum(wr[:, None] * wt * det * R))

    cx, sy = np.cos(th), np.sin(th)
    dnu = ux.evaluate(cx, sy) * cx + uy.evaluate(cx, sy) * sy
    rhs = -0.5 * float(np.sum(wt * dnu ** 2))
    return IdentityReport(lhs, rhs, abs(lhs - rhs))


@dataclass
class ScalingReport:
    slope: float
    intercept: float
    kappa: float
    bound: float
    within_bound: bool
    degenerate: bool
    warning: str = ""


def p1_scaling_report(p1_values, h2_values, kappa: float = 1.0) -> ScalingReport:
    """Least-squares slope of log(h2) against log(1/(p1 - 1)).

    The growth-exponent ceiling is kappa + 0.5 (kappa = 1 on convex
    polygons).  A sweep with no spread in p1 is degenerate: slope 0 plus a
    warning, never a fit.
    """
    p1_values = np.asarray(p1_values, dtype=float)
    h2_values = np.asarray(h2_values, dtype=float)
    if len(p1_values) != len(h2_values) or len(p1_values) < 2:
        raise ValueError("need matching lists with at least 2 sweep members")
    if np.any(p1_values <= 1.0):
        raise ValueError("p1 values must exceed 1")
    if np.any(h2_values <= 0.0):
        raise ValueError("H2 estimates must be positive")
    x = np.log(1.0 / (p1_values - 1.0))
    y = np.log(h2_values)
    bound = kappa + 0.5
    if np.max(x) - np.min(x) < 1e-12:
        return ScalingReport(0.0, float(np.mean(y)), kappa, bound, True, True,
                             "degenerate sweep: no spread in p1")
    slope, intercept = np.polyfit(x, y, 1)
    return ScalingReport(float(slope), float(intercept), kappa, bound,
                         bool(slope <= bound + 1e-12), False)
