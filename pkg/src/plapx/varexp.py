"""Variable-exponent Lebesgue machinery on triangulated domains.

The modular is rho(u) = integral of |u(x)|^p(x); the Luxemburg norm is the
unique k > 0 with rho(u/k) = 1, found by bisection.  Integrals are
quadrature sums over a :class:`QuadratureContext` (symmetric degree-4
triangle rule by default), so every norm here is the norm of the quadrature
measure, consistent across all modules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .expressions import ScalarFieldExpr, DifferentiationError, parse_field

__all__ = [
    "QuadratureContext",
    "ExponentField",
    "modular",
    "luxemburg_norm",
    "holder_check",
    "HolderCheck",
    "sobolev_conjugate",
    "log_holder_modulus",
    "mollify_exponent",
    "field_values",
    "EvaluationError",
    "PreconditionError",
    "NonconvergenceError",
]


class EvaluationError(ArithmeticError):
    """Non-finite field value at a quadrature point."""

    def __init__(self, message, x=None, y=None):
        if x is not None:
            message = f"{message} at point ({x:.17g}, {y:.17g})"
        super().__init__(message)
        self.point = None if x is None else (x, y)


class PreconditionError(ValueError):
    def __init__(self, message, x=None, y=None):
        if x is not None:
            message = f"{message}; worst point ({x:.17g}, {y:.17g})"
        super().__init__(message)
        self.point = None if x is None else (x, y)


class NonconvergenceError(RuntimeError):
    pass


# Symmetric 6-point triangle rule, exact through degree 4 (weights in
# barycentric form, normalized to the reference-triangle area 1/2).
_D4_A = 0.445948490915965
_D4_B = 0.091576213509771
_D4_W1 = 0.223381589678011
_D4_W2 = 0.109951743655322


def _degree4_rule():
    a, b = _D4_A, _D4_B
    pts = np.array([
        [a, a, 1.0 - 2.0 * a],
        [a, 1.0 - 2.0 * a, a],
        [1.0 - 2.0 * a, a, a],
        [b, b, 1.0 - 2.0 * b],
        [b, 1.0 - 2.0 * b, b],
        [1.0 - 2.0 * b, b, b],
    ])
    w = 0.5 * np.array([_D4_W1] * 3 + [_D4_W2] * 3)
    return pts, w, 4


class QuadratureContext:
    """Physical quadrature points and weights for a whole mesh.

    ``points`` has shape (triangles, nodes, 2) and ``weights`` (triangles,
    nodes); weights are positive and sum to the mesh area.
    """

    def __init__(self, mesh, degree=4):
        if degree > 4:
            raise ValueError("only rules up to degree 4 are built in")
        bary, ref_w, rule_degree = _degree4_rule()
        self.mesh = mesh
        self.bary = bary
        self.ref_weights = ref_w
        self.degree = rule_degree
        corners = mesh.points[mesh.triangles]
        self.points = np.einsum("qi,tid->tqd", bary, corners)
        self.weights = 2.0 * mesh.areas[:, None] * ref_w[None, :]
        self.x = self.points[..., 0]
        self.y = self.points[..., 1]
        for arr in (self.points, self.weights, self.x, self.y):
            arr.setflags(write=False)

    @property
    def total_weight(self):
        return float(self.weights.sum())


def field_values(f, x, y):
    """Values of a field object at coordinate arrays.

    Accepts expression ASTs, ExponentFields, anything with an ``evaluate``
    method, plain callables, numbers, or a ready-made ndarray of matching
    shape.
    """
    x = np.asarray(x, dtype=float)
    if isinstance(f, np.ndarray):
        if f.shape != x.shape:
            raise ValueError(
                f"value array shape {f.shape} does not match points {x.shape}")
        return f.astype(float, copy=False)
    if isinstance(f, ExponentField):
        return field_values(f.field, x, y)
    if isinstance(f, (int, float)):
        return np.full(x.shape, float(f))
    if hasattr(f, "evaluate"):
        vals = f.evaluate(x, y)
    elif callable(f):
        vals = f(x, y)
    else:
        raise TypeError(f"cannot evaluate field of type {type(f).__name__}")
    return np.broadcast_to(np.asarray(vals, dtype=float), x.shape)


def _check_finite(vals, qctx, what):
    bad = ~np.isfinite(vals)
    if np.any(bad):
        idx = tuple(np.argwhere(bad)[0])
        raise EvaluationError(f"non-finite {what} value",
                              qctx.x[idx], qctx.y[idx])


@dataclass
class ExponentField:
    """An exponent p(x) together with certified or sampled bounds.

    ``p1``/``p2`` bound the essential range and ``lip`` the Lipschitz
    constant.  Bounds passed explicitly are taken as exact; bounds from
    :meth:`from_expression` are dense-sampling estimates and ``meta``
    records the sample count.
    """

    field: object
    p1: float
    p2: float
    lip: float
    domain: object = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (np.isfinite(self.p1) and np.isfinite(self.p2)
                and np.isfinite(self.lip)):
            raise ValueError("exponent bounds must be finite")
        if self.p1 < 1.0:
            raise ValueError(f"exponent lower bound {self.p1} is below 1")
        if self.p1 > self.p2:
            raise ValueError("p1 must not exceed p2")
        if self.lip < 0:
            raise ValueError("Lipschitz bound must be >= 0")

    @classmethod
    def constant(cls, value):
        return cls(parse_field(repr(float(value))), float(value),
                   float(value), 0.0)

    @classmethod
    def from_expression(cls, expr, domain, min_samples=10000):
        """Estimate p1, p2 and lip by dense sampling inside the domain."""
        if isinstance(expr, str):
            expr = parse_field(expr)
        from .expressions import Num
        if isinstance(expr, Num):
            return cls(expr, expr.value, expr.value, 0.0, domain=domain)
        lo, hi = domain.bounding_box()
        n = 128
        while True:
            gx, gy = np.meshgrid(np.linspace(lo[0], hi[0], n),
                                 np.linspace(lo[1], hi[1], n))
            pts = np.column_stack([gx.ravel(), gy.ravel()])
            inside = domain.contains(pts)
            if inside.sum() >= min_samples or n >= 1024:
                break
            n *= 2
        xs, ys = pts[inside, 0], pts[inside, 1]
        vals = field_values(expr, xs, ys)
        if not np.all(np.isfinite(vals)):
            raise EvaluationError("exponent not finite on the domain")
        try:
            px = field_values(expr.diff("x"), xs, ys)
            py = field_values(expr.diff("y"), xs, ys)
            lip = float(np.max(np.hypot(px, py)))
            method = "gradient"
        except DifferentiationError:
            h = 1e-6 * max(1.0, float(np.max(hi - lo)))
            px = (field_values(expr, xs + h, ys)
                  - field_values(expr, xs - h, ys)) / (2 * h)
            py = (field_values(expr, xs, ys + h)
                  - field_values(expr, xs, ys - h)) / (2 * h)
            lip = float(np.max(np.hypot(px, py)))
            method = "finite-difference"
        return cls(expr, float(vals.min()), float(vals.max()), lip,
                   domain=domain,
                   meta={"estimated": True, "n_samples": int(inside.sum()),
                         "lip_method": method})

    def evaluate(self, x, y):
        return field_values(self.field, np.asarray(x, float),
                            np.asarray(y, float))

    def gradient(self, x, y):
        """Gradient of the exponent, symbolic when available."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if isinstance(self.field, ScalarFieldExpr):
            try:
                return (field_values(self.field.diff("x"), x, y),
                        field_values(self.field.diff("y"), x, y))
            except DifferentiationError:
                pass
        h = 1e-6
        gx = (field_values(self.field, x + h, y)
              - field_values(self.field, x - h, y)) / (2 * h)
        gy = (field_values(self.field, x, y + h)
              - field_values(self.field, x, y - h)) / (2 * h)
        return gx, gy


def _modular_sum(vals, pv, w):
    with np.errstate(over="ignore"):
        return float(np.sum(w * np.abs(vals) ** pv))


def modular(u, p: ExponentField, qctx: QuadratureContext, mask=None):
    """rho(u) = integral of |u|^p(x) over the mesh (quadrature sum)."""
    vals = field_values(u, qctx.x, qctx.y)
    _check_finite(vals, qctx, "integrand")
    pv = field_values(p, qctx.x, qctx.y)
    _check_finite(pv, qctx, "exponent")
    if mask is None:
        w = qctx.weights
    else:
        w = qctx.weights * mask
        vals = np.where(w > 0, vals, 0.0)
    return _modular_sum(vals, pv, w)


def luxemburg_norm(u, p: ExponentField, qctx: QuadratureContext, mask=None,
                   rel_tol=1e-10):
    """Luxemburg norm: the k > 0 with rho(u/k) = 1, by bisection.

    Returns 0 for a function vanishing at every quadrature node.  The
    bracket [|u|_L1/(1+|Omega|), hi] is guaranteed to contain the root;
    ``hi`` starts at 1 and doubles while rho(u/hi) >= 1.
    """
    vals = np.abs(field_values(u, qctx.x, qctx.y))
    _check_finite(vals, qctx, "integrand")
    pv = field_values(p, qctx.x, qctx.y)
    _check_finite(pv, qctx, "exponent")
    if mask is None:
        w = qctx.weights
    else:
        w = qctx.weights * mask
        # points outside the mask must not poison the sum via 0 * inf
        vals = np.where(w > 0, vals, 0.0)

    if not np.any((vals > 0) & (w > 0)):
        return 0.0

    def rho(k):
        with np.errstate(over="ignore"):
            return float(np.sum(w * (vals / k) ** pv))

    l1 = float(np.sum(w * vals))
    omega = float(np.sum(w))
    lo = l1 / (1.0 + omega)
    hi = 1.0
    for _ in range(200):
        if rho(hi) < 1.0:
            break
        hi *= 2.0
    else:
        raise NonconvergenceError("Luxemburg bracket expansion failed")
    if hi < lo:
        # cannot happen for a monotone modular, guard anyway
        raise NonconvergenceError("Luxemburg bracket is empty")

    for _ in range(200):
        if hi - lo <= rel_tol * hi:
            break
        mid = 0.5 * (lo + hi)
        if rho(mid) >= 1.0:
            lo = mid
        else:
            hi = mid
    else:
        raise NonconvergenceError("Luxemburg bisection did not converge")
    return 0.5 * (lo + hi)


@dataclass
class HolderCheck:
    lhs: float
    rhs: float
    satisfied: bool
    constant: float = 2.0


def holder_check(f, g, p: ExponentField, q: ExponentField, s: ExponentField,
                 qctx: QuadratureContext, tol=1e-9) -> HolderCheck:
    """Check |fg|_s <= 2 |f|_p |g|_q for conjugate-split exponents.

    Requires 1/p + 1/q = 1/s pointwise (to 1e-12) at the quadrature nodes.
    """
    pv = field_values(p, qctx.x, qctx.y)
    qv = field_values(q, qctx.x, qctx.y)
    sv = field_values(s, qctx.x, qctx.y)
    err = np.abs(1.0 / pv + 1.0 / qv - 1.0 / sv)
    worst = np.unravel_index(np.argmax(err), err.shape)
    if err[worst] > 1e-12:
        raise PreconditionError(
            f"exponents are not conjugate: |1/p + 1/q - 1/s| = "
            f"{err[worst]:.3e}", qctx.x[worst], qctx.y[worst])
    fv = field_values(f, qctx.x, qctx.y)
    gv = field_values(g, qctx.x, qctx.y)
    lhs = luxemburg_norm(fv * gv, s, qctx)
    rhs = 2.0 * luxemburg_norm(fv, p, qctx) * luxemburg_norm(gv, q, qctx)
    return HolderCheck(lhs, rhs, bool(lhs <= rhs + tol))


def sobolev_conjugate(p_val: float, n_dim: int = 2) -> float:
    """Sobolev conjugate exponent n*p/(n-p), +inf once p reaches n."""
    if p_val < 1.0:
        raise ValueError("exponent must be >= 1")
    if n_dim < 1:
        raise ValueError("dimension must be >= 1")
    if p_val < n_dim:
        return n_dim * p_val / (n_dim - p_val)
    return math.inf


def log_holder_modulus(p: ExponentField, pairs) -> float:
    """max over sample pairs of |p(a) - p(b)| * log(e + 1/|a - b|).

    Boundedness of this modulus is the standard continuity requirement on
    variable exponents; constants give exactly 0.
    """
    pairs = np.asarray(pairs, dtype=float)
    if pairs.ndim != 2 or pairs.shape[1] != 4:
        raise ValueError("pairs must be an (m, 4) array [x1 y1 x2 y2]")
    d = np.hypot(pairs[:, 0] - pairs[:, 2], pairs[:, 1] - pairs[:, 3])
    if np.any(d == 0):
        raise ValueError("sample pairs must be distinct points")
    pa = field_values(p, pairs[:, 0], pairs[:, 1])
    pb = field_values(p, pairs[:, 2], pairs[:, 3])
    return float(np.max(np.abs(pa - pb) * np.log(math.e + 1.0 / d)))


class _MollifiedField:
    """Mollification of an exponent extended constantly outside the domain.

    The mollifier is the standard bump supported on the delta-ball; its
    quadrature weights are normalized to sum to one, so constants are
    reproduced exactly and both the sup-distance and Lipschitz guarantees
    survive discretization.
    """

    def __init__(self, base, domain, delta, nodes=12):
        self.base = base
        self.domain = domain
        self.delta = float(delta)
        gx, gw = np.polynomial.legendre.leggauss(nodes)
        wx, wy = np.meshgrid(gx, gx)
        ww = np.outer(gw, gw).ravel()
        wx = wx.ravel()
        wy = wy.ravel()
        r2 = wx * wx + wy * wy
        keep = r2 < 1.0 - 1e-12
        bump = np.exp(-1.0 / (1.0 - r2[keep]))
        w = ww[keep] * bump
        self.offsets = self.delta * np.column_stack([wx[keep], wy[keep]])
        self.weights = w / w.sum()

    def evaluate(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        xs = np.broadcast_to(x, shape).ravel()
        ys = np.broadcast_to(y, shape).ravel()
        acc = np.zeros(xs.shape)
        for (ox, oy), w in zip(self.offsets, self.weights):
            shifted = self.domain.project(
                np.column_stack([xs - ox, ys - oy]))
            acc += w * field_values(self.base, shifted[:, 0], shifted[:, 1])
        out = acc.reshape(shape)
        return float(out) if out.ndim == 0 else out


def mollify_exponent(p: ExponentField, delta: float) -> ExponentField:
    """Smoothed exponent p_delta with |p_delta - p| <= lip*delta and the
    same Lipschitz bound; needs the field's domain for the extension."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    if p.domain is None:
        raise ValueError(
            "exponent field has no domain; build it with from_expression")
    moll = _MollifiedField(p.field, p.domain, delta)
    meta = dict(p.meta)
    meta["mollified_delta"] = float(delta)
    return ExponentField(moll, p.p1, p.p2, p.lip, domain=p.domain, meta=meta)
