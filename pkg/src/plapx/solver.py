"""Damped Newton continuation for the regularized problem.

One solve fixes eps and drives the residual of the discrete system to
tolerance with Newton steps, backtracking on the residual norm; if Newton
stalls, a frozen-coefficient fallback iteration takes over.  Continuation
sweeps eps geometrically from eps_start to eps_stop, warm-starting each
solve from the previous solution, and records the diagnostics used by the
sweep commands.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import regularity
from .assembly import (P1Function, SparseSymmetricOperator, apply_dirichlet,
                       assemble_jacobian, assemble_load, assemble_residual,
                       energy, weighted_stiffness)
from .expressions import parse_field
from .geometry import triangulate_convex
from .varexp import ExponentField, QuadratureContext, field_values

__all__ = [
    "ProblemSpec",
    "SolveReport",
    "EpsRecord",
    "SolveStats",
    "solve_regularized",
    "continuation_solve",
    "linear_solve",
    "validate_spec",
    "masked_source",
    "with_mollified_exponent",
    "LinearSolveError",
    "NewtonError",
    "HypothesisError",
]


class LinearSolveError(RuntimeError):
    pass


class HypothesisError(ValueError):
    """A standing assumption of the problem class is violated."""


class NewtonError(RuntimeError):
    """Nonconvergence; carries the best iterate and the residual history."""

    def __init__(self, message, best=None, history=None):
        super().__init__(message)
        self.best = best
        self.history = list(history or [])


@dataclass
class ProblemSpec:
    """Everything needed to pose and solve one problem instance."""

    domain: object
    p: ExponentField
    f: object
    g: object
    q: ExponentField
    eps_start: float = 1.0
    eps_stop: float = 1e-6
    eps_factor: float = 10.0 ** -0.5
    mesh_h: float = 0.1
    newton_tol: float = 1e-10
    newton_max_iter: int = 30
    s_exponent: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.eps_stop <= self.eps_start <= 1.0):
            raise ValueError("need 0 < eps_stop <= eps_start <= 1")
        if not (0.0 < self.eps_factor < 1.0):
            raise ValueError("eps_factor must lie in (0, 1)")
        if not (self.newton_tol > 0):
            raise ValueError("newton_tol must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be >= 1")
        if not (0.0 < self.s_exponent < 1.0):
            raise ValueError("s_exponent must lie in (0, 1)")
        if not (self.mesh_h > 0):
            raise ValueError("mesh_h must be positive")

    def eps_schedule(self):
        values = []
        e = self.eps_start
        while e > self.eps_stop * (1.0 + 1e-9):
            values.append(e)
            e *= self.eps_factor
        values.append(self.eps_stop)
        return values


@dataclass
class SolveStats:
    iterations: int
    final_residual: float
    residual_history: list
    step_sizes: list
    energy_history: list
    converged: bool
    used_fallback: bool = False


@dataclass
class EpsRecord:
    eps: float
    newton_iterations: int
    final_residual: float
    energy: float
    grad_lp_norm: float
    h2_dq: float
    h2_recovery: float
    meas_A1: float
    meas_A2: float
    meas_Omega1: float
    converged: bool = True

    COLUMNS = ("eps", "newton_iterations", "final_residual", "energy",
               "grad_lp_norm", "h2_dq", "h2_recovery", "meas_A1", "meas_A2",
               "meas_Omega1")

    def row(self):
        return [self.eps, self.newton_iterations, self.final_residual,
                self.energy, self.grad_lp_norm, self.h2_dq, self.h2_recovery,
                self.meas_A1, self.meas_A2, self.meas_Omega1]


@dataclass
class SolveReport:
    records: list
    solution: P1Function
    mesh: object
    warnings: list = dc_field(default_factory=list)

    def final(self) -> EpsRecord:
        return self.records[-1]


def linear_solve(A, b, rel_tol=1e-12):
    """Direct sparse solve with iterative refinement.

    Symmetric ordering without partial pivoting, so an indefinite matrix
    shows up as a nonpositive pivot and is reported by index.  Falls back to
    diagonally preconditioned CG if the factorization cannot reach the
    requested residual.
    """
    if isinstance(A, SparseSymmetricOperator):
        A = A.matrix
    A = sp.csc_matrix(A)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if A.shape[0] != A.shape[1] or b.shape != (n,):
        raise ValueError("shape mismatch in linear_solve")
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n)

    x = None
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
        dU = lu.U.diagonal()
        bad = np.flatnonzero(~(dU.real > 0))
        if bad.size:
            k = int(bad[0])
            raise LinearSolveError(
                f"non-SPD pivot at elimination index {k} "
                f"(original unknown {int(lu.perm_c[k])})")
        x = lu.solve(b)
        for _ in range(3):
            r = b - A @ x
            if np.linalg.norm(r) <= rel_tol * bnorm:
                break
            x = x + lu.solve(r)
    except LinearSolveError:
        raise
    except (RuntimeError, MemoryError):
        x = None

    if x is None or np.linalg.norm(b - A @ x) > rel_tol * bnorm:
        diag = A.diagonal()
        if np.any(diag <= 0):
            k = int(np.flatnonzero(diag <= 0)[0])
            raise LinearSolveError(f"non-SPD pivot at index {k} "
                                   "(nonpositive diagonal)")
        M = sp.diags(1.0 / diag)
        x, info = spla.cg(A, b, rtol=1e-14, atol=0.0, maxiter=20 * n, M=M)
        if info != 0 or np.linalg.norm(b - A @ x) > rel_tol * bnorm:
            raise LinearSolveError(
                f"could not reach relative residual {rel_tol}")
    return x


def masked_source(f, p: ExponentField):
    """Source masked to the region where the exponent is at most 2.

    This is the compatibility device for exponents crossing 2: the masked
    source vanishes wherever p > 2 and equals f elsewhere, pointwise.
    """

    class _Masked:
        def evaluate(self, x, y):
            fv = field_values(f, np.asarray(x, float), np.asarray(y, float))
            pv = field_values(p, np.asarray(x, float), np.asarray(y, float))
            return np.where(pv <= 2.0, fv, 0.0)

    return _Masked()


def with_mollified_exponent(spec: ProblemSpec, delta: float) -> ProblemSpec:
    """Spec variant with a mollified exponent and the source re-masked to
    the new {p_delta <= 2} region."""
    from .varexp import mollify_exponent
    p_delta = mollify_exponent(spec.p, delta)
    return ProblemSpec(
        domain=spec.domain, p=p_delta, f=masked_source(spec.f, p_delta),
        g=spec.g, q=spec.q, eps_start=spec.eps_start, eps_stop=spec.eps_stop,
        eps_factor=spec.eps_factor, mesh_h=spec.mesh_h,
        newton_tol=spec.newton_tol, newton_max_iter=spec.newton_max_iter,
        s_exponent=spec.s_exponent, seed=spec.seed)


def _functional(u, spec, eps, qctx, load):
    return energy(u, spec.p, eps, qctx) - float(load @ u.coeffs)


def _solve_reduced(A, load, mesh, g):
    sys_ = apply_dirichlet(A, load, mesh, g)
    x = linear_solve(sys_.operator, sys_.rhs)
    return P1Function(mesh, sys_.expand(x))


def solve_regularized(spec: ProblemSpec, eps: float, u0: P1Function,
                      qctx: QuadratureContext = None):
    """Newton solve at fixed eps, starting from ``u0`` (which must satisfy
    the boundary data).  Returns (solution, stats)."""
    mesh = u0.mesh
    if qctx is None:
        qctx = QuadratureContext(mesh)
    interior = ~mesh.is_boundary
    load = assemble_load(spec.f, qctx)

    u = P1Function(mesh, u0.coeffs.copy())
    R = assemble_residual(u, spec.p, spec.f, eps, qctx, g_data=spec.g)
    res = float(np.max(np.abs(R)))
    history = [res]
    energies = [_functional(u, spec, eps, qctx, load)]
    steps = []

    for _ in range(spec.newton_max_iter):
        if res <= spec.newton_tol:
            break
        A = assemble_jacobian(u, spec.p, eps, qctx)
        Aii = A.restrict(np.flatnonzero(interior))
        d_int = linear_solve(Aii, -R[interior])
        d = np.zeros(mesh.n_points)
        d[interior] = d_int

        t = 1.0
        accepted = False
        for _halve in range(31):
            trial = P1Function(mesh, u.coeffs + t * d)
            R_trial = assemble_residual(trial, spec.p, spec.f, eps, qctx)
            res_trial = float(np.max(np.abs(R_trial)))
            if res_trial <= (1.0 - 1e-4 * t) * res:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        u, R, res = trial, R_trial, res_trial
        steps.append(t)
        history.append(res)
        energies.append(_functional(u, spec, eps, qctx, load))

    if res <= spec.newton_tol:
        return u, SolveStats(len(steps), res, history, steps, energies, True)

    # frozen-coefficient fallback: solve A(u_k) u_{k+1} = load with the
    # Dirichlet data, which is globally contractive for mild exponents
    best_u, best_res = u, res
    stall = 0
    for _ in range(200):
        M = weighted_stiffness(u, spec.p, eps, qctx)
        u = _solve_reduced(M, load, mesh, spec.g)
        R = assemble_residual(u, spec.p, spec.f, eps, qctx)
        res = float(np.max(np.abs(R)))
        history.append(res)
        energies.append(_functional(u, spec, eps, qctx, load))
        if res < best_res:
            best_u, best_res = u, res
            stall = 0
        else:
            stall += 1
        if res <= spec.newton_tol:
            return u, SolveStats(len(steps), res, history, steps, energies,
                                 True, used_fallback=True)
        if stall >= 10:
            break
    raise NewtonError(
        f"no convergence at eps={eps:.3e}: residual {best_res:.3e} after "
        f"{len(history) - 1} steps", best=best_u, history=history)


def _set_measures(u, spec, eps, qctx):
    pv = field_values(spec.p, qctx.x, qctx.y)
    gu = u.triangle_gradients()
    gn2 = np.einsum("td,td->t", gu, gu)
    w = qctx.weights
    a1 = float(np.sum(w * (pv == 2.0)))
    a2 = float(np.sum(w * (pv < 2.0)))
    omega1 = float(np.sum(w * (gn2[:, None] > 1.0)))
    return a1, a2, omega1


def _record_for(u, spec, eps, stats, qctx, window):
    a1, a2, omega1 = _set_measures(u, spec, eps, qctx)
    return EpsRecord(
        eps=eps,
        newton_iterations=stats.iterations,
        final_residual=stats.final_residual,
        energy=energy(u, spec.p, eps, qctx),
        grad_lp_norm=regularity.lp_gradient_norm(u, spec.p, qctx),
        h2_dq=regularity.h2_estimate_dq(u, window),
        h2_recovery=regularity.h2_estimate_recovery(u),
        meas_A1=a1, meas_A2=a2, meas_Omega1=omega1,
        converged=stats.converged)


def continuation_solve(spec: ProblemSpec, mesh=None) -> SolveReport:
    """Geometric eps sweep with warm starts; one EpsRecord per eps.

    The first solve starts from the linear Poisson solution with the same
    source and boundary data (exact for p = 2, a sound initial guess
    otherwise).
    """
    warnings = validate_spec(spec)
    if mesh is None:
        mesh = triangulate_convex(spec.domain, spec.mesh_h)
    qctx = QuadratureContext(mesh)
    window = regularity.default_window(spec.domain, 2.0 * mesh.h)

    two = ExponentField.constant(2.0)
    stiff = weighted_stiffness(P1Function.zero(mesh), two, 1.0, qctx)
    load = assemble_load(spec.f, qctx)
    u = _solve_reduced(stiff, load, mesh, spec.g)

    records = []
    for eps in spec.eps_schedule():
        try:
            u, stats = solve_regularized(spec, eps, u, qctx)
        except NewtonError as err:
            # let sweep drivers keep what finished plus the failed record
            if err.best is not None:
                stats = SolveStats(max(len(err.history) - 1, 0),
                                   min(err.history), err.history, [], [],
                                   False, used_fallback=True)
                records.append(_record_for(err.best, spec, eps, stats, qctx,
                                           window))
            err.records = records
            err.failed_eps = eps
            raise
        records.append(_record_for(u, spec, eps, stats, qctx, window))
    return SolveReport(records, u, mesh, warnings)


def validate_spec(spec: ProblemSpec, n_samples=10000):
    """Check standing hypotheses on a dense sample of the domain.

    p reaching 1 or below anywhere is a hard error; a source that is active
    where p > 2, or an integrability exponent q at most 2 on {p <= 2},
    produces warnings.
    """
    lo, hi = spec.domain.bounding_box()
    n = max(32, int(math.ceil(math.sqrt(
        2.0 * n_samples * (hi[0] - lo[0]) * (hi[1] - lo[1])
        / max(spec.domain.area, 1e-300)) / 1.4)))
    gx, gy = np.meshgrid(np.linspace(lo[0], hi[0], n),
                         np.linspace(lo[1], hi[1], n))
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    pts = pts[spec.domain.contains(pts)]
    xs, ys = pts[:, 0], pts[:, 1]

    pv = field_values(spec.p, xs, ys)
    if np.min(pv) <= 1.0 or spec.p.p1 <= 1.0:
        k = int(np.argmin(pv))
        raise HypothesisError(
            f"exponent reaches {np.min(pv):.6g} <= 1 near "
            f"({xs[k]:.6g}, {ys[k]:.6g}); the problem class requires p > 1")

    warnings = []
    fv = np.abs(field_values(spec.f, xs, ys))
    fscale = float(np.max(fv)) if fv.size else 0.0
    active_above = (pv > 2.0) & (fv > 1e-12 * max(1.0, fscale))
    if np.any(active_above):
        frac = float(np.mean(active_above))
        warnings.append(
            f"source is nonzero where p > 2 on {100 * frac:.1f}% of samples "
            "(degenerate-direction compatibility is lost there)")
    qv = field_values(spec.q, xs, ys)
    bad_q = (pv <= 2.0) & (qv <= 2.0)
    if np.any(bad_q):
        frac = float(np.mean(bad_q))
        warnings.append(
            f"integrability exponent q <= 2 on {100 * frac:.1f}% of the "
            "region where p <= 2 (q must exceed 2 there)")
    return warnings
