"""P1 assembly of the regularized variable-exponent problem.

The flux density is (eps + |grad u|^2)^((p(x)-2)/2) grad u.  On P1 elements
the gradient is constant per triangle, so only the exponent and the source
vary inside an element; residual and Jacobian below integrate them with the
context's quadrature rule, and the Jacobian is the exact derivative of the
discrete residual (which is what the finite-difference consistency tests
pin down).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .varexp import (QuadratureContext, field_values, EvaluationError,
                     PreconditionError)

__all__ = [
    "P1Function",
    "SparseSymmetricOperator",
    "ReducedSystem",
    "energy",
    "assemble_residual",
    "assemble_jacobian",
    "weighted_stiffness",
    "assemble_load",
    "apply_dirichlet",
]


class P1Function:
    """Piecewise linear function on a TriMesh: one coefficient per vertex."""

    def __init__(self, mesh, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (mesh.n_points,):
            raise ValueError(
                f"coefficient vector has shape {coeffs.shape}, mesh has "
                f"{mesh.n_points} vertices")
        self.mesh = mesh
        self.coeffs = coeffs
        self.coeffs.setflags(write=False)

    @classmethod
    def interpolate(cls, mesh, f):
        vals = field_values(f, mesh.points[:, 0], mesh.points[:, 1])
        return cls(mesh, vals)

    @classmethod
    def zero(cls, mesh):
        return cls(mesh, np.zeros(mesh.n_points))

    def triangle_gradients(self):
        """Constant gradient per triangle, shape (m, 2)."""
        gb = self.mesh.basis_gradients()
        return np.einsum("ti,tid->td", self.coeffs[self.mesh.triangles], gb)

    def quadrature_values(self, qctx: QuadratureContext):
        if qctx.mesh is not self.mesh:
            raise ValueError("quadrature context belongs to a different mesh")
        return np.einsum("qi,ti->tq", qctx.bary,
                         self.coeffs[self.mesh.triangles])

    def evaluate(self, x, y):
        """Point evaluation anywhere in the mesh (vectorized)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        pts = np.column_stack([np.broadcast_to(x, shape).ravel(),
                               np.broadcast_to(y, shape).ravel()])
        tri, bary = self.mesh.locate(pts, tol=1e-8)
        missing = tri < 0
        if np.any(missing):
            k = int(np.flatnonzero(missing)[0])
            raise EvaluationError("point outside the mesh",
                                  pts[k, 0], pts[k, 1])
        vals = np.einsum("kj,kj->k", bary,
                         self.coeffs[self.mesh.triangles[tri]])
        out = vals.reshape(shape)
        return float(out) if out.ndim == 0 else out

    def gradient_at(self, x, y):
        """Piecewise-constant gradient sampled at points, shape (..., 2)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        pts = np.column_stack([np.broadcast_to(x, shape).ravel(),
                               np.broadcast_to(y, shape).ravel()])
        tri, _ = self.mesh.locate(pts, tol=1e-8)
        missing = tri < 0
        if np.any(missing):
            k = int(np.flatnonzero(missing)[0])
            raise EvaluationError("point outside the mesh",
                                  pts[k, 0], pts[k, 1])
        g = self.triangle_gradients()[tri]
        return g.reshape(shape + (2,))

    def __add__(self, other):
        self._check_same(other)
        return P1Function(self.mesh, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check_same(other)
        return P1Function(self.mesh, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return P1Function(self.mesh, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def _check_same(self, other):
        if not isinstance(other, P1Function) or other.mesh is not self.mesh:
            raise ValueError("operands live on different meshes")

    def __repr__(self):
        return f"P1Function({self.mesh.n_points} dofs)"


class SparseSymmetricOperator:
    """Thin wrapper around a symmetric CSR matrix."""

    def __init__(self, matrix):
        self.matrix = matrix.tocsr()

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def nnz(self):
        return self.matrix.nnz

    def matvec(self, v):
        return self.matrix @ v

    __matmul__ = matvec

    def restrict(self, idx):
        """Principal submatrix on the index set (kept symmetric)."""
        sub = self.matrix[idx][:, idx]
        return SparseSymmetricOperator(sub)

    def dense(self):
        return self.matrix.toarray()

    def symmetry_defect(self):
        d = self.matrix - self.matrix.T
        return 0.0 if d.nnz == 0 else float(np.max(np.abs(d.data)))

    def __repr__(self):
        return f"SparseSymmetricOperator({self.shape[0]}x{self.shape[1]}, nnz={self.nnz})"


def _check_eps(eps, allow_zero=False):
    lo_ok = eps >= 0 if allow_zero else eps > 0
    if not (lo_ok and eps <= 1.0):
        raise ValueError(f"eps must lie in (0, 1], got {eps}")


def _gradient_data(u: P1Function, p, eps, qctx: QuadratureContext):
    gu = u.triangle_gradients()
    gn2 = np.einsum("td,td->t", gu, gu)
    pv = field_values(p, qctx.x, qctx.y)
    if not np.all(np.isfinite(pv)):
        idx = tuple(np.argwhere(~np.isfinite(pv))[0])
        raise EvaluationError("non-finite exponent value",
                              qctx.x[idx], qctx.y[idx])
    v2 = gn2 + eps
    with np.errstate(over="ignore"):
        vpow = v2[:, None] ** (0.5 * (pv - 2.0))
    return gu, gn2, pv, v2, vpow


def energy(u: P1Function, p, eps, qctx: QuadratureContext) -> float:
    """J(u) = integral of (1/p(x)) (|grad u|^2 + eps)^(p(x)/2)."""
    _check_eps(eps, allow_zero=True)
    gu = u.triangle_gradients()
    gn2 = np.einsum("td,td->t", gu, gu)
    pv = field_values(p, qctx.x, qctx.y)
    with np.errstate(over="ignore"):
        dens = (gn2[:, None] + eps) ** (0.5 * pv) / pv
    return float(np.sum(qctx.weights * dens))


def assemble_load(f, qctx: QuadratureContext):
    """Load vector (integral of f phi_i) over all vertices."""
    mesh = qctx.mesh
    fv = field_values(f, qctx.x, qctx.y)
    if not np.all(np.isfinite(fv)):
        idx = tuple(np.argwhere(~np.isfinite(fv))[0])
        raise EvaluationError("non-finite source value",
                              qctx.x[idx], qctx.y[idx])
    local = np.einsum("tq,qi->ti", qctx.weights * fv, qctx.bary)
    b = np.zeros(mesh.n_points)
    np.add.at(b, mesh.triangles, local)
    return b


def _verify_boundary_values(u: P1Function, g_data):
    mesh = u.mesh
    bnd = mesh.is_boundary
    want = field_values(g_data, mesh.points[bnd, 0], mesh.points[bnd, 1])
    err = np.abs(u.coeffs[bnd] - want)
    scale = 1.0 + np.max(np.abs(want)) if want.size else 1.0
    if err.size and np.max(err) > 1e-9 * scale:
        k = int(np.argmax(err))
        pt = mesh.points[bnd][k]
        raise PreconditionError(
            f"iterate violates Dirichlet data by {np.max(err):.3e}",
            pt[0], pt[1])


def assemble_residual(u: P1Function, p, f, eps, qctx: QuadratureContext,
                      g_data=None):
    """Residual of the discrete regularized problem.

    Rows are the interior vertex equations; boundary rows are zero.  When
    ``g_data`` is passed, the iterate is checked against it first.
    """
    _check_eps(eps)
    if g_data is not None:
        _verify_boundary_values(u, g_data)
    mesh = u.mesh
    gu, gn2, pv, v2, vpow = _gradient_data(u, p, eps, qctx)
    s1 = np.sum(qctx.weights * vpow, axis=1)
    gb = mesh.basis_gradients()
    flux = np.einsum("t,tid,td->ti", s1, gb, gu)
    R = np.zeros(mesh.n_points)
    np.add.at(R, mesh.triangles, flux)
    R -= assemble_load(f, qctx)
    R[mesh.is_boundary] = 0.0
    return R


def assemble_jacobian(u: P1Function, p, eps,
                      qctx: QuadratureContext) -> SparseSymmetricOperator:
    """Derivative of the residual flux term; symmetric, SPD on the interior
    subspace for exponents above 1."""
    _check_eps(eps)
    mesh = u.mesh
    gu, gn2, pv, v2, vpow = _gradient_data(u, p, eps, qctx)
    w = qctx.weights
    s1 = np.sum(w * vpow, axis=1)
    s2 = np.sum(w * vpow * (pv - 2.0), axis=1)
    gb = mesh.basis_gradients()
    gg = np.einsum("tid,tjd->tij", gb, gb)
    du = np.einsum("tid,td->ti", gb, gu)
    local = (s1[:, None, None] * gg
             + (s2 / v2)[:, None, None] * np.einsum("ti,tj->tij", du, du))
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)),
                        shape=(mesh.n_points, mesh.n_points)).tocsr()
    mat = 0.5 * (mat + mat.T)
    return SparseSymmetricOperator(mat)


def weighted_stiffness(u: P1Function, p, eps,
                       qctx: QuadratureContext) -> SparseSymmetricOperator:
    """Frozen-coefficient operator: integral of v^(p-2) grad phi_j . grad
    phi_i with v evaluated at the current iterate (the fallback iteration
    matrix; also the plain stiffness matrix when p is 2)."""
    _check_eps(eps)
    mesh = u.mesh
    gu, gn2, pv, v2, vpow = _gradient_data(u, p, eps, qctx)
    s1 = np.sum(qctx.weights * vpow, axis=1)
    gb = mesh.basis_gradients()
    gg = np.einsum("tid,tjd->tij", gb, gb)
    local = s1[:, None, None] * gg
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)),
                        shape=(mesh.n_points, mesh.n_points)).tocsr()
    mat = 0.5 * (mat + mat.T)
    return SparseSymmetricOperator(mat)


class ReducedSystem:
    """Interior system after symmetric Dirichlet condensation."""

    def __init__(self, operator, rhs, boundary_values, interior_index, mesh):
        self.operator = operator
        self.rhs = rhs
        self.boundary_values = boundary_values
        self.interior_index = interior_index
        self.mesh = mesh

    def expand(self, x_interior):
        """Full coefficient vector from the interior solution."""
        full = self.boundary_values.copy()
        full[self.interior_index] = x_interior
        return full


def apply_dirichlet(A, b, mesh, g) -> ReducedSystem:
    """Condense Dirichlet data out of the full system symmetrically.

    Boundary coefficients are the vertex interpolation of ``g``; the reduced
    right-hand side absorbs the coupling, so the reduced operator is the
    symmetric interior principal submatrix.
    """
    if isinstance(A, SparseSymmetricOperator):
        A = A.matrix
    A = A.tocsr()
    bnd = mesh.is_boundary
    interior = np.flatnonzero(~bnd)
    gvals = np.zeros(mesh.n_points)
    gvals[bnd] = field_values(g, mesh.points[bnd, 0], mesh.points[bnd, 1])
    rhs = b[interior] - (A[interior] @ gvals)
    reduced = SparseSymmetricOperator(A[interior][:, interior])
    return ReducedSystem(reduced, rhs, gvals, interior, mesh)
