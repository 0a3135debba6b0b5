"""Manufactured-solution convergence orders for the p = 2 and p = 3/2 cases.

The p = 2 case uses u = sin(pi x) sin(pi y) on the unit square.  The p = 3/2
case uses the radial closed form u = (1 - r^3)/12 on the unit disk, which
solves -div(|grad u|^(p-2) grad u) = 1 with zero boundary values.  Each disk
level is re-meshed at its own h so the polygonal boundary keeps pace with
the interior resolution.
"""

import math

import numpy as np

from plapx import (ConvexDomain, ExponentField, ProblemSpec, QuadratureContext,
                   continuation_solve, parse_field, triangulate_convex)
from plapx.experiments import l2_h1_errors

PI = math.pi

# --- p = 2, sin * sin ---------------------------------------------------------

square = ConvexDomain.unit_square()
exact = parse_field(f"sin({PI}*x)*sin({PI}*y)")
f_src = parse_field(f"{2 * PI ** 2}*sin({PI}*x)*sin({PI}*y)")
spec = ProblemSpec(domain=square, p=ExponentField.constant(2.0), f=f_src,
                   g=0.0, q=ExponentField.constant(4.0),
                   eps_start=1e-6, eps_stop=1e-6, mesh_h=0.25)

print("p = 2, u = sin(pi x) sin(pi y)")
print(f"{'h':>9} {'L2 error':>11} {'H1 error':>11} {'L2 ord':>7} {'H1 ord':>7}")
prev = None
mesh = triangulate_convex(square, spec.mesh_h)
from plapx import refine_uniform
for level in range(4):
    report = continuation_solve(spec, mesh=mesh)
    l2, h1 = l2_h1_errors(report.solution, exact)
    if prev is None:
        print(f"{mesh.h:9.5f} {l2:11.4e} {h1:11.4e} {'-':>7} {'-':>7}")
    else:
        rate = math.log(prev[0] / mesh.h)
        print(f"{mesh.h:9.5f} {l2:11.4e} {h1:11.4e} "
              f"{math.log(prev[1] / l2) / rate:7.3f} "
              f"{math.log(prev[2] / h1) / rate:7.3f}")
    prev = (mesh.h, l2, h1)
    mesh = refine_uniform(mesh)

# --- p = 3/2, radial ----------------------------------------------------------

disk = ConvexDomain.disk(1.0, segments=512)
spec_r = ProblemSpec(domain=disk, p=ExponentField.constant(1.5), f=1.0,
                     g=0.0, q=ExponentField.constant(4.0), mesh_h=0.16)

print()
print("p = 3/2, u = (1 - r^3)/12 on the disk")
print(f"{'h':>9} {'L2 error':>11} {'order':>7}")
prev = None
for h in (0.16, 0.08, 0.04):
    mesh = triangulate_convex(disk, h)
    qctx = QuadratureContext(mesh)
    report = continuation_solve(spec_r, mesh=mesh)
    uv = report.solution.quadrature_values(qctx)
    rr = np.sqrt(qctx.x ** 2 + qctx.y ** 2)
    err = math.sqrt(float(np.sum(
        qctx.weights * (uv - (1.0 - np.minimum(rr, 1.0) ** 3) / 12.0) ** 2)))
    if prev is None:
        print(f"{mesh.h:9.5f} {err:11.4e} {'-':>7}")
    else:
        order = math.log(prev[1] / err) / math.log(prev[0] / mesh.h)
        print(f"{mesh.h:9.5f} {err:11.4e} {order:7.3f}")
    prev = (mesh.h, err)
