"""Config-driven experiment runs with CSV/JSON emission.

A config is a flat UTF-8 text file of ``section.key = value`` lines with
``#`` comments.  Field inputs (p, f, g, q, exact solutions, identity test
functions) are expression strings over x and y.  Every run writes a CSV
whose float cells are ``repr`` round-trips (byte-identical reruns with one
thread) and a JSON sidecar holding the resolved config, the package
version, and run-specific extras (validation warnings, ellipticity audit,
scaling fits, failures).
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import regularity
from .expressions import FieldSyntaxError, parse_field
from .geometry import (ConvexDomain, refine_uniform, round_corners,
                       triangulate_convex)
from .solver import (EpsRecord, NewtonError, ProblemSpec, continuation_solve,
                     validate_spec)
from .varexp import ExponentField, QuadratureContext, field_values

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "run_solve",
    "run_eps_sweep",
    "run_convergence",
    "run_p1_sweep",
    "run_domain_sweep",
    "run_identity_check",
    "l2_h1_errors",
    "thread_count",
    "DEFAULT_IDENTITY_EXPRS",
]


class ConfigError(ValueError):
    pass


REQUIRED_KEYS = (
    "domain.vertices", "domain.corner_radius",
    "p.expr", "f.expr", "g.expr", "q.expr",
    "eps.start", "eps.stop", "eps.factor",
    "mesh.h", "mesh.refinements",
    "newton.tol", "newton.max_iter",
    "s.exponent", "output.path", "seed",
)

OPTIONAL_KEYS = ("u.exact.expr", "p1.list", "radius.list", "identity.exprs")

DEFAULT_IDENTITY_EXPRS = (
    "1 - x^2 - y^2",
    "(1 - x^2 - y^2) * exp(x)",
    "(1 - x^2 - y^2) * sin(x + 2*y)",
)


def _parse_lines(text):
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = body.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        if key not in REQUIRED_KEYS and key not in OPTIONAL_KEYS:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        raw[key] = value
    missing = [k for k in REQUIRED_KEYS if k not in raw]
    if missing:
        raise ConfigError("missing required keys: " + ", ".join(missing))
    return raw


def _get_float(raw, key):
    try:
        return float(raw[key])
    except ValueError:
        raise ConfigError(f"key '{key}': not a number ({raw[key]!r})")


def _get_int(raw, key):
    try:
        return int(raw[key])
    except ValueError:
        raise ConfigError(f"key '{key}': not an integer ({raw[key]!r})")


def _get_expr(raw, key):
    try:
        return parse_field(raw[key])
    except FieldSyntaxError as err:
        raise ConfigError(f"key '{key}': {err}")


def _get_floats(raw, key, sep=","):
    out = []
    for piece in raw[key].split(sep):
        piece = piece.strip()
        if not piece:
            continue
        try:
            out.append(float(piece))
        except ValueError:
            raise ConfigError(f"key '{key}': bad entry {piece!r}")
    return out


def _parse_vertices(raw):
    pts = []
    for pair in raw["domain.vertices"].split(";"):
        pair = pair.strip()
        if not pair:
            continue
        halves = pair.split(",")
        if len(halves) != 2:
            raise ConfigError(
                f"key 'domain.vertices': expected 'x,y' pairs, got {pair!r}")
        try:
            pts.append((float(halves[0]), float(halves[1])))
        except ValueError:
            raise ConfigError(
                f"key 'domain.vertices': bad coordinate in {pair!r}")
    if len(pts) < 3:
        raise ConfigError("key 'domain.vertices': need at least 3 vertices")
    return pts


@dataclass
class ExperimentConfig:
    raw: dict
    domain: ConvexDomain
    p: ExponentField
    f: object
    g: object
    q: ExponentField
    eps_start: float
    eps_stop: float
    eps_factor: float
    mesh_h: float
    refinements: int
    newton_tol: float
    newton_max_iter: int
    s_exponent: float
    output_path: str
    seed: int
    u_exact: object = None
    p1_list: list = dc_field(default_factory=list)
    radius_list: list = dc_field(default_factory=list)
    identity_exprs: list = dc_field(default_factory=list)

    @classmethod
    def from_text(cls, text):
        raw = _parse_lines(text)
        verts = _parse_vertices(raw)
        radius = _get_float(raw, "domain.corner_radius")
        if radius < 0:
            raise ConfigError("key 'domain.corner_radius': must be >= 0")
        domain = ConvexDomain(verts, corner_radius=radius)
        p_expr = _get_expr(raw, "p.expr")
        q_expr = _get_expr(raw, "q.expr")
        refinements = _get_int(raw, "mesh.refinements")
        if refinements < 0:
            raise ConfigError("key 'mesh.refinements': must be >= 0")
        seed = _get_int(raw, "seed")
        cfg = cls(
            raw=raw,
            domain=domain,
            p=ExponentField.from_expression(p_expr, domain),
            f=_get_expr(raw, "f.expr"),
            g=_get_expr(raw, "g.expr"),
            q=ExponentField.from_expression(q_expr, domain),
            eps_start=_get_float(raw, "eps.start"),
            eps_stop=_get_float(raw, "eps.stop"),
            eps_factor=_get_float(raw, "eps.factor"),
            mesh_h=_get_float(raw, "mesh.h"),
            refinements=refinements,
            newton_tol=_get_float(raw, "newton.tol"),
            newton_max_iter=_get_int(raw, "newton.max_iter"),
            s_exponent=_get_float(raw, "s.exponent"),
            output_path=raw["output.path"],
            seed=seed,
        )
        if "u.exact.expr" in raw:
            cfg.u_exact = _get_expr(raw, "u.exact.expr")
        if "p1.list" in raw:
            cfg.p1_list = _get_floats(raw, "p1.list")
        if "radius.list" in raw:
            cfg.radius_list = _get_floats(raw, "radius.list")
        if "identity.exprs" in raw:
            for piece in raw["identity.exprs"].split(";"):
                piece = piece.strip()
                if piece:
                    try:
                        parse_field(piece)
                    except FieldSyntaxError as err:
                        raise ConfigError(f"key 'identity.exprs': {err}")
                    cfg.identity_exprs.append(piece)
        return cfg

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def problem_spec(self, p=None, domain=None) -> ProblemSpec:
        try:
            return ProblemSpec(
                domain=self.domain if domain is None else domain,
                p=self.p if p is None else p,
                f=self.f, g=self.g, q=self.q,
                eps_start=self.eps_start, eps_stop=self.eps_stop,
                eps_factor=self.eps_factor, mesh_h=self.mesh_h,
                newton_tol=self.newton_tol,
                newton_max_iter=self.newton_max_iter,
                s_exponent=self.s_exponent, seed=self.seed)
        except ValueError as err:
            raise ConfigError(str(err))

    def base_mesh(self, domain=None):
        return triangulate_convex(self.domain if domain is None else domain,
                                  self.mesh_h)

    def working_mesh(self, domain=None):
        mesh = self.base_mesh(domain)
        for _ in range(self.refinements):
            mesh = refine_uniform(mesh)
        return mesh


def thread_count():
    """Worker count from PLAPX_THREADS (default 1)."""
    value = os.environ.get("PLAPX_THREADS")
    if value is None:
        return 1
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"PLAPX_THREADS must be an integer, got {value!r}")
    if n < 1:
        raise ConfigError("PLAPX_THREADS must be >= 1")
    return n


def _map_ordered(fn, items):
    """Run fn over items, possibly concurrently; results in input order."""
    items = list(items)
    n = thread_count()
    if n <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))


def _fmt_cell(v):
    if isinstance(v, str):
        return '"' + v.replace('"', '""') + '"'
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, columns, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt_cell(v) for v in row) + "\n")


def write_sidecar(path, payload):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class ExperimentResult:
    command: str
    columns: tuple
    rows: list
    csv_path: str
    sidecar_path: str
    payload: dict
    mesh: object = None
    solution: object = None

    @property
    def failed(self):
        return bool(self.payload.get("failures"))


def _payload_base(config: ExperimentConfig, command: str, columns):
    from . import __version__
    return {
        "version": __version__,
        "command": command,
        "config": dict(config.raw),
        "columns": list(columns),
        "seed": config.seed,
    }


def _emit(config, command, columns, rows, payload, mesh=None, solution=None):
    csv_path = config.output_path
    sidecar_path = csv_path + ".json"
    write_csv(csv_path, columns, rows)
    write_sidecar(sidecar_path, payload)
    return ExperimentResult(command, tuple(columns), rows, csv_path,
                            sidecar_path, payload, mesh, solution)


def _sample_interior_points(domain, n, rng):
    lo, hi = domain.bounding_box()
    pts = np.empty((0, 2))
    margin = 1e-9 * max(hi[0] - lo[0], hi[1] - lo[1])
    for _ in range(64):
        cand = rng.uniform(lo, hi, size=(2 * n, 2))
        keep = cand[domain.contains(cand, margin=margin)]
        pts = np.vstack([pts, keep])
        if len(pts) >= n:
            return pts[:n]
    raise RuntimeError("interior point sampling failed")


def _ellipticity_audit(u, spec: ProblemSpec, eps: float, n: int = 2000,
                       trials: int = 4):
    """Post-hoc coefficient audit on random interior points (config seed)."""
    rng = np.random.Generator(np.random.Philox(spec.seed))
    pts = _sample_interior_points(spec.domain, n, rng)
    sample = regularity.coefficients(u, spec.p, spec.f, eps, pts)
    rep = regularity.ellipticity_check(sample, spec.p.p1, spec.p.p2,
                                       trials=trials, seed=spec.seed)
    return {
        "n_samples": rep.n_samples,
        "trials": rep.trials,
        "lower": rep.lower,
        "upper": rep.upper,
        "low_margin": rep.low_margin,
        "high_margin": rep.high_margin,
        "satisfied": rep.satisfied,
    }


def _continuation_rows(config, spec, mesh, payload):
    """Run the continuation and return (records, final solution or None)."""
    try:
        report = continuation_solve(spec, mesh=mesh)
    except NewtonError as err:
        payload["validation_warnings"] = []
        payload["failures"] = [{"eps": getattr(err, "failed_eps", None),
                                "reason": str(err)}]
        return list(getattr(err, "records", [])), None
    payload["validation_warnings"] = list(report.warnings)
    payload["failures"] = []
    return report.records, report.solution


def run_solve(config: ExperimentConfig) -> ExperimentResult:
    """Continuation solve; CSV holds the final-eps record only."""
    spec = config.problem_spec()
    mesh = config.working_mesh()
    payload = _payload_base(config, "solve", EpsRecord.COLUMNS)
    records, solution = _continuation_rows(config, spec, mesh, payload)
    rows = [records[-1].row()] if records else []
    if solution is not None:
        payload["ellipticity_audit"] = _ellipticity_audit(
            solution, spec, spec.eps_stop)
    payload["mesh"] = {"n_points": mesh.n_points,
                       "n_triangles": mesh.n_triangles, "h": mesh.h}
    return _emit(config, "solve", EpsRecord.COLUMNS, rows, payload, mesh,
                 solution)


def run_eps_sweep(config: ExperimentConfig) -> ExperimentResult:
    """One CSV row per eps of the continuation, in sweep order."""
    spec = config.problem_spec()
    mesh = config.working_mesh()
    payload = _payload_base(config, "sweep-eps", EpsRecord.COLUMNS)
    records, solution = _continuation_rows(config, spec, mesh, payload)
    rows = [r.row() for r in records]
    if solution is not None:
        payload["ellipticity_audit"] = _ellipticity_audit(
            solution, spec, spec.eps_stop)
    payload["mesh"] = {"n_points": mesh.n_points,
                       "n_triangles": mesh.n_triangles, "h": mesh.h}
    return _emit(config, "sweep-eps", EpsRecord.COLUMNS, rows, payload, mesh,
                 solution)


def l2_h1_errors(u, exact, qctx=None):
    """L2 and H1 errors of a P1 function against an expression.

    The H1 error is the full norm, sqrt(L2^2 + seminorm^2); the exact
    gradient comes from symbolic differentiation of the expression.
    """
    if qctx is None:
        qctx = QuadratureContext(u.mesh)
    uv = u.quadrature_values(qctx)
    ev = field_values(exact, qctx.x, qctx.y)
    l2sq = float(np.sum(qctx.weights * (uv - ev) ** 2))
    gu = u.triangle_gradients()
    gex = field_values(exact.diff("x"), qctx.x, qctx.y)
    gey = field_values(exact.diff("y"), qctx.x, qctx.y)
    semsq = float(np.sum(qctx.weights * ((gu[:, 0:1] - gex) ** 2
                                         + (gu[:, 1:2] - gey) ** 2)))
    return math.sqrt(l2sq), math.sqrt(l2sq + semsq)


CONVERGENCE_COLUMNS = ("level", "h", "l2_error", "h1_error", "l2_order",
                       "h1_order")


def run_convergence(config: ExperimentConfig) -> ExperimentResult:
    """Refinement study against the configured exact solution."""
    if config.u_exact is None:
        raise ConfigError("convergence study requires key 'u.exact.expr'")
    if config.refinements < 2:
        raise ConfigError(
            "key 'mesh.refinements': need at least 2 levels for orders")
    spec = config.problem_spec()

    meshes = [config.base_mesh()]
    while len(meshes) < config.refinements:
        meshes.append(refine_uniform(meshes[-1]))

    payload = _payload_base(config, "convergence", CONVERGENCE_COLUMNS)
    payload["validation_warnings"] = validate_spec(spec)
    payload["failures"] = []

    def member(mesh):
        report = continuation_solve(spec, mesh=mesh)
        return report.solution

    solutions = _map_ordered(member, meshes)
    rows = []
    prev = None
    for level, (mesh, u) in enumerate(zip(meshes, solutions)):
        l2, h1 = l2_h1_errors(u, config.u_exact)
        if prev is None:
            l2_order = h1_order = math.nan
        else:
            ratio = math.log(prev[0] / mesh.h)
            l2_order = math.log(prev[1] / l2) / ratio
            h1_order = math.log(prev[2] / h1) / ratio
        rows.append([level, mesh.h, l2, h1, l2_order, h1_order])
        prev = (mesh.h, l2, h1)
    return _emit(config, "convergence", CONVERGENCE_COLUMNS, rows, payload,
                 meshes[0], solutions[-1])


P1_COLUMNS = ("p1",) + EpsRecord.COLUMNS


def run_p1_sweep(config: ExperimentConfig) -> ExperimentResult:
    """Continuation per constant exponent in p1.list; fit in the sidecar."""
    if not config.p1_list:
        raise ConfigError("key 'p1.list' is required and must be non-empty")
    for v in config.p1_list:
        if not (1.0 < v):
            raise ConfigError(f"key 'p1.list': exponent {v} must exceed 1")
    mesh = config.working_mesh()
    payload = _payload_base(config, "sweep-p1", P1_COLUMNS)
    payload["validation_warnings"] = []
    payload["failures"] = []

    def member(p1):
        spec = config.problem_spec(p=ExponentField.constant(p1))
        try:
            report = continuation_solve(spec, mesh=mesh)
        except NewtonError as err:
            return p1, None, str(err)
        return p1, report.final(), None

    rows = []
    fit_p1, fit_dq, fit_rec = [], [], []
    for p1, final, reason in _map_ordered(member, config.p1_list):
        if final is None:
            payload["failures"].append({"p1": p1, "reason": reason})
            continue
        rows.append([p1] + final.row())
        fit_p1.append(p1)
        fit_dq.append(final.h2_dq)
        fit_rec.append(final.h2_recovery)

    def fit_payload(values):
        if len(fit_p1) < 2:
            return {"error": "fewer than 2 successful sweep members"}
        rep = regularity.p1_scaling_report(fit_p1, values)
        return {"slope": rep.slope, "intercept": rep.intercept,
                "kappa": rep.kappa, "bound": rep.bound,
                "within_bound": rep.within_bound,
                "degenerate": rep.degenerate, "warning": rep.warning}

    payload["scaling_dq"] = fit_payload(fit_dq)
    payload["scaling_recovery"] = fit_payload(fit_rec)
    return _emit(config, "sweep-p1", P1_COLUMNS, rows, payload, mesh)


DOMAIN_COLUMNS = ("radius", "area", "area_deficit", "h2_dq", "h2_recovery",
                  "h1_window_dist")


def run_domain_sweep(config: ExperimentConfig) -> ExperimentResult:
    """Corner-rounding sweep: solve on each rounded domain, compare
    successive solutions on a window interior to all of them."""
    radii = config.radius_list
    if not radii:
        raise ConfigError("key 'radius.list' is required and must be "
                          "non-empty")
    if any(r <= 0 for r in radii):
        raise ConfigError("key 'radius.list': radii must be positive")
    if any(b >= a for a, b in zip(radii, radii[1:])):
        raise ConfigError("key 'radius.list': radii must be strictly "
                          "decreasing")
    base = ConvexDomain(config.domain.vertices)
    domains = [round_corners(base, r) for r in radii]
    # nested domains: the first (most rounded) is contained in all others
    window = regularity.default_window(domains[0], 2.0 * config.mesh_h)

    payload = _payload_base(config, "sweep-domain", DOMAIN_COLUMNS)
    payload["validation_warnings"] = []
    payload["failures"] = []
    payload["window"] = {"origin": list(window[0]), "spacing": window[1],
                         "nx": window[2], "ny": window[3]}

    def member(dom):
        spec = config.problem_spec(domain=dom)
        mesh = config.working_mesh(dom)
        try:
            report = continuation_solve(spec, mesh=mesh)
        except NewtonError as err:
            return None, str(err)
        return report, None

    results = _map_ordered(member, domains)
    rows = []
    first_mesh = None
    prev_solution = None
    for r, dom, (report, reason) in zip(radii, domains, results):
        if report is None:
            payload["failures"].append({"radius": r, "reason": reason})
            prev_solution = None
            continue
        if first_mesh is None:
            first_mesh = report.mesh
        final = report.final()
        if prev_solution is None:
            dist = math.nan
        else:
            dist = regularity.h1_window_distance(prev_solution,
                                                 report.solution, window)
        rows.append([r, dom.area, base.area - dom.area, final.h2_dq,
                     final.h2_recovery, dist])
        prev_solution = report.solution
    return _emit(config, "sweep-domain", DOMAIN_COLUMNS, rows, payload,
                 first_mesh)


IDENTITY_COLUMNS = ("expr", "lhs", "rhs", "abs_err")


def run_identity_check(config: ExperimentConfig) -> ExperimentResult:
    """Curvature identity on the unit disk for each configured test
    function (a built-in trio when identity.exprs is absent)."""
    exprs = list(config.identity_exprs) or list(DEFAULT_IDENTITY_EXPRS)
    payload = _payload_base(config, "check-identity", IDENTITY_COLUMNS)
    payload["validation_warnings"] = []
    payload["failures"] = []

    def member(src):
        try:
            rep = regularity.curvature_identity_check(src)
        except Exception as err:  # noqa: BLE001 - recorded, not swallowed
            return src, None, f"{type(err).__name__}: {err}"
        return src, rep, None

    rows = []
    for src, rep, reason in _map_ordered(member, exprs):
        if rep is None:
            payload["failures"].append({"expr": src, "reason": reason})
            continue
        rows.append([src, rep.lhs, rep.rhs, rep.abs_err])
    return _emit(config, "check-identity", IDENTITY_COLUMNS, rows, payload)
