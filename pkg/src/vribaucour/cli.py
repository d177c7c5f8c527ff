"""Batch front end: read a job spec, run one pipeline, write geometry and a report.

Usage::

    vribaucour <command> [--spec job.json] [--out DIR] [--tol name=value ...]
                         [--format csv|json|obj]

The spec file holds either a full job (``command``, ``payload``,
``output_dir``, ``tolerances``) or just the payload.  Every run writes
``report.json`` listing each invariant with its residual and tolerance.

Exit codes: 0 success, 1 invariant failure, 2 input error, 3 numerical
breakdown.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bianchi import BianchiCube, build_cube_L, build_cube_P, cube_manifest
from .errors import RibaucourError, SchemaError
from .geomgrid import (
    Grid,
    ImmersionField,
    PrincipalData,
    check_sphere_containment,
    frame_orthonormality,
    numeric_sectional_curvature,
    position_derivative_residual,
    residual_system,
)
from .lagrangian import (
    PTransformSpec,
    Variant,
    apply_P_transform,
    apply_Pstar_transform,
    check_horizontal,
    check_lagrangian,
    integrate_system_P,
)
from .matrixeq import (
    SylvesterSpec,
    Verdict,
    analyze_operator,
    generate_admissible_triple,
    lyapunov_residual,
    solve_lyapunov,
    solve_lyapunov_kron,
    solve_sylvester_system,
    sylvester_closed_form,
    sylvester_residuals,
)
from .ribaucour import (
    apply_vectorial_ribaucour,
    integrate_L_transform,
    inverse_transform_data,
    omega_gram_residual,
    omega_L_residual,
    transform_in_slabs,
)
from .seeds import clifford_torus, horizontal_vacuum, sphere_torus
from .vacuum import (
    nondiag_closed_form,
    nondiag_spec,
    scalar_P_closed_form,
    scalar_spec,
    vacuum_seed,
)

REPORT_SCHEMA_VERSION = "1.0"
COMMANDS = ("lyapunov", "sylvester", "transform", "cube", "vacuum-demo", "verify")
FORMATS = ("csv", "json", "obj")

DEFAULT_TOLERANCES = {
    "lyapunov": 1e-10,
    "sylvester": 1e-10,
    "omega_gram": 1e-8,
    "omega_L": 1e-8,
    "t_commutation": 1e-10,
    "lagrangian": 1e-8,
    "horizontal": 1e-8,
    "sphere": 1e-10,
    "curvature": 1e-3,
    "closed_form": 1e-8,
    "inverse": 1e-8,
    "path_independence": 1e-8,
    "omega_diagonal": 1e-10,
    "commutation": 1e-8,
    "seed_system": 1e-6,
    "frame": 1e-8,
}

SEEDS = ("vacuum", "clifford_torus", "sphere_torus", "horizontal_vacuum")


# ---------------------------------------------------------------------------
# job spec and report


@dataclass
class JobSpec:
    command: str
    payload: dict
    output_dir: Path
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise SchemaError(f"unknown command {self.command!r}")
        if not isinstance(self.payload, dict):
            raise SchemaError("payload must be a JSON object")
        unknown = set(self.tolerances) - set(DEFAULT_TOLERANCES)
        if unknown:
            raise SchemaError(f"unknown tolerance names: {sorted(unknown)}")
        self.tolerances = {**DEFAULT_TOLERANCES, **{k: float(v) for k, v in self.tolerances.items()}}
        self.output_dir = Path(self.output_dir)

    @classmethod
    def from_dict(cls, obj: dict, command: str | None = None, output_dir=None, tolerances=None) -> "JobSpec":
        if not isinstance(obj, dict):
            raise SchemaError("job spec must be a JSON object")
        if "payload" in obj or "command" in obj:
            cmd = obj.get("command", command)
            if command is not None and cmd != command:
                raise SchemaError(f"spec is for {cmd!r}, not {command!r}")
            payload = obj.get("payload", {})
        else:
            cmd, payload = command, obj
        tol = dict(obj.get("tolerances", {})) if "payload" in obj else {}
        tol.update(tolerances or {})
        out = output_dir if output_dir is not None else obj.get("output_dir", "out")
        return cls(cmd, payload, out, tol)


@dataclass
class Report:
    command: str
    tolerances: dict
    checks: list = field(default_factory=list)
    results: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    stage: str = "input"
    error: dict | None = None
    warnings: list = field(default_factory=list)

    def check(self, name: str, residual, tol_key: str, **extra) -> bool:
        """Record one invariant; ``residual=None`` marks it as not evaluable."""
        tol = self.tolerances[tol_key]
        if residual is None:
            ok = None
        else:
            residual = float(residual)
            ok = bool(np.isfinite(residual) and residual <= tol)
        self.checks.append({"name": name, "residual": residual, "tolerance": tol, "passed": ok, **extra})
        return bool(ok) if ok is not None else True

    @property
    def passed(self) -> bool:
        return all(c["passed"] is not False for c in self.checks)

    def exit_code(self) -> int:
        if self.error is not None:
            return self.error["exit_code"]
        return 0 if self.passed else 1

    def to_dict(self) -> dict:
        code = self.exit_code()
        status = {0: "passed", 1: "invariant_failure"}.get(code, "error")
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "package_version": __version__,
            "command": self.command,
            "status": status,
            "exit_code": code,
            "invariants": self.checks,
            "results": self.results,
            "outputs": self.outputs,
            "tolerances": self.tolerances,
            "warnings": self.warnings,
            "error": self.error,
        }


# ---------------------------------------------------------------------------
# payload helpers


def _get(payload: dict, key: str, default=None, required: bool = False):
    if key not in payload:
        if required:
            raise SchemaError(f"payload is missing {key!r}")
        return default
    return payload[key]


def _matrix(payload: dict, key: str, required: bool = True):
    val = _get(payload, key, required=required)
    if val is None:
        return None
    arr = np.atleast_2d(np.asarray(val, dtype=float))
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.size == 0:
        raise SchemaError(f"{key!r} must be a nonempty square matrix")
    if not np.all(np.isfinite(arr)):
        raise SchemaError(f"{key!r} has non-finite entries")
    return arr


def parse_grid(spec, n: int | None = None) -> Grid:
    """Grid from ``{"n", "half_width", "spacing"}`` or ``{"lo", "hi", "steps"}``."""
    if not isinstance(spec, dict) or not spec:
        raise SchemaError("grid spec must be a nonempty object")
    if "steps" in spec:
        grid = Grid(tuple(spec["lo"]), tuple(spec["hi"]), tuple(spec["steps"]))
    else:
        dim = int(spec.get("n", n if n is not None else 0))
        spacing = float(spec.get("spacing", 1e-2))
        half = float(spec.get("half_width", 1.0))
        if dim < 1 or spacing <= 0 or half <= 0:
            raise SchemaError("grid needs n >= 1, spacing > 0 and half_width > 0")
        grid = Grid.cube(dim, half, spacing)
    if n is not None and grid.n != n:
        raise SchemaError(f"grid has dimension {grid.n}, expected {n}")
    return grid


def build_seed(payload: dict) -> tuple[PrincipalData, ImmersionField]:
    seed = _get(payload, "seed", required=True)
    if isinstance(seed, str):
        seed = {"name": seed}
    name = seed.get("name")
    if name not in SEEDS:
        raise SchemaError(f"unknown seed {name!r}; choose from {SEEDS}")
    grid = parse_grid(_get(payload, "grid", required=True), seed.get("n"))
    if name == "vacuum":
        s = vacuum_seed(grid.n, grid)
    elif name == "clifford_torus":
        s = clifford_torus(grid)
    elif name == "sphere_torus":
        s = sphere_torus(grid)
    else:
        s = horizontal_vacuum(grid, float(seed.get("c", 1.0)))
    return s.data, s.frame


def _variant(data: PrincipalData, kind: str) -> Variant:
    if kind == "Pstar":
        return Variant.PStar
    return Variant.Horizontal if data.c > 0 else Variant.FlatLagrangian


def _p_spec(data: PrincipalData, op: dict) -> PTransformSpec:
    P = _matrix(op, "matrix")
    k = P.shape[0]
    gamma0 = np.asarray(_get(op, "gamma0", np.ones((data.n, k))), dtype=float)
    phi0 = _get(op, "phi0")
    return PTransformSpec(P, gamma0.reshape(data.n, k), phi0, _variant(data, op["type"]), data.c if data.c > 0 else 0.0)


def _l_triple(data: PrincipalData, A, op: dict):
    if "psi" in op:
        k = A.dim
        return (
            np.asarray(op["psi"], dtype=float).reshape(k),
            np.asarray(_get(op, "nu", np.zeros((data.n, k))), dtype=float).reshape(-1, k),
            np.asarray(_get(op, "beta0", np.zeros((data.p, k))), dtype=float).reshape(-1, k),
        )
    rng = np.random.default_rng(int(_get(op, "rng_seed", 0)))
    return generate_admissible_triple(A, data.c, data.c_tilde, data.n, data.p, rng)


# ---------------------------------------------------------------------------
# geometry output


def _node_table(frame: ImmersionField, grid: Grid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coordinates, real positions and activity flags in row-major node order."""
    u = np.stack(np.meshgrid(*[grid.axis(a) for a in range(grid.n)], indexing="ij"), axis=-1).reshape(-1, grid.n)
    pos = frame.interleaved(frame.f).reshape(grid.size, -1)
    act = np.ones(grid.size, dtype=bool) if frame.active is None else np.broadcast_to(frame.active, grid.shape).reshape(-1)
    return u, pos, act


def write_geometry(frame: ImmersionField, grid: Grid, path: Path, fmt: str) -> Path:
    """Write positions as CSV (17 significant digits), JSON or OBJ (2-parameter grids)."""
    u, pos, act = _node_table(frame, grid)
    path = path.with_suffix("." + fmt)
    if fmt == "csv":
        header = [f"u{a + 1}" for a in range(grid.n)] + [f"x{d + 1}" for d in range(pos.shape[1])] + ["active"]
        table = np.concatenate([u, pos, act[:, None].astype(float)], axis=1)
        np.savetxt(path, table, fmt="%.17g", delimiter=",", header=",".join(header), comments="")
    elif fmt == "json":
        obj = {
            "grid": {"lo": list(grid.lo), "hi": list(grid.hi), "steps": list(grid.steps)},
            "ambient_dim": int(pos.shape[1]),
            "positions": pos.tolist(),
            "active": act.tolist(),
        }
        path.write_text(json.dumps(obj))
    elif fmt == "obj":
        if grid.n != 2:
            raise SchemaError("OBJ output needs a two-parameter grid")
        m1, m2 = grid.shape
        lines = [f"# first three real coordinates of {pos.shape[1]}"]
        xyz = np.zeros((pos.shape[0], 3))
        xyz[:, : min(3, pos.shape[1])] = pos[:, :3]
        lines += ["v " + " ".join(f"{x:.17g}" for x in row) for row in xyz]
        for i in range(m1 - 1):
            for j in range(m2 - 1):
                q = [i * m2 + j, (i + 1) * m2 + j, (i + 1) * m2 + j + 1, i * m2 + j + 1]
                if act[q].all():
                    lines.append("f " + " ".join(str(x + 1) for x in q))
        path.write_text("\n".join(lines) + "\n")
    else:
        raise SchemaError(f"unknown format {fmt!r}")
    return path


# ---------------------------------------------------------------------------
# shared checks


def curvature_check(report: Report, name: str, data: PrincipalData, target: float, mask=None) -> None:
    """Off-diagonal numeric sectional curvature against ``target`` on the resolvable nodes."""
    if mask is not None:
        data = data.with_active(mask if data.active is None else mask & data.active)
    K, valid = numeric_sectional_curvature(data)
    cover = float(valid.mean())
    if not valid.any() or data.n < 2:
        report.check(name, None, "curvature", coverage=cover)
        return
    off = ~np.eye(data.n, dtype=bool)
    report.check(name, np.abs(K[:, :, valid][off] - target).max(), "curvature", coverage=cover)


def _class_check(report: Report, name: str, data: PrincipalData, mask=None) -> None:
    if data.c > 0 and data.rho is not None:
        report.check(name + ".horizontal", check_horizontal(data, mask), "horizontal")
    else:
        report.check(name + ".lagrangian", check_lagrangian(data, mask), "lagrangian")


# ---------------------------------------------------------------------------
# commands


def run_lyapunov(job: JobSpec, report: Report, fmt: str) -> None:
    P, C = _matrix(job.payload, "P"), _matrix(job.payload, "C")
    report.stage = "matrixeq.solve_lyapunov"
    X = solve_lyapunov(P, C)
    report.results["solution"] = X.tolist()
    report.check("lyapunov.residual", lyapunov_residual(P, X, C), "lyapunov")
    report.check("lyapunov.vs_dense_solve", np.abs(X - solve_lyapunov_kron(P, C)).max(), "lyapunov")
    _write_json(job, report, "solution", {"solution": X.tolist()})


def run_sylvester(job: JobSpec, report: Report, fmt: str) -> None:
    p = job.payload
    A = analyze_operator(_matrix(p, "A"))
    c, ct = float(_get(p, "c", 0.0)), float(_get(p, "c_tilde", 0.0))
    if "psi" in p:
        psi, nu, beta0 = p["psi"], _get(p, "nu", []), _get(p, "beta0", [])
    else:
        report.stage = "matrixeq.generate_admissible_triple"
        rng = np.random.default_rng(int(_get(p, "rng_seed", 0)))
        psi, nu, beta0 = generate_admissible_triple(A, c, ct, int(_get(p, "w1", 1)), int(_get(p, "w2", 1)), rng)
    spec = SylvesterSpec(A, c, ct, psi, nu, beta0)
    report.stage = "matrixeq.solve_sylvester_system"
    verdict = solve_sylvester_system(spec)
    report.results["verdict"] = verdict.status.value
    report.results["kernel_dim"] = verdict.kernel_dim
    report.results["triple"] = {"psi": spec.psi.tolist(), "nu": spec.nu.tolist(), "beta0": spec.beta0.tolist()}
    if verdict.solution is not None:
        X = verdict.solution
        report.results["solution"] = X.tolist()
        r1, r2 = sylvester_residuals(spec, X)
        report.check("sylvester.symmetric_part", r1, "sylvester")
        report.check("sylvester.operator_equation", r2, "sylvester")
        if verdict.status is Verdict.UniqueInvertible:
            try:
                ref = sylvester_closed_form(spec)
            except SchemaError:
                ref = None
            if ref is not None:
                report.check("sylvester.vs_closed_form", np.abs(X - ref).max(), "sylvester")
    _write_json(job, report, "solution", report.results)


def _transform(job: JobSpec, report: Report, data: PrincipalData, frame: ImmersionField, op: dict):
    """Run one transform and its invariant suite; returns the new frame."""
    kind = _get(op, "type", required=True)
    substeps = int(_get(op, "substeps", 2))
    mask = None
    if kind in ("P", "Pstar"):
        report.stage = "lagrangian.PTransformSpec"
        spec = _p_spec(data, op)
        report.stage = "lagrangian.apply_P_transform"
        apply = apply_Pstar_transform if kind == "Pstar" else apply_P_transform
        res = apply(frame, data, spec, substeps=substeps)
        new_frame, new_data, comb, omega = res.frame, res.data, res.comb, res.omega
        mask = new_data.active
        for key, val in res.invariants(spec).items():
            report.check(f"transform.{key}", val, key)
        if kind == "Pstar":
            report.check("transform.sum_v_squared", check_sphere_containment(new_data), "sphere")
    elif kind == "L":
        A = analyze_operator(_matrix(op, "matrix"))
        report.stage = "matrixeq.solve_sylvester_system"
        triple = _l_triple(data, A, op)
        verdict = solve_sylvester_system(SylvesterSpec(A, data.c, data.c_tilde, *triple))
        report.results["sylvester_verdict"] = verdict.status.value
        if verdict.status is not Verdict.UniqueInvertible:
            raise SchemaError(f"base data are not admissible (verdict {verdict.status.value})")
        report.stage = "ribaucour.integrate_L_transform"
        comb, omega = integrate_L_transform(data, A, triple, verdict.solution, substeps=substeps)
        report.stage = "ribaucour.transform_in_slabs"
        new_frame, new_data = transform_in_slabs(frame, data, comb, omega, with_frame=True)
        mask = new_data.active
        report.check("transform.omega_gram", omega_gram_residual(comb, omega, mask), "omega_gram")
        report.check("transform.omega_L", omega_L_residual(comb, omega, mask=mask), "omega_L")
    else:
        raise SchemaError(f"unknown transform type {kind!r}")
    report.results["active_fraction"] = float(np.mean(mask)) if mask is not None else 1.0
    report.stage = "geomgrid.numeric_sectional_curvature"
    curvature_check(report, "transform.curvature", new_data, data.c)
    if new_frame.ambient_curvature > 0:
        report.check("transform.sphere", check_sphere_containment(new_frame, mask), "sphere")
    if bool(_get(op, "inverse", False)):
        report.stage = "ribaucour.inverse_transform_data"
        icomb, iom = inverse_transform_data(comb, omega, new_frame)
        back = apply_vectorial_ribaucour(new_frame, icomb, iom, with_frame=False)
        act = back.active
        report.check("transform.inverse_round_trip", np.abs(back.f - frame.f)[act].max() if act.any() else None, "inverse")
    return new_frame


def run_transform(job: JobSpec, report: Report, fmt: str) -> None:
    report.stage = "seeds"
    data, frame = build_seed(job.payload)
    new_frame = _transform(job, report, data, frame, _get(job.payload, "operator", required=True))
    _write_geom(job, report, new_frame, data.grid, "transformed", fmt)


def run_verify(job: JobSpec, report: Report, fmt: str) -> None:
    report.stage = "seeds"
    data, frame = build_seed(job.payload)
    report.stage = "geomgrid.residual_system"
    report.check("seed.system", residual_system(data).max, "seed_system")
    report.check("seed.frame_orthonormality", frame_orthonormality(frame), "frame")
    report.check("seed.position_derivative", position_derivative_residual(frame, data), "seed_system")
    if "operator" in job.payload:
        _transform(job, report, data, frame, job.payload["operator"])


def _cube_scalars(data: PrincipalData, kind: str, params, payload: dict):
    scalars = []
    given = _get(payload, "scalars")
    if given is not None and len(given) != len(params):
        raise SchemaError("one scalar spec per cube parameter is needed")
    rng = np.random.default_rng(int(_get(payload, "rng_seed", 0)))
    for i, x in enumerate(params):
        op = {} if given is None else dict(given[i])
        if kind == "P":
            if given is None:
                spec = scalar_spec(x, data.n)
            else:
                spec = PTransformSpec([[x]], np.asarray(op["gamma0"], dtype=float).reshape(data.n, 1), op.get("phi0"), _variant(data, op.get("type", "Pstar")))
            scalars.append(integrate_system_P(data, spec, substeps=int(_get(payload, "substeps", 2))))
        else:
            A = analyze_operator([[x]])
            triple = _l_triple(data, A, op) if op else generate_admissible_triple(A, data.c, data.c_tilde, data.n, data.p, rng)
            verdict = solve_sylvester_system(SylvesterSpec(A, data.c, data.c_tilde, *triple))
            if verdict.status is not Verdict.UniqueInvertible:
                raise SchemaError(f"scalar {i + 1} is not admissible (verdict {verdict.status.value})")
            comb, _ = integrate_L_transform(data, A, triple, verdict.solution, substeps=int(_get(payload, "substeps", 2)))
            scalars.append(comb)
    return scalars


def cube_checks(report: Report, cube: BianchiCube, seed_data: PrincipalData, unit_sphere: bool = False, prefix: str = "cube") -> dict:
    """Path independence, Omega diagonal and per-vertex checks; returns the manifest.

    ``unit_sphere`` adds the ``sum v_i^2 = 1`` check for cubes over P* data.
    """
    report.stage = "bianchi.path_independence"
    paths = cube.path_independence()
    manifest = cube_manifest(cube, paths)
    report.check(f"{prefix}.omega_diagonal", manifest["omega_diagonal_residual"], "omega_diagonal")
    report.check(f"{prefix}.commutation", cube.commutation, "commutation")
    report.stage = "bianchi.vertex_data"
    for entry in manifest["vertices"]:
        alpha = tuple(i - 1 for i in entry["subset"])
        if not alpha:
            continue
        label = "".join(str(i + 1) for i in alpha)
        report.check(f"{prefix}.vertex_{label}.path_independence", entry["path_independence"], "path_independence")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            vd = cube.vertex_data(alpha)
        curvature_check(report, f"{prefix}.vertex_{label}.curvature", vd, seed_data.c, cube.active)
        if cube.kind == "P":
            _class_check(report, f"{prefix}.vertex_{label}", vd, cube.active)
        else:
            report.check(f"{prefix}.vertex_{label}.sphere", check_sphere_containment(cube.vertices[alpha], cube.active) if cube.frame.ambient_curvature > 0 else 0.0, "sphere")
        if unit_sphere:
            report.check(f"{prefix}.vertex_{label}.sum_v_squared", check_sphere_containment(vd, cube.active), "sphere")
    return manifest


def run_cube(job: JobSpec, report: Report, fmt: str) -> None:
    p = job.payload
    report.stage = "seeds"
    data, frame = build_seed(p)
    kind = _get(p, "kind", "P")
    params = [float(x) for x in _get(p, "params", required=True)]
    report.stage = "bianchi.scalar_transforms"
    scalars = _cube_scalars(data, kind, params, p)
    report.stage = "bianchi.build_cube"
    if kind == "P":
        cube = build_cube_P(scalars, params, frame, data)
    elif kind == "L":
        cube = build_cube_L(scalars, params, data.c, data.c_tilde, frame, data)
    else:
        raise SchemaError(f"unknown cube kind {kind!r}")
    pstar = kind == "P" and all(dict(sc).get("type", "Pstar") == "Pstar" for sc in (_get(p, "scalars") or [{}]))
    manifest = cube_checks(report, cube, data, unit_sphere=pstar and data.c == 0)
    _write_cube(job, report, cube, data.grid, manifest, fmt)


def _write_cube(job, report, cube, grid, manifest, fmt, prefix="vertex") -> None:
    report.stage = "output"
    for entry in manifest["vertices"]:
        alpha = tuple(i - 1 for i in entry["subset"])
        label = "".join(str(i + 1) for i in alpha) or "0"
        entry["file"] = _write_geom(job, report, cube.vertices[alpha], grid, f"{prefix}_{label}", fmt)
    report.results["manifest"] = manifest
    _write_json(job, report, "manifest", manifest)


def run_vacuum_demo(job: JobSpec, report: Report, fmt: str) -> None:
    p = job.payload
    n = int(_get(p, "n", 2))
    grid = parse_grid(_get(p, "grid", {"n": n, "half_width": 1.0, "spacing": 1e-2}), n)
    Ps = [float(x) for x in _get(p, "P", [1.0, 2.0])]
    substeps = int(_get(p, "substeps", 2))
    seed = vacuum_seed(n, grid)
    _write_geom(job, report, seed.frame, grid, "seed", fmt)
    scalars = []
    for P in Ps:
        report.stage = "lagrangian.apply_Pstar_transform"
        spec = scalar_spec(P, n)
        res = apply_Pstar_transform(seed.frame, seed.data, spec, substeps=substeps, with_frame=False)
        scalars.append(res.comb)
        act = res.data.active
        ref = scalar_P_closed_form(P, grid)
        report.check(f"scalar_P{P:g}.vs_closed_form", np.abs(res.frame.f - ref.f)[act].max(), "closed_form")
        for key, val in res.invariants(spec).items():
            report.check(f"scalar_P{P:g}.{key}", val, key)
        report.check(f"scalar_P{P:g}.sum_v_squared", check_sphere_containment(res.data), "sphere")
        _write_geom(job, report, res.frame, grid, f"scalar_P{P:g}", fmt)
    if bool(_get(p, "nondiag", True)):
        report.stage = "lagrangian.apply_Pstar_transform"
        spec = nondiag_spec(n)
        res = apply_Pstar_transform(seed.frame, seed.data, spec, substeps=substeps, with_frame=False)
        ref = nondiag_closed_form(grid)
        act = res.data.active & ref.active
        report.check("nondiag.vs_closed_form", np.abs(res.frame.f - ref.f)[act].max(), "closed_form")
        for key, val in res.invariants(spec).items():
            report.check(f"nondiag.{key}", val, key)
        report.check("nondiag.sum_v_squared", check_sphere_containment(res.data), "sphere")
        _write_geom(job, report, res.frame, grid, "nondiag", fmt)
    if bool(_get(p, "cube", True)) and len(Ps) >= 1:
        report.stage = "bianchi.build_cube_P"
        cube = build_cube_P(scalars, Ps, seed.frame, seed.data)
        manifest = cube_checks(report, cube, seed.data, unit_sphere=True)
        _write_cube(job, report, cube, grid, manifest, fmt)


RUNNERS = {
    "lyapunov": run_lyapunov,
    "sylvester": run_sylvester,
    "transform": run_transform,
    "cube": run_cube,
    "vacuum-demo": run_vacuum_demo,
    "verify": run_verify,
}


def _write_json(job: JobSpec, report: Report, name: str, obj) -> str:
    path = job.output_dir / f"{name}.json"
    path.write_text(json.dumps(obj, indent=2))
    report.outputs.append(path.name)
    return path.name


def _write_geom(job, report, frame, grid, name, fmt) -> str:
    path = write_geometry(frame, grid, job.output_dir / name, fmt)
    report.outputs.append(path.name)
    return path.name


# ---------------------------------------------------------------------------
# entry point


def run_job(job: JobSpec, fmt: str = "csv") -> Report:
    """Run a validated job; errors are captured in the report, never raised."""
    report = Report(job.command, job.tolerances)
    try:
        if fmt not in FORMATS:
            raise SchemaError(f"unknown format {fmt!r}")
        job.output_dir.mkdir(parents=True, exist_ok=True)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                RUNNERS[job.command](job, report, fmt)
            finally:
                report.warnings = sorted({f"{w.category.__name__}: {w.message}" for w in caught})
    except RibaucourError as exc:
        report.error = {"type": type(exc).__name__, "stage": report.stage, "message": str(exc), "exit_code": exc.exit_code}
    except (KeyError, TypeError, ValueError) as exc:
        report.error = {"type": type(exc).__name__, "stage": report.stage, "message": str(exc), "exit_code": 2}
    except (np.linalg.LinAlgError, FloatingPointError, ZeroDivisionError) as exc:
        report.error = {"type": type(exc).__name__, "stage": report.stage, "message": str(exc), "exit_code": 3}
    if job.output_dir.is_dir():
        (job.output_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2))
    return report


def _parse_tol(items) -> dict:
    out = {}
    for item in items or []:
        name, sep, value = item.partition("=")
        if not sep:
            raise SchemaError(f"--tol expects name=value, got {item!r}")
        try:
            out[name.strip()] = float(value)
        except ValueError as exc:
            raise SchemaError(f"tolerance {name!r} is not a number") from exc
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vribaucour", description="Vectorial Ribaucour transform pipelines.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for cmd in COMMANDS:
        sp = sub.add_parser(cmd)
        sp.add_argument("--spec", type=Path, help="job spec or payload (JSON)")
        sp.add_argument("--out", type=Path, help="output directory (default: spec output_dir or ./out)")
        sp.add_argument("--tol", action="append", metavar="NAME=VALUE", help="override a tolerance")
        sp.add_argument("--format", choices=FORMATS, default="csv", help="geometry file format")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        obj = json.loads(args.spec.read_text()) if args.spec is not None else {}
        job = JobSpec.from_dict(obj, args.command, args.out, _parse_tol(args.tol))
    except (OSError, json.JSONDecodeError, SchemaError, TypeError, ValueError) as exc:
        print(f"vribaucour {args.command}: input error: {exc}", file=sys.stderr)
        return 2
    report = run_job(job, args.format)
    for c in report.checks:
        mark = {True: "ok", False: "FAIL", None: "skip"}[c["passed"]]
        res = "n/a" if c["residual"] is None else f"{c['residual']:.3e}"
        print(f"{mark:4s} {c['name']}: {res} (tol {c['tolerance']:.0e})")
    if report.error is not None:
        e = report.error
        print(f"vribaucour {args.command}: {e['type']} in {e['stage']}: {e['message']}", file=sys.stderr)
    return report.exit_code()


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
