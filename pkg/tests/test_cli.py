"""Command-line front end: exit codes, report contents, output formats, determinism."""

import json

import numpy as np
import pytest

from vribaucour.cli import DEFAULT_TOLERANCES, JobSpec, main, run_job
from vribaucour.errors import SchemaError


def _spec(tmp_path, obj, name="spec.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return p


def _report(out):
    return json.loads((out / "report.json").read_text())


SMALL_GRID = {"n": 2, "half_width": 0.3, "spacing": 0.02}
CUBE_GRID = {"n": 2, "half_width": 0.3, "spacing": 0.01}


def test_lyapunov_solution_and_report(tmp_path):
    out = tmp_path / "o"
    spec = _spec(tmp_path, {"P": [[1, 1], [-1, 1]], "C": [[2, 2], [4, 4]]})
    assert main(["lyapunov", "--spec", str(spec), "--out", str(out)]) == 0
    sol = json.loads((out / "solution.json").read_text())["solution"]
    assert np.allclose(sol, [[2.0, 0.5], [1.5, 1.0]], atol=1e-12)
    rep = _report(out)
    assert rep["status"] == "passed" and rep["exit_code"] == 0
    names = {c["name"] for c in rep["invariants"]}
    assert {"lyapunov.residual", "lyapunov.vs_dense_solve"} <= names
    for c in rep["invariants"]:
        assert {"residual", "tolerance", "passed"} <= set(c)


def test_full_job_spec_accepted(tmp_path):
    out = tmp_path / "o"
    spec = _spec(tmp_path, {"command": "lyapunov", "payload": {"P": [[2.0]], "C": [[4.0]]}, "output_dir": str(out), "tolerances": {"lyapunov": 1e-12}})
    assert main(["lyapunov", "--spec", str(spec)]) == 0
    rep = _report(out)
    assert rep["tolerances"]["lyapunov"] == 1e-12
    assert rep["results"]["solution"] == [[1.0]]


def test_command_mismatch_is_input_error(tmp_path):
    spec = _spec(tmp_path, {"command": "sylvester", "payload": {}})
    assert main(["lyapunov", "--spec", str(spec), "--out", str(tmp_path / "o")]) == 2


def test_unknown_tolerance_is_input_error(tmp_path):
    spec = _spec(tmp_path, {"P": [[1.0]], "C": [[1.0]]})
    assert main(["lyapunov", "--spec", str(spec), "--out", str(tmp_path / "o"), "--tol", "bogus=1"]) == 2
    assert main(["lyapunov", "--spec", str(spec), "--out", str(tmp_path / "o"), "--tol", "lyapunov"]) == 2
    assert main(["lyapunov", "--spec", str(spec), "--out", str(tmp_path / "o"), "--tol", "lyapunov=abc"]) == 2


def test_malformed_json_is_input_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["lyapunov", "--spec", str(p), "--out", str(tmp_path / "o")]) == 2
    assert main(["lyapunov", "--spec", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 2


def test_empty_grid_reports_input_error(tmp_path):
    out = tmp_path / "o"
    spec = _spec(tmp_path, {"seed": "vacuum", "grid": {}})
    assert main(["verify", "--spec", str(spec), "--out", str(out)]) == 2
    rep = _report(out)
    assert rep["status"] == "error" and rep["error"]["type"] == "SchemaError"
    assert rep["error"]["stage"] == "seeds"


@pytest.mark.parametrize("payload", [
    {"P": [[1, 2, 3]], "C": [[1.0]]},
    {"P": [[1.0]]},
    {"P": [[float("nan")]], "C": [[1.0]]},
])
def test_bad_matrices_are_input_errors(tmp_path, payload):
    out = tmp_path / "o"
    spec = _spec(tmp_path, payload)
    assert main(["lyapunov", "--spec", str(spec), "--out", str(out)]) == 2
    assert _report(out)["exit_code"] == 2


def test_singular_lyapunov_is_numerical_error(tmp_path):
    out = tmp_path / "o"
    spec = _spec(tmp_path, {"P": [[1.0, 0.0], [0.0, -1.0]], "C": [[1.0, 0.0], [0.0, 1.0]]})
    code = main(["lyapunov", "--spec", str(spec), "--out", str(out)])
    assert code == 3
    assert _report(out)["error"]["stage"] == "matrixeq.solve_lyapunov"


def test_tight_tolerance_gives_invariant_failure(tmp_path):
    out = tmp_path / "o"
    spec = _spec(tmp_path, {"seed": "clifford_torus", "grid": SMALL_GRID})
    assert main(["verify", "--spec", str(spec), "--out", str(out), "--tol", "seed_system=1e-30"]) == 1
    rep = _report(out)
    assert rep["status"] == "invariant_failure"
    assert any(c["passed"] is False for c in rep["invariants"])


def test_jobspec_validation():
    with pytest.raises(SchemaError):
        JobSpec("nope", {}, "out")
    with pytest.raises(SchemaError):
        JobSpec("lyapunov", [], "out")
    job = JobSpec("lyapunov", {}, "out", {"sphere": "1e-6"})
    assert job.tolerances["sphere"] == 1e-6
    assert job.tolerances["lyapunov"] == DEFAULT_TOLERANCES["lyapunov"]


def test_sylvester_verdict(tmp_path):
    out = tmp_path / "o"
    spec = _spec(tmp_path, {"A": [[0.4, 0.1], [0.1, 0.6]], "c": 0, "c_tilde": 1, "w1": 2, "w2": 1, "rng_seed": 4})
    assert main(["sylvester", "--spec", str(spec), "--out", str(out)]) == 0
    rep = _report(out)
    assert rep["results"]["verdict"] == "UniqueInvertible"
    assert np.asarray(rep["results"]["solution"]).shape == (2, 2)
    names = {c["name"] for c in rep["invariants"]}
    assert {"sylvester.symmetric_part", "sylvester.operator_equation"} <= names


def test_sylvester_inadmissible_triple(tmp_path):
    # alpha = 2 lies outside the admissible interval for c = 0, ct = 1
    out = tmp_path / "o"
    spec = _spec(tmp_path, {"A": [[2.0]], "c": 0, "c_tilde": 1, "psi": [1.0], "nu": [[1.0]], "beta0": [[0.0]]})
    main(["sylvester", "--spec", str(spec), "--out", str(out)])
    assert _report(out)["results"]["verdict"] != "UniqueInvertible"


def test_verify_seed(tmp_path):
    out = tmp_path / "o"
    spec = _spec(tmp_path, {"seed": "sphere_torus", "grid": SMALL_GRID})
    assert main(["verify", "--spec", str(spec), "--out", str(out)]) == 0
    names = [c["name"] for c in _report(out)["invariants"]]
    assert names == ["seed.system", "seed.frame_orthonormality", "seed.position_derivative"]


def test_transform_with_inverse(tmp_path):
    out = tmp_path / "o"
    payload = {"seed": "sphere_torus", "grid": SMALL_GRID,
               "operator": {"type": "L", "matrix": [[0.4, 0.1], [0.1, 0.6]], "rng_seed": 1, "inverse": True}}
    spec = _spec(tmp_path, {"command": "transform", "payload": payload})
    assert main(["transform", "--spec", str(spec), "--out", str(out)]) == 0
    rep = _report(out)
    checks = {c["name"]: c for c in rep["invariants"]}
    for name in ("transform.omega_gram", "transform.omega_L", "transform.sphere", "transform.inverse_round_trip"):
        assert checks[name]["passed"] is True
    assert rep["results"]["sylvester_verdict"] == "UniqueInvertible"
    assert (out / "transformed.csv").exists()


def test_transform_unknown_type(tmp_path):
    out = tmp_path / "o"
    spec = _spec(tmp_path, {"seed": "vacuum", "grid": SMALL_GRID, "operator": {"type": "Q"}})
    assert main(["transform", "--spec", str(spec), "--out", str(out)]) == 2


def test_pstar_transform_on_vacuum(tmp_path):
    out = tmp_path / "o"
    payload = {"seed": "vacuum", "grid": SMALL_GRID, "operator": {"type": "Pstar", "matrix": [[1.0]], "gamma0": [[1.0], [0.0]]}}
    spec = _spec(tmp_path, payload)
    assert main(["transform", "--spec", str(spec), "--out", str(out)]) == 0
    names = {c["name"] for c in _report(out)["invariants"]}
    assert {"transform.omega_gram", "transform.omega_L", "transform.sum_v_squared"} <= names


@pytest.mark.parametrize("fmt", ["csv", "json", "obj"])
def test_geometry_formats(tmp_path, fmt):
    out = tmp_path / "o"
    payload = {"seed": "clifford_torus", "grid": {"n": 2, "half_width": 0.2, "spacing": 0.05},
               "operator": {"type": "L", "matrix": [[0.5]], "rng_seed": 2, "substeps": 4}}
    spec = _spec(tmp_path, payload)
    main(["transform", "--spec", str(spec), "--out", str(out), "--format", fmt])
    path = out / f"transformed.{fmt}"
    assert path.exists()
    nodes = 9 * 9
    if fmt == "csv":
        table = np.loadtxt(path, delimiter=",", skiprows=1)
        assert table.shape == (nodes, 2 + 4 + 1)
        header = path.read_text().splitlines()[0].split(",")
        assert header[:2] == ["u1", "u2"] and header[-1] == "active"
    elif fmt == "json":
        obj = json.loads(path.read_text())
        assert len(obj["positions"]) == nodes and obj["ambient_dim"] == 4
    else:
        lines = path.read_text().splitlines()
        assert sum(line.startswith("v ") for line in lines) == nodes
        faces = [line for line in lines if line.startswith("f ")]
        assert faces and all(len(f.split()) == 5 for f in faces)


def test_obj_needs_two_parameters(tmp_path):
    out = tmp_path / "o"
    spec = _spec(tmp_path, {"seed": "vacuum", "grid": {"n": 3, "half_width": 0.1, "spacing": 0.05},
                            "operator": {"type": "Pstar", "matrix": [[1.0]], "gamma0": [[1.0], [0.0], [0.0]]}})
    assert main(["transform", "--spec", str(spec), "--out", str(out), "--format", "obj"]) == 2


def test_cube_manifest_L(tmp_path):
    out = tmp_path / "o"
    spec = _spec(tmp_path, {"seed": "sphere_torus", "grid": CUBE_GRID, "kind": "L", "params": [0.3, 0.5], "rng_seed": 3})
    assert main(["cube", "--spec", str(spec), "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["k"] == 2 and len(man["vertices"]) == 4
    for entry in man["vertices"]:
        assert (out / entry["file"]).exists()


def test_cube_duplicate_params(tmp_path):
    out = tmp_path / "o"
    spec = _spec(tmp_path, {"seed": "sphere_torus", "grid": SMALL_GRID, "kind": "L", "params": [0.5, 0.5]})
    assert main(["cube", "--spec", str(spec), "--out", str(out)]) == 2
    assert _report(out)["error"]["type"] == "DuplicateOperator"


def test_vacuum_demo(tmp_path):
    out = tmp_path / "o"
    spec = _spec(tmp_path, {"n": 2, "grid": {"n": 2, "half_width": 0.3, "spacing": 0.01}, "P": [1.0, 2.0]})
    assert main(["vacuum-demo", "--spec", str(spec), "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert len(man["vertices"]) == 4
    rep = _report(out)
    names = {c["name"] for c in rep["invariants"]}
    assert {"scalar_P1.vs_closed_form", "scalar_P2.vs_closed_form", "nondiag.vs_closed_form"} <= names
    for f in ("seed.csv", "scalar_P1.csv", "scalar_P2.csv", "nondiag.csv"):
        assert (out / f).exists()


def test_deterministic_outputs(tmp_path):
    spec = _spec(tmp_path, {"seed": "sphere_torus", "grid": SMALL_GRID, "kind": "L", "params": [0.3, 0.6], "rng_seed": 5})
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        main(["cube", "--spec", str(spec), "--out", str(out)])
    files = sorted(p.name for p in outs[0].iterdir())
    assert files == sorted(p.name for p in outs[1].iterdir())
    for name in files:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name


def test_run_job_never_raises(tmp_path):
    job = JobSpec("transform", {"seed": "nowhere", "grid": SMALL_GRID}, tmp_path / "o")
    rep = run_job(job)
    assert rep.exit_code() == 2
    assert run_job(job, fmt="xyz").exit_code() == 2
