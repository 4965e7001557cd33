import csv
import json

import jsonschema
import numpy as np
import pytest

import infbilap.cli as cli
from infbilap.core import ConvergenceError, ScalarField


@pytest.fixture
def out(tmp_path, monkeypatch):
    monkeypatch.setenv("LINFTY_OUT", str(tmp_path))
    return tmp_path


def _validate_all(path):
    for f in sorted(path.glob("*.json")):
        jsonschema.validate(json.loads(f.read_text()), cli.load_schema(cli.schema_name(f.name)))


def _read(path, name):
    return json.loads((path / name).read_text())


def test_exact1d_test1(out):
    assert cli.main(["exact1d", "--builtin", "test1", "--spec", "sq"]) == 0
    res = _read(out, "exact1d.json")
    assert res["left_curvature"] == pytest.approx(-8 / 15, abs=1e-10)
    assert res["right_curvature"] == pytest.approx(8 / 15, abs=1e-10)
    assert res["xi"] == pytest.approx(0.5, abs=1e-10)
    with open(out / "exact1d.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x", "u", "du", "d2u"]
    assert float(rows[1][3]) == pytest.approx(-8 / 15)
    meta = _read(out, "exact1d.meta.json")
    assert meta["config"]["builtin"] == "test1"
    assert set(meta["outputs"]) == {"exact1d.json", "exact1d.csv"}
    _validate_all(out)


@pytest.mark.parametrize(
    "argv",
    [
        ["exact1d", "--builtin", "test1", "--kind", "critical", "--level", "1"],
        ["exact1d", "--builtin", "test1", "--kind", "p-exact", "--p", "12"],
        ["exact1d", "--data", "0", "1", "0", "0.2", "0", "0.1", "--spec", "power:1,4"],
    ],
)
def test_exact1d_kinds(out, argv):
    assert cli.main(argv) == 0
    _validate_all(out)


def test_exact1d_data_file(out, tmp_path):
    (tmp_path / "in").mkdir()
    f = tmp_path / "in" / "data.json"
    f.write_text(json.dumps({"a": 0, "b": 1, "A": -1 / 40, "B": 1 / 40, "Aprime": 11 / 60, "Bprime": 11 / 60}))
    assert cli.main(["exact1d", "--data-file", str(f)]) == 0
    assert _read(out, "exact1d.json")["xi"] == pytest.approx(0.5)


@pytest.mark.parametrize(
    "argv",
    [
        ["exact1d"],
        ["exact1d", "--builtin", "test1", "--data", "0", "1", "0", "0", "0", "0"],
        ["exact1d", "--builtin", "nope"],
        ["exact1d", "--builtin", "test1", "--spec", "weird"],
        ["exact1d", "--builtin", "test1", "--kind", "critical"],
        ["exact1d", "--data", "1", "0", "0", "0", "0", "0"],
        ["exact1d", "--data", "0", "1", "0", "0.2", "0", "0", "--kind", "critical", "--level", "0.5"],
        ["solve1d", "--builtin", "test1", "--schedule", "2,x"],
        ["verify", "--suite", "unknown"],
        ["frobnicate"],
    ],
)
def test_usage_errors(out, argv):
    assert cli.main(argv) == 2


def test_out_flag_without_env(tmp_path, monkeypatch):
    monkeypatch.delenv("LINFTY_OUT", raising=False)
    target = tmp_path / "nested" / "dir"
    assert cli.main(["exact1d", "--builtin", "test1", "--out", str(target)]) == 0
    assert (target / "exact1d.json").exists()


def test_env_overrides_out_flag(out, tmp_path):
    other = tmp_path / "ignored"
    assert cli.main(["exact1d", "--builtin", "test1", "--out", str(other)]) == 0
    assert (out / "exact1d.json").exists()
    assert not other.exists()


@pytest.mark.parametrize("suite", ["residual-identities", "exact1d-oracle", "dsolution", "flow", "energy-limit"])
def test_verify_suites(out, suite):
    assert cli.main(["verify", "--suite", suite]) == 0
    rep = _read(out, f"verify_{suite}.json")
    assert rep["passed"] and rep["checks"]
    _validate_all(out)


def test_verify_failure_exit(out, monkeypatch):
    import infbilap.suites as suites

    monkeypatch.setitem(suites.SUITES, "flow", lambda: [{"name": "x", "passed": False, "value": 1.0, "tolerance": 0.0}])
    assert cli.main(["verify", "--suite", "flow"]) == 1


def test_solve1d(out):
    assert cli.main(["solve1d", "--builtin", "test1", "--schedule", "2,4,12", "--m", "32", "--samples", "65"]) == 0
    for p in (2, 4, 12):
        assert (out / f"solve1d_p{p}.csv").exists()
    rep = _read(out, "solve1d_report.json")
    assert [s["report"]["p"] for s in rep["stages"]] == [2, 4, 12]
    assert all(s["report"]["converged"] for s in rep["stages"])
    _validate_all(out)


def test_solve1d_unconverged_exit(out):
    assert cli.main(["solve1d", "--builtin", "test1", "--schedule", "2,42", "--m", "32", "--max-iter", "1"]) == 1
    assert _read(out, "solve1d.meta.json")["exit_status"] == 1


def test_numerical_failure_writes_diagnostics(out, monkeypatch):
    def boom(*a, **k):
        raise ConvergenceError("synthetic", {"iteration": 3, "residual": 0.5})

    monkeypatch.setattr(cli, "p_exact_solution", boom)
    assert cli.main(["exact1d", "--builtin", "test1", "--kind", "p-exact", "--p", "4"]) == 1
    err = _read(out, "error.json")
    assert err["diagnostics"]["iteration"] == 3
    _validate_all(out)


def test_solve2d(out):
    assert cli.main(["solve2d", "--n", "17", "--schedule", "4,6", "--xyz"]) == 0
    met = _read(out, "solve2d_metrics.json")
    assert [s["p"] for s in met["stages"]] == [4, 6]
    lap = np.loadtxt(out / "solve2d_lap_p4.csv", delimiter=",")
    assert lap.shape == (15, 15)
    xyz = np.loadtxt(out / "solve2d_lap_p4.xyz", delimiter=",", skiprows=1)
    assert xyz.shape == (225, 3)
    _validate_all(out)


def test_solve2d_quadratic(out):
    assert cli.main(["solve2d", "--n", "17", "--schedule", "4", "--quadratic", "0.25", "0", "-0.25", "0", "0", "0"]) == 0
    u = np.loadtxt(out / "solve2d_u_p4.csv", delimiter=",")
    x = np.linspace(-1, 1, 17)
    X, Y = np.meshgrid(x, x, indexing="ij")
    assert np.max(np.abs(u - (X * X - Y * Y) / 4)) < 1e-8


def test_residual_command(out, tmp_path):
    f = ScalarField.sample(lambda x: x**3, [0.0], [1.0], [101])
    (tmp_path / "in").mkdir()
    src = tmp_path / "in" / "field.json"
    src.write_text(f.to_json())
    assert cli.main(["residual", "--input", str(src), "--spec", "sq"]) == 0
    summary = _read(out, "residual.json")
    assert summary["levelcheck"]["passes"] is False
    data = np.loadtxt(out / "residual.csv", delimiter=",", skiprows=1)
    # H = t^2 on x^3: (2 * 6x)^3 * 6^2
    assert np.allclose(data[:, 1], 8 * (6 * data[:, 0]) ** 3 * 36, rtol=1e-6, atol=1e-6)
    _validate_all(out)


def test_residual_csv_needs_geometry(out, tmp_path):
    src = tmp_path / "field.csv"
    src.write_text("0,1,4,9\n")
    assert cli.main(["residual", "--input", str(src)]) == 2


def test_sweep_concurrent(out):
    assert cli.main(["sweep", "--sizes", "16,32", "--schedule", "2,4", "--jobs", "2"]) == 0
    rep = _read(out, "sweep.json")
    assert [r["m"] for r in rep["runs"]] == [16, 32]
    e16, e32 = (r["stages"][-1]["sup_error_vs_exact_nodes"] for r in rep["runs"])
    assert e32 < e16
    _validate_all(out)


def test_sweep_2d(out):
    assert cli.main(["sweep", "--problem", "2d", "--sizes", "17", "--schedule", "4"]) == 0
    assert _read(out, "sweep.json")["runs"][0]["n"] == 17


def test_deterministic_outputs(tmp_path, monkeypatch):
    blobs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        monkeypatch.setenv("LINFTY_OUT", str(d))
        assert cli.main(["solve1d", "--builtin", "test1", "--schedule", "2,4", "--m", "16", "--samples", "33"]) == 0
        blobs.append({f.name: f.read_bytes() for f in sorted(d.iterdir())})
    assert blobs[0] == blobs[1]
