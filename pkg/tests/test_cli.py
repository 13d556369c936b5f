import copy
import csv
import io
import json
from pathlib import Path

import numpy as np
import pytest

from bundletc import cli

DEMOS = Path(__file__).resolve().parents[1] / "demos"
CONFIGS = DEMOS / "configs"


def load(name):
    return json.loads((CONFIGS / name).read_text())


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


# -- typecheck -------------------------------------------------------------------------


def test_typecheck_valid_file(capsys):
    code, out, _ = run(capsys, "typecheck", str(DEMOS / "dsl" / "composition.bt"))
    assert code == 0
    lines = out.strip().split("\n")
    assert len(lines) == 3
    assert lines[0].endswith("pair(B, A, 1) : " + lines[0].split(" : ")[1])
    assert ":9:1: pair(B, A, 1) : " in lines[0]


def test_typecheck_mismatch(capsys):
    path = str(DEMOS / "dsl" / "mismatch.bt")
    code, out, _ = run(capsys, "typecheck", path)
    assert code == 1
    assert out.startswith(f"{path}:7:1: SpaceMismatch: ")


def test_typecheck_pullback_demo(capsys):
    code, out, _ = run(capsys, "typecheck", str(DEMOS / "dsl" / "pullback.bt"))
    assert code == 0 and out.count("\n") == 3


def test_typecheck_missing_file(capsys, tmp_path):
    code, _, err = run(capsys, "typecheck", str(tmp_path / "nope.bt"))
    assert code == 2 and "cannot read" in err


def test_typecheck_parse_error(capsys, tmp_path):
    f = tmp_path / "bad.bt"
    f.write_text("manifold(V, 3)\npair(A\n")
    code, out, _ = run(capsys, "typecheck", str(f))
    assert code == 1
    assert out.startswith(f"{f}:3:1: ParseError: ")


def test_telescope_levels(capsys, monkeypatch):
    path = str(DEMOS / "dsl" / "composition.bt")
    outs = {}
    for level in ("high", "mid", "low"):
        code, outs[level], _ = run(capsys, "typecheck", path, "--telescope", level)
        assert code == 0
    assert len(outs["low"]) < len(outs["mid"]) <= len(outs["high"])
    monkeypatch.setenv("BUNDLETC_TELESCOPE", "low")
    assert run(capsys, "typecheck", path)[1] == outs["low"]
    assert run(capsys, "typecheck", path, "--telescope", "high")[1] == outs["high"]
    monkeypatch.setenv("BUNDLETC_TELESCOPE", "loud")
    assert run(capsys, "typecheck", path)[0] == 2


def test_bad_arguments(capsys):
    assert run(capsys)[0] == 2
    assert run(capsys, "typecheck", "x.bt", "--telescope", "loud")[0] == 2
    assert run(capsys, "geodesic")[0] == 2


# -- geodesic ---------------------------------------------------------------------------


def test_geodesic_meridian(capsys):
    code, out, _ = run(capsys, "geodesic", "-c", str(CONFIGS / "sphere_meridian.json"))
    assert code == 0
    assert out.split("\n")[0] == "t,x0,x1,speed,H"
    data = np.loadtxt(io.StringIO(out), delimiter=",", skiprows=1)
    assert np.ptp(data[:, 4]) < 1e-8
    # a meridian keeps φ fixed and moves θ at unit speed
    np.testing.assert_allclose(data[:, 1], 0.5 + data[:, 0], atol=1e-8)
    assert np.all(data[:, 2] == 0)


def test_geodesic_euclidean_is_linear(capsys):
    cfg = load("euclidean_line.json")
    code, out, _ = run(capsys, "geodesic", "-c", str(CONFIGS / "euclidean_line.json"))
    assert code == 0
    data = np.loadtxt(io.StringIO(out), delimiter=",", skiprows=1)
    x0, v0 = np.array(cfg["initial"]["x"]), np.array(cfg["initial"]["v"])
    k = len(x0)
    np.testing.assert_allclose(data[:, 1:1 + k], x0 + data[:, :1] * v0, atol=1e-12)


def test_geodesic_chart_exit(capsys):
    code, out, err = run(capsys, "geodesic", "-c", str(CONFIGS / "chart_exit.json"))
    assert code == 1 and out == ""
    t = float(err.split("chart exit at t=")[1].split(":")[0])
    assert 2.0 < t < np.pi - 0.4


def test_csv_format(capsys):
    _, out, _ = run(capsys, "geodesic", "-c", str(CONFIGS / "sphere_meridian.json"))
    assert "\r" not in out and out.endswith("\n")
    first = out.split("\n")[1].split(",")
    assert all(len(v.replace("-", "").replace(".", "").split("e")[0]) <= 17 for v in first)
    assert cli.format_csv(["a"], [[1 / 3]]) == "a\n0.33333333333333331\n"


def test_output_file(capsys, tmp_path):
    target = tmp_path / "out.csv"
    code, out, _ = run(capsys, "geodesic", "-c", str(CONFIGS / "sphere_meridian.json"), "-o", str(target))
    assert code == 0 and out == ""
    assert target.read_text().startswith("t,x0,x1,speed,H\n")
    code, _, err = run(capsys, "geodesic", "-c", str(CONFIGS / "sphere_meridian.json"),
                       "-o", str(tmp_path / "missing" / "out.csv"))
    assert code == 2 and "cannot write" in err


# -- config validation -------------------------------------------------------------------


@pytest.mark.parametrize("mutate,pointer", [
    (lambda c: c["solver"].__setitem__("T", "long"), "/solver/T"),
    (lambda c: c["manifold"].__setitem__("name", "Klein"), "/manifold/name"),
    (lambda c: c.pop("initial"), ""),
    (lambda c: c.__setitem__("extra", 1), ""),
])
def test_schema_errors_report_json_pointer(capsys, tmp_path, mutate, pointer):
    cfg = load("sphere_meridian.json")
    mutate(cfg)
    code, _, err = run(capsys, "geodesic", "-c", write(tmp_path, cfg))
    assert code == 2
    assert f"config error at {pointer or '/'}" in err


def test_vector_length_mismatch(capsys, tmp_path):
    cfg = load("sphere_meridian.json")
    cfg["initial"]["x"] = [0.5, 0.0, 1.0]
    code, _, err = run(capsys, "geodesic", "-c", write(tmp_path, cfg))
    assert code == 2 and "/initial/x" in err


def test_command_mismatch(capsys):
    code, _, err = run(capsys, "harmonic", "-c", str(CONFIGS / "sphere_meridian.json"))
    assert code == 2 and "geodesic" in err


def test_unreadable_configs(capsys, tmp_path):
    assert run(capsys, "geodesic", "-c", str(tmp_path / "none.json"))[0] == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(capsys, "geodesic", "-c", str(bad))[0] == 2


def test_domain_failure_exit_code(capsys, tmp_path):
    cfg = load("equator_variation.json")
    cfg["variation"] = {"kind": "constant", "vector": [1.0, 0.0]}
    code, _, err = run(capsys, "variation", "-c", write(tmp_path, cfg))
    # a constant variation moves the fixed boundary
    assert code == 2 and "boundary" in err


# -- harmonic ---------------------------------------------------------------------------


def test_harmonic_torus(capsys, tmp_path):
    field = tmp_path / "field.csv"
    code, out, _ = run(capsys, "harmonic", "-c", str(CONFIGS / "torus_harmonic.json"), "--field-output", str(field))
    assert code == 0
    hist = rows(out)
    assert list(hist[0]) == ["step", "tension"]
    assert float(hist[-1]["tension"]) < 1e-6
    assert float(hist[0]["step"]) == 0 and float(hist[0]["tension"]) > 1e-2
    final = np.loadtxt(field, delimiter=",", skiprows=1)
    assert final.shape == (17 * 17, 4)
    np.testing.assert_allclose(final[:, 2:], final[:, :2], atol=1e-4)


def test_harmonic_stdout_layout(capsys, tmp_path):
    cfg = load("torus_harmonic.json")
    cfg["domain"]["n"] = [9, 9]
    cfg["solver"] = {"steps": 20, "dt": 0.001, "record_every": 10}
    code, out, _ = run(capsys, "harmonic", "-c", write(tmp_path, cfg))
    assert code == 0
    history, field = out.split("\n\n")
    assert [r["step"] for r in rows(history + "\n")] == ["0", "10", "20"]
    assert field.startswith("x0,x1,phi0,phi1\n") and field.count("\n") == 82


# -- variation ---------------------------------------------------------------------------


def test_variation_on_critical_geodesic(capsys):
    code, out, _ = run(capsys, "variation", "-c", str(CONFIGS / "equator_variation.json"))
    assert code == 0
    rep = json.loads(out)
    assert abs(rep["first_variation_formula"]) < 1e-6
    assert abs(rep["first_variation_fd"]) < 1e-6
    assert abs(rep["second_variation_formula"] - rep["second_variation_fd"]) < 1e-3 * abs(rep["second_variation_fd"])
    assert abs(rep["energy"] - 1.0) < 1e-12
    assert rep["el_residual_max"] < 1e-6


def test_variation_free_boundary(capsys):
    code, out, _ = run(capsys, "variation", "-c", str(CONFIGS / "bent_curve_variation.json"))
    assert code == 0
    rep = json.loads(out)
    f, fd = rep["first_variation_formula"], rep["first_variation_fd"]
    assert abs(f - fd) / abs(fd) < 1e-4
    assert rep["second_variation_formula"] is None


@pytest.mark.parametrize("argv", [
    ("variation", "-c", str(CONFIGS / "bent_curve_variation.json")),
    ("geodesic", "-c", str(CONFIGS / "sphere_meridian.json")),
    ("verify", "--suite", "tensor", "--seed", "3"),
])
def test_outputs_are_deterministic(capsys, argv):
    first = run(capsys, *argv)
    second = run(capsys, *argv)
    assert first == second


def test_random_variation_depends_on_seed(capsys, tmp_path):
    cfg = load("bent_curve_variation.json")
    cfg["variation"] = {"kind": "random", "modes": 3}
    outs = []
    for seed in (1, 2):
        c = copy.deepcopy(cfg)
        c["seed"] = seed
        outs.append(json.loads(run(capsys, "variation", "-c", write(tmp_path, c, f"s{seed}.json"))[1]))
    assert outs[0]["first_variation_fd"] != outs[1]["first_variation_fd"]


# -- verify ------------------------------------------------------------------------------


def test_verify_covariant_seed_7(capsys):
    code, out, _ = run(capsys, "verify", "--suite", "covariant", "--seed", "7")
    assert code == 0
    assert "FAIL" not in out
    assert out.strip().split("\n")[-1].endswith("passed (seed 7)")


def test_verify_module_alias(capsys):
    code, out, _ = run(capsys, "verify", "--suite", "tensor_algebra", "--seed", "1")
    assert code == 0 and "tensor" in out


def test_verify_unknown_suite(capsys):
    code, _, err = run(capsys, "verify", "--suite", "everything")
    assert code == 2 and "unknown suite" in err
