import json

import pytest

from mbda.cli import main
from mbda.graph import fig1_dag


def _json_out(capsys):
    return json.loads(capsys.readouterr().out)


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    root = tmp_path_factory.mktemp("gen")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({"scenario": "general-shift", "n": 4, "C": 2, "samples": 2000}))
    assert main(["generate", "--seed", "11", "--config", str(cfg), "--out", str(root / "data")]) == 0
    return root


def test_generate_writes_manifest(generated):
    data = generated / "data"
    man = json.loads((data / "manifest.json").read_text())
    assert man["seed"] == 11
    names = set(man["files"])
    assert {"model.json", "target.csv", "domain_0.csv"} <= names
    assert (data / "target.csv").read_text().splitlines()[1].endswith(",")


def test_adapt_and_eval(generated, capsys):
    data = generated / "data"
    sol = generated / "solution.json"
    assert main(["adapt", "--data", str(data), "--model", str(data / "model.json"),
                 "--out", str(sol)]) == 0
    doc = json.loads(sol.read_text())
    assert doc["converged"] and doc["data_seed"] == 11
    assert len(doc["trace_head"]) <= 10 and len(doc["trace_tail"]) <= 10
    capsys.readouterr()
    assert main(["eval", "--solution", str(sol), "--data", str(data),
                 "--oracle", str(data / "model.json")]) == 0
    rep = _json_out(capsys)
    # small hard benchmark (oracle accuracy about 0.7); plumbing check only
    assert set(rep) >= {"accuracy", "posterior_tv", "log_loss", "n"}
    assert rep["n"] == 2000 and rep["posterior_tv"] < 0.2


def test_check_passes_on_benchmark(generated, capsys):
    assert main(["check", "--model", str(generated / "data" / "model.json")]) == 0
    out = _json_out(capsys)
    assert out["assumptionZ"]["verdict"] and out["assumptionY"]["verdict"]


def test_tampered_data_is_rejected(generated, tmp_path):
    import shutil

    data = tmp_path / "data"
    shutil.copytree(generated / "data", data)
    with open(data / "domain_0.csv", "a") as fh:
        fh.write("0.0,0.0,0.0,0.0,1\n")
    assert main(["adapt", "--data", str(data), "--model", str(data / "model.json")]) == 2


def test_graph_command(tmp_path, capsys):
    path = tmp_path / "dag.json"
    path.write_text(json.dumps(fig1_dag().to_json()))
    assert main(["graph", "--dag", str(path)]) == 0
    assert _json_out(capsys)["partition"] == {"pa": [1], "ch": [2], "sps": [3], "comp": [0]}


def test_verify_flags_contamination(generated, tmp_path, capsys):
    model = str(generated / "data" / "model.json")
    small = ["--samples", "1500", "--target-samples", "3000"]
    assert main(["verify", "--model", model, *small]) == 0
    out = _json_out(capsys)
    assert not out["flagged"] and out["max_deviation"] < 1e-8
    bad = tmp_path / "map.json"
    bad.write_text(json.dumps({"seed": 1, "cross_contamination": 0.3}))
    assert main(["verify", "--model", model, "--map", str(bad), *small]) == 3


@pytest.mark.parametrize("argv", [
    ["generate"],
    ["graph", "--dag", "/nonexistent.json"],
    ["adapt", "--data", "/nonexistent", "--model", "/nonexistent.json"],
    ["graph", "--seed", "-1"],
    ["graph", "--seed", str(1 << 64)],
    ["graph", "--tol", "0"],
    ["frobnicate"],
])
def test_input_errors_exit_2(argv):
    assert main(argv) == 2


def test_bad_config_key(generated, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"no_such_flag": 1}))
    assert main(["check", "--model", str(generated / "data" / "model.json"), "--config", str(cfg)]) == 2
