import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import cube_mesh
from implicit_sampling.cli import EXIT_ASSERT, EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from implicit_sampling.mesh import load_mesh, save_mesh
from implicit_sampling.sampling import load_dataset
from implicit_sampling.toynet import load_checkpoint


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def occ_data(tmp_path):
    path = tmp_path / "occ.json"
    assert run("sample", "--shape", "sphere", "--strategy", "S_BS", "--kind", "occ", "--n", 600, "--seed", 0, "--output", path) == EXIT_OK
    return path


def test_usage_errors(capsys):
    assert run() == EXIT_USAGE
    assert run("sample", "--shape", "sphere") == EXIT_USAGE
    assert run("sample", "--shape", "sphere", "--strategy", "S_WHAT", "--kind", "occ", "--n", 10, "--seed", 0, "--output", "x") == EXIT_USAGE
    assert run("--version") == EXIT_OK


def test_sample_manifest(tmp_path, capsys):
    path = tmp_path / "d.json"
    assert run("sample", "--shape", "sphere", "--strategy", "S_BS", "--kind", "sdf", "--n", 2000, "--seed", 1, "--output", path) == EXIT_OK
    out = capsys.readouterr().out
    assert "surface(sigma=0.1)=1000" in out and "surface(sigma=0.01)=1000" in out
    manifest = json.loads(path.read_text())
    assert manifest["provenance"]["component_counts"] == [1000, 1000]
    assert manifest["command"]["argv"][0] == "sample"
    assert len(load_dataset(path)) == 2000


def test_sample_is_reproducible(tmp_path):
    args = ["sample", "--shape", "torus", "--strategy", "S_Linear", "--kind", "udf", "--n", 500, "--seed", 4]
    run(*args, "--output", tmp_path / "a.json")
    run(*args, "--output", tmp_path / "b.json")
    assert json.loads((tmp_path / "a.json").read_text())["sha256"] == json.loads((tmp_path / "b.json").read_text())["sha256"]


def test_mask_needs_udf(tmp_path, capsys):
    code = run("sample", "--shape", "sphere", "--strategy", "S_UNI", "--kind", "sdf", "--n", 100, "--seed", 0, "--mask", 0.1, "--output", tmp_path / "d.json")
    assert code == EXIT_DATA
    assert "error" in capsys.readouterr().err
    code = run("sample", "--shape", "sphere", "--strategy", "S_UNI", "--kind", "udf", "--n", 100, "--seed", 0, "--mask", 0.1, "--output", tmp_path / "d.json")
    assert code == EXIT_OK and load_dataset(tmp_path / "d.json").mask is not None


def test_missing_input_is_a_data_error(tmp_path):
    assert run("train", "--data", tmp_path / "nope.json", "--archetype", "GlobalMLP", "--seed", 0, "--output", tmp_path / "m.json") == EXIT_DATA


def test_normalize(tmp_path):
    save_mesh(cube_mesh(2.0, 6.0), tmp_path / "in.obj")
    assert run("normalize", "--input", tmp_path / "in.obj", "--output", tmp_path / "out.off", "--padding", 0.1) == EXIT_OK
    lo, hi = load_mesh(tmp_path / "out.off").bounds()
    assert np.allclose(hi - lo, 0.8) and np.allclose(lo + hi, 0.0)


def test_train_is_deterministic(tmp_path, occ_data):
    for name in ("a", "b"):
        assert run("train", "--data", occ_data, "--archetype", "GlobalMLP", "--seed", 3, "--epochs", 3, "--output", tmp_path / f"{name}.json") == EXIT_OK
    ha = json.loads((tmp_path / "a.json").read_text())["sha256"]
    hb = json.loads((tmp_path / "b.json").read_text())["sha256"]
    assert ha == hb
    model = load_checkpoint(tmp_path / "a.json")
    assert model.provenance["strategy"] == "S_BS" and model.provenance["shape"].startswith("sphere")


def test_train_rejects_mixed_kinds(tmp_path, occ_data):
    run("sample", "--shape", "sphere", "--strategy", "S_UNI", "--kind", "sdf", "--n", 100, "--seed", 0, "--output", tmp_path / "sdf.json")
    code = run("train", "--data", occ_data, tmp_path / "sdf.json", "--archetype", "AutoDecoder", "--seed", 0, "--epochs", 1, "--output", tmp_path / "m.json")
    assert code == EXIT_USAGE


def test_extract_and_eval(tmp_path, occ_data, capsys):
    ckpt = tmp_path / "m.json"
    run("train", "--data", occ_data, "--archetype", "GlobalMLP", "--seed", 0, "--epochs", 30, "--output", ckpt)
    assert run("extract", "--checkpoint", ckpt, "--output", tmp_path / "m.off", "--seed", 0, "--resolution", 24) == EXIT_OK
    # an occupancy model has no distance field to descend
    assert run("extract", "--checkpoint", ckpt, "--output", tmp_path / "m.xyz", "--seed", 0, "--method", "udf") == EXIT_DATA
    prefix = tmp_path / "report"
    assert run("eval", "--checkpoint", ckpt, "--shape", "sphere", "--seed", 0, "--resolution", 24, "--samples", 500, "--output", prefix) == EXIT_OK
    with open(tmp_path / "report.csv", newline="") as fh:
        metrics = {row["metric"] for row in csv.DictReader(fh)}
    assert metrics == {"IoU", "Chamfer-L2", "F-Score(1.5%)", "Normal Consistency"}
    assert json.loads((tmp_path / "report.json").read_text())["provenance"]["command"]["argv"][0] == "eval"


def test_extract_udf_points(tmp_path):
    run("sample", "--shape", "sphere", "--strategy", "S_NS", "--kind", "udf", "--n", 800, "--seed", 0, "--output", tmp_path / "u.json")
    run("train", "--data", tmp_path / "u.json", "--archetype", "GridInterp", "--seed", 0, "--epochs", 20, "--output", tmp_path / "m.json")
    assert run("extract", "--checkpoint", tmp_path / "m.json", "--output", tmp_path / "m.off", "--seed", 0, "--method", "mesh") == EXIT_USAGE
    code = run("extract", "--checkpoint", tmp_path / "m.json", "--output", tmp_path / "m.xyz", "--seed", 0, "--n", 200, "--mask", 0.1, "--shape", "sphere")
    assert code in (EXIT_OK, EXIT_DATA)
    header = (tmp_path / "m.xyz").read_text().splitlines()[0]
    assert json.loads(header.lstrip("# "))["command"]["argv"][0] == "extract"


def test_bench_and_dscore(tmp_path, capsys):
    plan = {
        "shapes": ["sphere"],
        "strategies": ["S_UNI", "S_BS"],
        "models": [{"archetype": "GlobalMLP", "kind": "occ"}],
        "epochs": 5,
        "resolution": 16,
        "eval_samples": 300,
        "densities": [300],
    }
    (tmp_path / "plan.json").write_text(json.dumps(plan))
    out = tmp_path / "bench"
    code = run("bench", "--plan", tmp_path / "plan.json", "--output", out)
    assert code == EXIT_OK
    lines = (out / "dscore.csv").read_text().splitlines()
    assert lines[0] == "strategy,d_score" and len(lines) == 3
    capsys.readouterr()
    assert run("dscore", "--report", out / "report.csv", "--weight", "IoU=2", "--output", tmp_path / "d.csv") == EXIT_OK
    assert len((tmp_path / "d.csv").read_text().splitlines()) == 3
    assert run("dscore", "--report", out / "report.csv", "--weight", "IoU") == EXIT_USAGE


def test_bench_assert_exit_code(tmp_path, monkeypatch):
    import implicit_sampling.bench as bench

    real = bench.run_bench

    def failing(*a, **k):
        res = real(*a, **k)
        res.findings.append({"finding": "forced", "status": "fail", "detail": {}})
        return res

    monkeypatch.setattr(bench, "run_bench", failing)
    plan = {"strategies": ["S_UNI", "S_HFS"], "models": [{"archetype": "GlobalMLP", "kind": "occ"}], "epochs": 2, "resolution": 12, "eval_samples": 200, "densities": [200]}
    (tmp_path / "plan.json").write_text(json.dumps(plan))
    code = run("bench", "--plan", tmp_path / "plan.json", "--output", tmp_path / "b", "--assert")
    assert code == EXIT_ASSERT


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "implicit_sampling", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip()
