from __future__ import annotations

import json

import pytest
from click.testing import CliRunner

from esc_unlearn.cli import main
from esc_unlearn.model import init_model, save_checkpoint


def run(*args, env=None, ok=True):
    result = CliRunner().invoke(main, [str(a) for a in args], env=env)
    if ok and result.exit_code != 0:
        raise AssertionError(f"exit {result.exit_code}: {result.output}\n{result.exception!r}")
    return result


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    run("gen-data", "--classes", 10, "--per-class", 500, "--dim", 20, "--seed", 7, "--out", root / "data")
    run("train", "--data", root / "data/dataset.json", "--seed", 7, "--out", root / "model.json")
    return root


def test_gen_data_is_reproducible(tmp_path, workspace):
    run("gen-data", "--classes", 10, "--per-class", 500, "--dim", 20, "--seed", 7, "--out", tmp_path / "again")
    for name in ("train.csv", "test.csv", "dataset.json"):
        assert (tmp_path / "again" / name).read_bytes() == (workspace / "data" / name).read_bytes()
    manifest = json.loads((workspace / "data/dataset.manifest.json").read_text())
    assert manifest["command"] == "gen-data" and manifest["seed"] == 7
    assert "created" in manifest and "timings" in manifest


def test_seed_falls_back_to_environment(tmp_path):
    run("gen-data", "--classes", 3, "--per-class", 5, "--dim", 2, "--out", tmp_path / "env", env={"UNLEARN_SEED": "11"})
    run("gen-data", "--classes", 3, "--per-class", 5, "--dim", 2, "--seed", 11, "--out", tmp_path / "flag")
    assert (tmp_path / "env/train.csv").read_bytes() == (tmp_path / "flag/train.csv").read_bytes()


def test_usage_errors_exit_2(tmp_path, workspace):
    assert run("gen-data", "--classes", 1, "--out", tmp_path / "x", ok=False).exit_code == 2
    r = run("unlearn", "--data", workspace / "data/dataset.json", "--model", workspace / "model.json",
            "--method", "bogus", "--forget-classes", 0, "--out", tmp_path / "x.json", ok=False)
    assert r.exit_code == 2
    r = run("unlearn", "--data", workspace / "data/dataset.json", "--model", workspace / "model.json",
            "--method", "esc", "--out", tmp_path / "x.json", ok=False)
    assert r.exit_code == 2


def test_pipeline_with_esc_t(tmp_path, workspace):
    data, model = workspace / "data/dataset.json", workspace / "model.json"
    run("unlearn", "--data", data, "--model", model, "--method", "esc-t", "--forget-classes", 0, "--out", tmp_path / "esct.json")
    run("eval", "--data", data, "--model", model, "--sidecar", tmp_path / "esct.json", "--forget-classes", 0,
        "--out", tmp_path / "rep")
    run("probe", "--data", data, "--model", model, "--sidecar", tmp_path / "esct.json", "--forget-classes", 0,
        "--original", model, "--out", tmp_path / "kr.json")
    report = json.loads((tmp_path / "rep.json").read_text())
    assert report["hm"] >= 90.0
    assert report["seconds"] is not None
    assert (tmp_path / "rep.csv").read_text().startswith("method,acc_f,acc_r")
    kr = json.loads((tmp_path / "kr.json").read_text())
    assert kr["method"] == "kr-probe" and "recovery_rate" in kr["extra"]
    manifest = json.loads((tmp_path / "esct.manifest.json").read_text())
    assert manifest["config"]["tau"] == 0.75 and manifest["timings"]["method"] > 0


def test_zero_pruning_reproduces_original_report(tmp_path, workspace):
    data, model = workspace / "data/dataset.json", workspace / "model.json"
    run("unlearn", "--data", data, "--model", model, "--method", "esc", "--p", 0, "--forget-classes", 0,
        "--out", tmp_path / "esc0.json")
    run("eval", "--data", data, "--model", model, "--sidecar", tmp_path / "esc0.json", "--forget-classes", 0,
        "--no-probe", "--out", tmp_path / "a")
    run("eval", "--data", data, "--model", model, "--forget-classes", 0, "--no-probe", "--out", tmp_path / "b")
    a = json.loads((tmp_path / "a.json").read_text())
    b = json.loads((tmp_path / "b.json").read_text())
    for key in ("acc_f", "acc_r", "acc_ft", "acc_rt"):
        assert abs(a[key] - b[key]) <= 1e-6


def test_eval_on_missing_checkpoint_writes_nothing(tmp_path, workspace):
    r = run("eval", "--data", workspace / "data/dataset.json", "--model", tmp_path / "nope.json",
            "--forget-classes", 0, "--out", tmp_path / "rep", ok=False)
    assert r.exit_code != 0
    assert not list(tmp_path.glob("rep*"))


def test_corrupt_checkpoint_is_a_runtime_failure(tmp_path, workspace):
    (tmp_path / "bad.json").write_text('{"version": 1, "meta"')
    r = run("eval", "--data", workspace / "data/dataset.json", "--model", tmp_path / "bad.json",
            "--forget-classes", 0, "--out", tmp_path / "rep", ok=False)
    assert r.exit_code == 1
    assert not list(tmp_path.glob("rep*"))


def test_sidecar_dimension_mismatch_is_rejected(tmp_path, workspace):
    data, model = workspace / "data/dataset.json", workspace / "model.json"
    run("unlearn", "--data", data, "--model", model, "--method", "esc", "--forget-classes", 0, "--out", tmp_path / "esc.json")
    save_checkpoint(init_model([20, 64, 16], 10, seed=0), tmp_path / "narrow.json")
    r = run("eval", "--data", data, "--model", tmp_path / "narrow.json", "--sidecar", tmp_path / "esc.json",
            "--forget-classes", 0, "--out", tmp_path / "rep", ok=False)
    assert r.exit_code == 1
    assert "dimension" in r.output


def test_outputs_are_idempotent(tmp_path, workspace):
    data, model = workspace / "data/dataset.json", workspace / "model.json"
    for name in ("a", "b"):
        run("unlearn", "--data", data, "--model", model, "--method", "ng", "--forget-classes", 0, "--out", tmp_path / f"{name}.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    for name in ("r1", "r2"):
        run("eval", "--data", data, "--model", tmp_path / "a.json", "--forget-classes", 0, "--out", tmp_path / name)
    assert (tmp_path / "r1.json").read_bytes() == (tmp_path / "r2.json").read_bytes()
    assert (tmp_path / "r1.csv").read_bytes() == (tmp_path / "r2.csv").read_bytes()


def test_random_forget_fraction(tmp_path, workspace):
    data, model = workspace / "data/dataset.json", workspace / "model.json"
    run("unlearn", "--data", data, "--model", model, "--method", "esc", "--forget-fraction", 0.1, "--out", tmp_path / "f.json")
    run("eval", "--data", data, "--model", model, "--sidecar", tmp_path / "f.json", "--forget-fraction", 0.1,
        "--no-probe", "--json", "--no-csv", "--out", tmp_path / "rep")
    report = json.loads((tmp_path / "rep.json").read_text())
    assert report["acc_ft"] is None and report["mia"] is None
    assert not (tmp_path / "rep.csv").exists()


def test_incremental_prior_yields_merged_sidecar(tmp_path, workspace):
    data, model = workspace / "data/dataset.json", workspace / "model.json"
    run("unlearn", "--data", data, "--model", model, "--method", "esc", "--forget-classes", 0, "--out", tmp_path / "a.json")
    run("unlearn", "--data", data, "--model", model, "--method", "esc", "--forget-classes", 1,
        "--prior", tmp_path / "a.json", "--out", tmp_path / "ab.json")
    assert json.loads((tmp_path / "ab.json").read_text())["kind"] == "merged"
    run("eval", "--data", data, "--model", model, "--sidecar", tmp_path / "ab.json", "--forget-classes", "0,1",
        "--no-probe", "--out", tmp_path / "rep")
    assert json.loads((tmp_path / "rep.json").read_text())["acc_f"] <= 10.0
    r = run("unlearn", "--data", data, "--model", model, "--method", "ng", "--forget-classes", 1,
            "--prior", tmp_path / "a.json", "--out", tmp_path / "x.json", ok=False)
    assert r.exit_code == 2


def test_diag_outputs(tmp_path, workspace):
    data, model = workspace / "data/dataset.json", workspace / "model.json"
    run("unlearn", "--data", data, "--model", model, "--method", "esc", "--forget-classes", 0, "--out", tmp_path / "esc.json")
    run("diag", "--data", data, "--model", model, "--sidecar", tmp_path / "esc.json", "--original", model,
        "--out-dir", tmp_path / "diag")
    for name in ("cosine.csv", "cosine_cross.csv", "weight_diff.csv", "features.csv"):
        assert (tmp_path / "diag" / name).exists()
    rows = (tmp_path / "diag/weight_diff.csv").read_text().splitlines()[1:]
    assert all(float(r.split(",")[1]) == 0.0 for r in rows)
    header = (tmp_path / "diag/features.csv").read_text().splitlines()[0]
    assert header.split(",")[-1] == "label" and len(header.split(",")) == 33


def make_report(path, method, seed, acc_f, dataset="a"):
    doc = {
        "method": method, "acc_f": acc_f, "acc_r": 99.0, "acc_ft": None, "acc_rt": 98.0, "hm": 90.0, "hm_t": None,
        "am": None, "gm": None, "us": None, "mia": 51.0, "zrf": 0.4, "kr": None, "seconds": 0.01, "seed": seed,
        "extra": {"dataset": {"sha256": dataset}}, "version": 1,
    }
    path.write_text(json.dumps(doc))
    return path


def test_report_mean_and_std(tmp_path):
    paths = [make_report(tmp_path / f"r{s}.json", "esc", s, float(s)) for s in range(3)]
    out = run("report", *paths).output
    header = out.splitlines()[0]
    assert "acc_f std" in header
    row = [c.strip() for c in out.splitlines()[2].strip("|").split("|")]
    assert row[0] == "esc" and row[1] == "3" and row[2] == "1.00"
    assert row[3] == f"{0.816496580927726:.2f}"


def test_report_single_omits_std(tmp_path):
    out = run("report", make_report(tmp_path / "r.json", "esc", 0, 1.0)).output
    assert "std" not in out


def test_report_warns_on_conflicting_datasets(tmp_path):
    a = make_report(tmp_path / "a.json", "esc", 0, 1.0, dataset="x")
    b = make_report(tmp_path / "b.json", "ng", 0, 2.0, dataset="y")
    result = CliRunner().invoke(main, ["report", str(a), str(b), "--out", str(tmp_path / "t.md")])
    assert result.exit_code == 0
    assert "warning" in result.output
    table = (tmp_path / "t.md").read_text()
    assert "| esc |" in table and "| ng |" in table
    assert table.index("| esc |") < table.index("| ng |")


def test_report_rejects_version_mismatch(tmp_path):
    p = make_report(tmp_path / "r.json", "esc", 0, 1.0)
    doc = json.loads(p.read_text())
    doc["version"] = 2
    p.write_text(json.dumps(doc))
    r = run("report", p, "--out", tmp_path / "t.md", ok=False)
    assert r.exit_code == 1
    assert not (tmp_path / "t.md").exists()
