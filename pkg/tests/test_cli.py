import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from attrib_audit import baselines as bl
from attrib_audit.cli import main
from attrib_audit.models import linear_model, model_to_json


@pytest.fixture
def files(tmp_path):
    model = tmp_path / "model.json"
    model.write_text(model_to_json(linear_model([2.0, -1.0], 0.5)))
    base = tmp_path / "base.json"
    base.write_text(bl.baseline_to_json(bl.Pointmass([0.5, 0.5])))
    unif = tmp_path / "unif.json"
    unif.write_text(bl.baseline_to_json(bl.Empirical(np.random.default_rng(0).uniform(-1, 1, (10_000, 1)))))
    return {"model": model, "base": base, "unif": unif, "out": tmp_path / "out"}


def _csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_attribute_shap_linear(files, capsys):
    code = main(["attribute", "--model", str(files["model"]), "--baseline", str(files["base"]),
                 "--x", "1,1", "--method", "shap", "--out", str(files["out"])])
    assert code == 0
    text = (files["out"] / "attribution.csv").read_text()
    assert text == capsys.readouterr().out
    # linear model: phi_j = w_j (x_j - 0.5)
    values = [float(v) for row in csv.reader(text.splitlines()[1:]) for v in row[1:]]
    assert np.allclose(sorted(values), sorted([1.0, -0.5]))
    run = json.loads((files["out"] / "run.json").read_text())
    assert run["command"] == "attribute" and run["resolved"]["method"] == "shap_exact"
    assert run["args"]["seed"] == 0


def test_global_flags_after_subcommand(files):
    code = main(["attribute", "--model", str(files["model"]), "--x", "1,1", "--method", "gradient",
                 "--out", str(files["out"]), "--format", "json", "--seed", "4"])
    assert code == 0
    assert json.loads((files["out"] / "run.json").read_text())["args"]["seed"] == 4
    json.loads((files["out"] / "attribution.json").read_text())


def test_gradient_ignores_settings_flags(files, capsys):
    args = ["attribute", "--model", str(files["model"]), "--x", "0.3,-2", "--method", "gradient"]
    main([*args, "--out", str(files["out"] / "a")])
    first = capsys.readouterr().out
    main([*args, "--out", str(files["out"] / "b"), "--ig-steps", "7", "--lime-sigma", "3", "--seed", "9"])
    assert capsys.readouterr().out == first


def test_malformed_model_is_usage_error(files, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["attribute", "--model", str(bad), "--x", "1", "--out", str(files["out"])]) == 2
    assert main(["attribute", "--model", str(files["model"]), "--x", "1,2,3",
                 "--out", str(files["out"])]) == 2


def test_unknown_subcommand_or_flag():
    assert main(["frobnicate"]) == 2
    assert main(["verify", "nonexistent"]) == 2


def test_forge_two_targets_then_attribute(files, capsys):
    out = files["out"]
    code = main(["forge", "--g-spec", "pwl:-0.1,0.1,0.3:0.2,0,0.4:-1:2", "--x", "0.1", "--delta", "0.2",
                 "--phi", "0", "--baseline", str(files["unif"]), "--domain=-1,1", "--out", str(out)])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary[0]["file"] == "forged.json"
    for phi in ("0", "1"):
        sub = out / phi
        assert main(["forge", "--g-spec", "pwl:-0.1,0.1,0.3:0.2,0,0.4:-1:2", "--x", "0.1", "--delta", "0.2",
                     "--phi", phi, "--baseline", str(files["unif"]), "--domain=-1,1",
                     "--out", str(sub)]) == 0
        capsys.readouterr()
        assert main(["attribute", "--model", str(sub / "forged.json"), "--baseline", str(files["unif"]),
                     "--x", "0.1", "--method", "shap", "--out", str(sub)]) == 0
        capsys.readouterr()
        row = list(csv.reader((sub / "attribution.csv").read_text().splitlines()))[1]
        assert float(row[1]) == pytest.approx(float(phi), abs=0.02)


def test_forge_pair_has_opposite_recourse_labels(files, capsys, tmp_path):
    base = tmp_path / "pm.json"
    base.write_text(bl.baseline_to_json(bl.Pointmass([1.0])))
    code = main(["forge", "--pair", "--g-spec", "linear:1", "--g-spec", "linear:-1", "--x", "0.1",
                 "--delta", "0.2", "--baseline", str(base), "--out", str(files["out"])])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert [s["recourse_ground_truth"] for s in summary] == [1, 0]
    assert (files["out"] / "forged_0.json").exists() and (files["out"] / "forged_1.json").exists()


def test_forge_assumption_violation_exit_code(files, tmp_path, capsys):
    base = tmp_path / "pm.json"
    base.write_text(bl.baseline_to_json(bl.Pointmass([0.15])))
    code = main(["forge", "--g-spec", "linear:1", "--x", "0.1", "--delta", "0.2",
                 "--baseline", str(base), "--out", str(files["out"])])
    assert code == 3
    assert "Assumption 1 violated" in capsys.readouterr().err


def test_query_test_theory_only(tmp_path, capsys):
    code = main(["query-test", "--delta", "1", "--p", "1", "--n", "1", "--epsilon", "0.25",
                 "--trials", "0", "--out", str(tmp_path)])
    assert code == 0
    (row,) = _csv(tmp_path / "query_rates.csv")
    assert float(row["sens"]) == 0.5 and row["sens_hat"] == "nan"


def test_query_test_preset_and_bad_plan(tmp_path, capsys):
    assert main(["query-test", "--preset", "sec5", "--trials", "0", "--out", str(tmp_path)]) == 0
    (row,) = _csv(tmp_path / "query_rates.csv")
    assert float(row["sens"]) >= 0.88 and row["n"] == "21960"
    assert main(["query-test", "--delta", "0.1", "--p", "1", "--n", "1", "--epsilon", "0.1",
                 "--out", str(tmp_path)]) == 2
    assert main(["query-test", "--delta", "1", "--out", str(tmp_path)]) == 2


def test_query_test_adversary_json(tmp_path, capsys):
    assert main(["query-test", "--delta", "1", "--p", "2", "--n", "3", "--epsilon", "0.1",
                 "--trials", "2000", "--adversary", "--format", "json", "--out", str(tmp_path)]) == 0
    (row,) = json.loads((tmp_path / "query_rates.json").read_text())
    assert row["adversary_bound"] == pytest.approx(3 / 25) and row["adversary_pass"] is True


def test_roc_sweep_writes_csv_and_figures(tmp_path, capsys):
    code = main(["roc-sweep", "--dataset", "synthetic_additive", "--n-models", "1", "--n-examples", "2",
                 "--epochs", "2", "--methods", "gradient,shap", "--jobs", "1", "--out", str(tmp_path)])
    assert code == 0
    rows = _csv(tmp_path / "synthetic_additive_gradient_recourse.csv")
    assert len(rows) == 40 and set(rows[0]) == {"model_index", "threshold", "fpr", "tpr"}
    for task in ("recourse", "spurious"):
        assert (tmp_path / f"synthetic_additive_{task}_roc.svg").read_text().lstrip().startswith("<?xml")
    assert (tmp_path / "run.json").exists()


def test_roc_sweep_from_csv(tmp_path, capsys):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(60, 3))
    data = tmp_path / "d.csv"
    lines = ["a,b,c,y"] + [f"{a},{b},{c},{a - b}" for a, b, c in X]
    data.write_text("\n".join(lines) + "\n")
    code = main(["roc-sweep", "--csv", str(data), "--target", "y", "--n-models", "1", "--n-examples", "2",
                 "--epochs", "1", "--methods", "gradient", "--tasks", "recourse", "--jobs", "1",
                 "--format", "json", "--out", str(tmp_path / "o")])
    assert code == 0
    assert json.loads((tmp_path / "o" / "d_gradient_recourse.json").read_text())[0]["model_index"] == 0


def test_roc_sweep_bad_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"experiment": {"methods": ["nope"]}}))
    assert main(["roc-sweep", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_prop4_command(tmp_path, capsys):
    assert main(["prop4", "--samples", "20000", "--out", str(tmp_path)]) == 0
    (row,) = _csv(tmp_path / "prop4.csv")
    assert abs(float(row["estimate"]) - float(row["exact"])) < 0.03


def test_verify_suite(tmp_path, capsys):
    assert main(["verify", "forge", "--out", str(tmp_path)]) == 0
    assert "PASS" in capsys.readouterr().out


def test_verify_failure_exit_code(tmp_path, monkeypatch, capsys):
    from attrib_audit import suites

    monkeypatch.setitem(suites.SUITES, "forge", lambda seed: [suites.Check("broken", False)])
    assert main(["verify", "forge", "--out", str(tmp_path)]) == 4


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "attrib_audit.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip()
