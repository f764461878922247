import json
import warnings

import numpy as np
import pytest

from attrib_audit.errors import ConfigurationError
from attrib_audit.experiments import (
    Dataset,
    ExperimentConfig,
    TrainConfig,
    bundled_dataset,
    derive_seed,
    ingest_csv,
    load_config,
    make_additive_dataset,
    run_sweep,
    split,
    train_mlp,
)

TINY = ExperimentConfig(n_models=1, n_examples=1, calibration_examples=20)
FAST = TrainConfig(epochs=2)


def test_ingest_zscores_three_rows(tmp_path):
    path = tmp_path / "toy.csv"
    path.write_text("a,b,y\n1,10,0.5\n2,20,1.5\n3,60,2.5\n")
    ds = ingest_csv(path, {"targets": "y"})
    # population std: a has mean 2, std sqrt(2/3)
    expected_a = (np.array([1, 2, 3]) - 2) / np.sqrt(2 / 3)
    b = np.array([10.0, 20.0, 60.0])
    assert np.allclose(ds.features[:, 0], expected_a)
    assert np.allclose(ds.features[:, 1], (b - b.mean()) / b.std())
    assert np.allclose(ds.features.mean(axis=0), 0) and np.allclose(ds.features.std(axis=0), 1)
    assert ds.targets[:, 0].tolist() == [0.5, 1.5, 2.5]
    assert ds.normalization_stats["a"] == pytest.approx((2.0, np.sqrt(2 / 3)))
    assert ds.name == "toy"


def test_ingest_drops_constant_column(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("a,k,y\n1,4,0\n2,4,1\n3,4,0\n")
    with pytest.warns(UserWarning, match="zero-variance"):
        ds = ingest_csv(path, {"targets": ["y"]})
    assert ds.feature_names == ("a",)


def test_ingest_missing_value_is_an_error(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("a,b,y\n1,,0\n2,3,1\n")
    with pytest.raises(ValueError, match="missing"):
        ingest_csv(path, {"targets": "y"})


def test_ingest_one_hot_and_classification(tmp_path):
    path = tmp_path / "h.csv"
    path.write_text("a,color,y\n1,red,yes\n2,blue,no\n3,red,yes\n4,green,no\n")
    ds = ingest_csv(path, {"targets": "y", "categorical": ["color"], "task": "classification"})
    assert ds.feature_names == ("a", "color=blue", "color=green", "color=red")
    assert ds.categorical == (False, True, True, True)
    assert ds.features[:, 1:].tolist() == [[0, 0, 1], [1, 0, 0], [0, 0, 1], [0, 1, 0]]
    assert ds.classes == ("no", "yes") and ds.targets.tolist() == [1, 0, 1, 0]
    assert ds.test_features == [0]


def test_ingest_rejects_undeclared_text_column(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("a,b,y\n1,x,0\n2,y,1\n")
    with pytest.raises(ValueError, match="categorical"):
        ingest_csv(path, {"targets": "y"})


def test_split_partitions_rows():
    ds = make_additive_dataset(n=40)
    tr, te = split(ds, 0.25, 3)
    assert tr.n + te.n == 40 and te.n == 10
    rows = {tuple(r) for r in tr.features} | {tuple(r) for r in te.features}
    assert len(rows) == 40


def test_zero_epochs_keeps_initial_loss():
    res = train_mlp(make_additive_dataset(n=50), TrainConfig(epochs=0))
    assert res.final_loss == res.initial_loss


def test_training_reduces_loss():
    res = train_mlp(make_additive_dataset(n=200), TrainConfig(epochs=30))
    assert res.final_loss < 0.5 * res.initial_loss


def test_separable_classification_reaches_high_accuracy():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(300, 2))
    y = (X[:, 0] - X[:, 1] > 0).astype(int)
    ds = Dataset.from_arrays("sep", X, y, task="classification", classes=(0, 1))
    res = train_mlp(ds, TrainConfig(epochs=40))
    assert res.metrics["train"]["accuracy"] >= 0.95


def test_learned_slope_is_positive():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(300, 2))
    ds = Dataset.from_arrays("lin", X, 2 * X[:, :1])
    model = train_mlp(ds, TrainConfig(epochs=40)).model
    # the feature mean is the origin after z-scoring
    assert model.gradient(np.zeros((1, 2)))[0, 0, 0] > 0
    avg = model.gradient(ds.features).mean(axis=0)[:, 0]
    assert avg[0] == pytest.approx(2 * ds.normalization_stats["x0"][1], rel=0.1)
    assert abs(avg[1]) < 0.2


def test_training_is_deterministic():
    ds = make_additive_dataset(n=80)
    a = train_mlp(ds, TrainConfig(epochs=3, seed=7)).model
    b = train_mlp(ds, TrainConfig(epochs=3, seed=7)).model
    for (Wa, ba), (Wb, bb) in zip(a.layers, b.layers):
        assert np.array_equal(Wa, Wb) and np.array_equal(ba, bb)


def test_loss_must_match_task():
    with pytest.raises(ConfigurationError):
        train_mlp(make_additive_dataset(n=20), TrainConfig(loss="softmax_ce"))


def test_derive_seed_is_stable_and_keyed():
    assert derive_seed(0, 1, 2) == derive_seed(0, 1, 2)
    assert derive_seed(0, 1, 2) != derive_seed(0, 2, 1)


def test_micro_sweep_shape(tmp_path):
    ds = bundled_dataset()
    res = run_sweep(ds, TINY, FAST)
    assert set(res.curves) == {(m, t) for m in TINY.methods for t in TINY.end_tasks}
    files = res.write(tmp_path)
    csvs = [f for f in files if f.suffix == ".csv"]
    rows = sum(len(f.read_text().strip().split("\n")) - 1 for f in csvs)
    assert rows == 40 * len(TINY.methods) * len(TINY.end_tasks)
    assert (tmp_path / "synthetic_additive_recourse_roc.svg").exists()
    meta = json.loads((tmp_path / "synthetic_additive_sweep.json").read_text())
    assert meta["experiment"]["n_models"] == 1


def test_sweep_rates_are_valid_and_deterministic(tmp_path):
    exp = ExperimentConfig(n_models=2, n_examples=3, calibration_examples=20, methods=("gradient", "shap"))
    a, b = run_sweep(bundled_dataset(), exp, FAST), run_sweep(bundled_dataset(), exp, FAST)
    for key in a.curves:
        assert a.csv_text(*key) == b.csv_text(*key)
        for curve in a.curves[key]:
            for rate in (curve.fpr, curve.tpr):
                finite = rate[np.isfinite(rate)]
                assert np.all((finite >= 0) & (finite <= 1))


def test_sweep_outputs_are_byte_identical(tmp_path):
    for sub in ("a", "b"):
        run_sweep(bundled_dataset(), TINY, FAST).write(tmp_path / sub)
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_parallel_sweep_matches_serial():
    exp = ExperimentConfig(n_models=2, n_examples=2, calibration_examples=20, methods=("gradient", "ig"))
    serial, parallel = run_sweep(bundled_dataset(), exp, FAST, 1), run_sweep(bundled_dataset(), exp, FAST, 2)
    for key in serial.curves:
        assert serial.csv_text(*key) == parallel.csv_text(*key)


def test_forged_sweep_is_diagonal_for_complete_methods():
    exp = ExperimentConfig(n_examples=3, forged=True, methods=("shap", "ig", "gradient"))
    res = run_sweep(bundled_dataset(), exp)
    assert res.dataset == "synthetic_additive_forged"
    for task in exp.end_tasks:
        for meth in ("shap", "ig"):
            (curve,) = res.curves[meth, task]
            assert np.max(np.abs(curve.fpr - curve.tpr)) <= 1e-12
        (grad,) = res.curves["gradient", task]
        assert any(f == 0.0 and t == 1.0 for f, t in grad.points)


def test_experiment_config_validation():
    with pytest.raises(ConfigurationError):
        ExperimentConfig(methods=("nope",))
    with pytest.raises(ConfigurationError):
        ExperimentConfig(end_tasks=("fairness",))
    with pytest.raises(ConfigurationError):
        ExperimentConfig(n_models=0)


def test_load_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"experiment": {"n_models": 3, "methods": ["lime"]},
                                "train": {"epochs": 5, "hidden_sizes": [8, 8]}}))
    exp, train, ds = load_config(path)
    assert exp.n_models == 3 and exp.methods == ("lime",)
    assert train.hidden_sizes == (8, 8) and ds == {}
    path.write_text(json.dumps({"experiment": {"bogus": 1}}))
    with pytest.raises(ConfigurationError):
        load_config(path)
    path.write_text("{not json")
    with pytest.raises(ConfigurationError):
        load_config(path)


def test_classification_sweep_runs():
    exp = ExperimentConfig(n_models=1, n_examples=2, calibration_examples=10, methods=("gradient",))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        res = run_sweep(bundled_dataset("synthetic_spurious"), exp, FAST)
    assert len(res.curves["gradient", "spurious"]) == 1
