"""Desk-scale ROC sweep over tabular data.

Pipeline: ingest (or synthesize) a dataset, z-score it, train several small
ReLU networks with seeded mini-batch SGD, attribute a fixed set of test
examples with every method, label each (example, feature) with the
neighbourhood ground truth for both end-tasks, and sweep a shared threshold
grid into one ROC curve per model.

Every random choice draws from a seed derived from the master seed and a
fixed key, so the whole sweep is reproducible and independent of ``jobs``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd

from . import attribution as attr
from .baselines import Empirical, Pointmass
from .errors import AssumptionViolated, ConfigurationError, TrainingDiverged
from .forge import LocalBehaviour, forge_pair
from .hyptest import (
    TASK_TESTS,
    Neighbourhood,
    RocCurve,
    recourse_ground_truth,
    roc_curve,
    spurious_epsilon,
    spurious_ground_truth,
    threshold_grid,
)
from .models import MlpModel, PiecewiseLinear1D

__all__ = [
    "Dataset",
    "DatasetSchema",
    "ingest_csv",
    "split",
    "make_additive_dataset",
    "make_spurious_dataset",
    "bundled_dataset",
    "TrainConfig",
    "TrainResult",
    "train_mlp",
    "ExperimentConfig",
    "SweepResult",
    "run_sweep",
    "derive_seed",
    "load_config",
]

# keys for derived seed streams
_SPLIT, _TRAIN, _EXAMPLES, _CALIB, _BACKGROUND, _METHOD = range(6)


def derive_seed(master: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(master), *map(int, keys)]).generate_state(1)[0])


# ---------------------------------------------------------------- data


@dataclass(frozen=True, eq=False)
class Dataset:
    """Normalized feature matrix plus targets.

    ``targets`` is ``(N, q)`` float for regression and ``(N,)`` integer
    class labels for classification. One-hot columns from categorical inputs
    are flagged in ``categorical`` and left as 0/1.
    """

    name: str
    features: np.ndarray
    targets: np.ndarray
    feature_names: tuple[str, ...]
    normalization_stats: dict
    categorical: tuple[bool, ...]
    task: str = "regression"
    classes: tuple = ()

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain missing or non-finite values")
        if self.task not in ("regression", "classification"):
            raise ValueError(f"unknown task {self.task!r}")
        y = np.array(self.targets)
        if self.task == "regression":
            y = y.astype(np.float64).reshape(X.shape[0], -1)
        else:
            y = y.astype(np.int64).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise ValueError("features and targets disagree on the number of rows")
        if len(self.feature_names) != X.shape[1] or len(self.categorical) != X.shape[1]:
            raise ValueError("feature metadata does not match the feature matrix")
        for arr in (X, y):
            arr.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def n_outputs(self) -> int:
        if self.task == "classification":
            return max(len(self.classes), int(self.targets.max()) + 1)
        return self.targets.shape[1]

    @property
    def test_features(self) -> list[int]:
        """Indices of the non-categorical features, the ones end-tasks are run on."""
        return [j for j, c in enumerate(self.categorical) if not c]

    @property
    def feature_ranges(self) -> np.ndarray:
        return self.features.max(axis=0) - self.features.min(axis=0)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return replace(self, features=self.features[rows], targets=self.targets[rows])

    @classmethod
    def from_arrays(cls, name: str, X, y, feature_names: Sequence[str] | None = None,
                    task: str = "regression", classes: Sequence = ()) -> "Dataset":
        """z-score every column of ``X`` (population std)."""
        X = np.asarray(X, dtype=np.float64)
        names = tuple(feature_names or (f"x{j}" for j in range(X.shape[1])))
        mean, std = X.mean(axis=0), X.std(axis=0)
        if np.any(std == 0):
            raise ValueError("constant feature columns cannot be normalized")
        stats = {nm: (float(m), float(s)) for nm, m, s in zip(names, mean, std)}
        return cls(name, (X - mean) / std, y, names, stats, (False,) * X.shape[1], task, tuple(classes))


@dataclass(frozen=True)
class DatasetSchema:
    targets: tuple[str, ...]
    categorical: tuple[str, ...] = ()
    task: str = "regression"
    name: str | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> "DatasetSchema":
        targets = doc.get("targets", doc.get("target"))
        if targets is None:
            raise ConfigurationError("schema must declare the target column(s)")
        if isinstance(targets, str):
            targets = [targets]
        return cls(tuple(targets), tuple(doc.get("categorical", ())),
                   doc.get("task", "regression"), doc.get("name"))


def ingest_csv(path, schema: DatasetSchema | dict) -> Dataset:
    """Read a CSV, one-hot the categoricals, drop constant columns, z-score the rest."""
    if isinstance(schema, dict):
        schema = DatasetSchema.from_dict(schema)
    path = Path(path)
    try:
        df = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise ValueError(f"could not parse {path}: {exc}") from exc
    missing_cols = [c for c in (*schema.targets, *schema.categorical) if c not in df.columns]
    if missing_cols:
        raise ValueError(f"columns not found in {path.name}: {missing_cols}")
    if df.isna().any().any():
        bad = [c for c in df.columns if df[c].isna().any()]
        raise ValueError(f"missing values in columns {bad}")

    names, columns, flags, stats = [], [], [], {}
    for col in df.columns:
        if col in schema.targets:
            continue
        if col in schema.categorical:
            levels = sorted(df[col].astype(str).unique())
            if len(levels) < 2:
                warnings.warn(f"dropping constant categorical column {col!r}", stacklevel=2)
                continue
            for level in levels:
                names.append(f"{col}={level}")
                columns.append((df[col].astype(str) == level).to_numpy(np.float64))
                flags.append(True)
                stats[names[-1]] = (0.0, 1.0)
            continue
        try:
            values = pd.to_numeric(df[col]).to_numpy(np.float64)
        except (ValueError, TypeError) as exc:
            raise ValueError(f"column {col!r} is not numeric; declare it categorical") from exc
        std = values.std()
        if std == 0.0:
            warnings.warn(f"dropping zero-variance feature {col!r}", stacklevel=2)
            continue
        mean = values.mean()
        names.append(col)
        columns.append((values - mean) / std)
        flags.append(False)
        stats[col] = (float(mean), float(std))
    if not columns:
        raise ValueError("no usable feature columns")

    if schema.task == "classification":
        if len(schema.targets) != 1:
            raise ValueError("classification needs exactly one target column")
        classes, y = np.unique(df[schema.targets[0]].astype(str).to_numpy(), return_inverse=True)
        classes = tuple(classes.tolist())
    else:
        try:
            y = df[list(schema.targets)].apply(pd.to_numeric).to_numpy(np.float64)
        except (ValueError, TypeError) as exc:
            raise ValueError("regression targets must be numeric") from exc
        classes = ()
    return Dataset(schema.name or path.stem, np.column_stack(columns), y, tuple(names),
                   stats, tuple(flags), schema.task, classes)


def split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0.0 < test_fraction < 1.0:
        raise ConfigurationError("test_fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(dataset.n)
    n_test = max(1, int(round(test_fraction * dataset.n)))
    return dataset.subset(np.sort(order[n_test:])), dataset.subset(np.sort(order[:n_test]))


def _additive_components(p: int):
    """Per-feature shapes: increasing, decreasing, U-shaped, wavy; the last one is flat."""
    shapes = [lambda t: 1.5 * t, lambda t: -t, lambda t: 0.5 * t ** 2, lambda t: np.sin(2.0 * t)]
    comps = [shapes[j % len(shapes)] for j in range(p - 1)]
    return comps + [lambda t: np.zeros_like(t)]


def make_additive_dataset(n: int = 600, p: int = 5, noise: float = 0.1, seed: int = 0) -> Dataset:
    """Regression target ``sum_j g_j(x_j) + noise``; feature ``p - 1`` is ignored by the target."""
    if p < 2:
        raise ValueError("need at least two features")
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2.0, 2.0, size=(n, p))
    y = sum(g(X[:, j]) for j, g in enumerate(_additive_components(p)))
    y = y + noise * rng.standard_normal(n)
    return Dataset.from_arrays("synthetic_additive", X, y[:, None])


def make_spurious_dataset(n: int = 600, p: int = 5, seed: int = 0) -> Dataset:
    """Two-class data whose label depends on the first two features only.

    Feature ``p - 1`` is a noisy copy of the label-free feature ``p - 2``, so
    it is correlated with the inputs but irrelevant to the target.
    """
    if p < 4:
        raise ValueError("need at least four features")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    X[:, -1] = X[:, -2] + 0.3 * rng.standard_normal(n)
    y = (X[:, 0] + 0.7 * X[:, 1] + 0.1 * rng.standard_normal(n) > 0).astype(np.int64)
    return Dataset.from_arrays("synthetic_spurious", X, y, task="classification", classes=(0, 1))


BUNDLED = {"synthetic_additive": make_additive_dataset, "synthetic_spurious": make_spurious_dataset}


def bundled_dataset(name: str = "synthetic_additive", seed: int = 0) -> Dataset:
    if name not in BUNDLED:
        raise ConfigurationError(f"unknown bundled dataset {name!r}; choose from {sorted(BUNDLED)}")
    return BUNDLED[name](seed=seed)


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    hidden_sizes: tuple[int, ...] = (16,)
    epochs: int = 60
    learning_rate: float = 0.05
    batch_size: int = 32
    seed: int = 0
    loss: str = "auto"  # "squared", "softmax_ce" or "auto" (by dataset task)

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if any(h < 1 for h in self.hidden_sizes):
            raise ConfigurationError("hidden sizes must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.loss not in ("auto", "squared", "softmax_ce"):
            raise ConfigurationError(f"unknown loss {self.loss!r}")


@dataclass(eq=False)
class TrainResult:
    model: MlpModel
    initial_loss: float
    final_loss: float
    metrics: dict = field(default_factory=dict)


def _resolve_loss(dataset: Dataset, config: TrainConfig) -> str:
    loss = config.loss
    if loss == "auto":
        loss = "softmax_ce" if dataset.task == "classification" else "squared"
    if (loss == "softmax_ce") != (dataset.task == "classification"):
        raise ConfigurationError(f"loss {loss!r} does not fit a {dataset.task} dataset")
    return loss


def _target_matrix(dataset: Dataset) -> np.ndarray:
    if dataset.task == "classification":
        return np.eye(dataset.n_outputs)[dataset.targets]
    return dataset.targets


def _forward(layers, X):
    acts, masks = [X], []
    h = X
    for W, b in layers[:-1]:
        z = h @ W.T + b
        m = z >= 0.0
        h = np.where(m, z, 0.0)
        acts.append(h)
        masks.append(m)
    W, b = layers[-1]
    return h @ W.T + b, acts, masks


def _softmax(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _loss(kind: str, out, Y) -> tuple[float, np.ndarray]:
    """Mean loss and its gradient with respect to ``out``."""
    n = out.shape[0]
    if kind == "squared":
        diff = out - Y
        return 0.5 * float(np.sum(diff * diff)) / n, diff / n
    prob = _softmax(out)
    logp = np.log(np.clip(prob, 1e-300, None))
    return -float(np.sum(Y * logp)) / n, (prob - Y) / n


def _metrics(layers, dataset: Dataset, kind: str) -> dict:
    out = _forward(layers, dataset.features)[0]
    loss = _loss(kind, out, _target_matrix(dataset))[0]
    if dataset.task == "classification":
        return {"loss": loss, "accuracy": float(np.mean(out.argmax(axis=1) == dataset.targets))}
    return {"loss": loss, "mse": float(np.mean((out - dataset.targets) ** 2))}


def train_mlp(train: Dataset, config: TrainConfig, test: Dataset | None = None) -> TrainResult:
    """Mini-batch SGD from He-initialized weights; fully determined by ``config.seed``."""
    kind = _resolve_loss(train, config)
    rng = np.random.default_rng(config.seed)
    sizes = [train.p, *config.hidden_sizes, train.n_outputs]
    layers = [(rng.standard_normal((fo, fi)) * math.sqrt(2.0 / fi), np.zeros(fo))
              for fi, fo in zip(sizes[:-1], sizes[1:])]
    X, Y = train.features, _target_matrix(train)
    initial = _loss(kind, _forward(layers, X)[0], Y)[0]
    for epoch in range(config.epochs):
        order = rng.permutation(train.n)
        for start in range(0, train.n, config.batch_size):
            idx = order[start:start + config.batch_size]
            out, acts, masks = _forward(layers, X[idx])
            _, d = _loss(kind, out, Y[idx])
            grads = []
            for k in range(len(layers) - 1, -1, -1):
                W, _ = layers[k]
                grads.append((d.T @ acts[k], d.sum(axis=0)))
                if k:
                    d = (d @ W) * masks[k - 1]
            layers = [(W - config.learning_rate * gW, b - config.learning_rate * gb)
                      for (W, b), (gW, gb) in zip(layers, reversed(grads))]
        if not all(np.all(np.isfinite(W)) for W, _ in layers):
            raise TrainingDiverged(f"weights became non-finite in epoch {epoch}")
    final = _loss(kind, _forward(layers, X)[0], Y)[0]
    if not math.isfinite(final):
        raise TrainingDiverged("training loss is not finite")
    metrics = {"train": _metrics(layers, train, kind)}
    if test is not None:
        metrics["test"] = _metrics(layers, test, kind)
    return TrainResult(MlpModel(tuple(layers)), initial, final, metrics)


# ---------------------------------------------------------------- sweep

ALL_METHODS = ("shap", "ig", "ig_min", "gradient", "smoothgrad", "lime")


@dataclass(frozen=True)
class ExperimentConfig:
    n_models: int = 10
    n_examples: int = 20
    n_thresholds: int = 40
    neighbourhood_fraction: float = 0.1
    methods: tuple[str, ...] = ("shap", "ig", "gradient", "smoothgrad", "lime")
    end_tasks: tuple[str, ...] = ("recourse", "spurious")
    calibration_examples: int = 100
    seed: int = 0
    spurious_quantile: float = 0.8
    test_fraction: float = 0.25
    output_index: int = -1
    forged: bool = False
    forged_epsilon: float = 0.1
    settings: attr.MethodSettings = attr.MethodSettings()

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "end_tasks", tuple(self.end_tasks))
        if isinstance(self.settings, dict):
            object.__setattr__(self, "settings", attr.MethodSettings(**self.settings))
        for name in ("n_models", "n_examples", "n_thresholds", "calibration_examples"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be at least 1")
        if not 0 < self.neighbourhood_fraction <= 1:
            raise ConfigurationError("neighbourhood_fraction must lie in (0, 1]")
        if not 0 <= self.spurious_quantile <= 1:
            raise ConfigurationError("spurious_quantile must lie in [0, 1]")
        if not self.forged_epsilon > 0:
            raise ConfigurationError("forged_epsilon must be positive")
        unknown = set(self.methods) - set(ALL_METHODS)
        if unknown or not self.methods:
            raise ConfigurationError(f"unknown methods {sorted(unknown)}; choose from {ALL_METHODS}")
        bad_tasks = set(self.end_tasks) - set(TASK_TESTS)
        if bad_tasks or not self.end_tasks:
            raise ConfigurationError(f"unknown end tasks {sorted(bad_tasks)}")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["methods"], doc["end_tasks"] = list(self.methods), list(self.end_tasks)
        return doc


def _from_dict(cls, doc: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigurationError(f"unknown {cls.__name__} keys {sorted(unknown)}")
    try:
        return cls(**doc)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def load_config(path) -> tuple[ExperimentConfig, TrainConfig, dict]:
    """Read ``{"experiment": {...}, "train": {...}, "dataset": {...}}``; every key optional."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError("config must be a JSON object")
    return (_from_dict(ExperimentConfig, doc.get("experiment", {})),
            _from_dict(TrainConfig, doc.get("train", {})), doc.get("dataset", {}))


@dataclass(frozen=True, eq=False)
class _Context:
    background: Empirical
    zeros: Pointmass
    mins: Pointmass
    settings: attr.MethodSettings
    exact_ig: bool = False

    def baseline(self, method: str):
        return {"ig": self.zeros, "ig_min": self.mins}.get(method, self.background)

    def score(self, method: str, model, x, seed: int) -> np.ndarray:
        settings = self.settings.with_seed(seed)
        if method == "shap":
            return attr.shap_sampled(model, self.background, x, settings).scores
        if method in ("ig", "ig_min"):
            rule = "piecewise" if self.exact_ig else "midpoint"
            return attr.integrated_gradients(model, self.baseline(method), x, settings, rule=rule).scores
        if method == "gradient":
            return attr.gradient_method(model, x).scores
        if method == "smoothgrad":
            return attr.smoothgrad(model, x, settings).scores
        return attr.lime(model, x, settings).scores


@dataclass(eq=False)
class SweepResult:
    dataset: str
    curves: dict  # (method, task) -> list of RocCurve, one per model
    metadata: dict

    def csv_text(self, method: str, task: str) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["model_index", "threshold", "fpr", "tpr"])
        for m, curve in enumerate(self.curves[method, task]):
            for t, f, p in zip(curve.thresholds, curve.fpr, curve.tpr):
                writer.writerow([m, repr(float(t)), repr(float(f)), repr(float(p))])
        return buf.getvalue()

    def write(self, out_dir, plot_format: str = "svg") -> list[Path]:
        from .plotting import roc_figure, save_figure

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for method, task in self.curves:
            path = out / f"{self.dataset}_{method}_{task}.csv"
            path.write_text(self.csv_text(method, task))
            written.append(path)
        for task in dict.fromkeys(t for _, t in self.curves):
            per_method = {m: c for (m, t), c in self.curves.items() if t == task}
            fig = roc_figure(per_method, f"{self.dataset}: {task}")
            written.append(save_figure(fig, out / f"{self.dataset}_{task}_roc.{plot_format}"))
        meta = out / f"{self.dataset}_sweep.json"
        meta.write_text(json.dumps(self.metadata, indent=2, sort_keys=True))
        written.append(meta)
        return written


def _labels(task: str, model, nb: Neighbourhood, k: int, epsilon: float, statistic: str) -> int:
    if task == "recourse":
        return recourse_ground_truth(model, nb, k)
    return spurious_ground_truth(model, nb, k, statistic=statistic, epsilon=epsilon)


def _model_cell(payload) -> dict:
    """Train model ``m`` and collect its scores and ground-truth labels."""
    m, train_ds, test_ds, examples, calib, ctx, exp, train_cfg, ranges, features = payload
    result = train_mlp(train_ds, replace(train_cfg, seed=derive_seed(exp.seed, _TRAIN, m)), test_ds)
    model = result.model
    k = exp.output_index % model.n_outputs
    eps = None
    if "spurious" in exp.end_tasks:
        eps = spurious_epsilon(model, calib, features, ranges, exp.neighbourhood_fraction,
                               exp.spurious_quantile, k)
    scores = {meth: np.empty((len(examples), len(features))) for meth in exp.methods}
    labels = {task: np.empty((len(examples), len(features)), dtype=int) for task in exp.end_tasks}
    for e, x in enumerate(examples):
        for mi, meth in enumerate(exp.methods):
            s = ctx.score(meth, model, x, derive_seed(exp.seed, _METHOD, m, e, mi))
            scores[meth][e] = s[features, k]
        for fi, j in enumerate(features):
            nb = Neighbourhood(x, j, ranges[j], exp.neighbourhood_fraction)
            for task in exp.end_tasks:
                labels[task][e, fi] = _labels(task, model, nb, k, eps, "variance")
    return {"scores": scores, "labels": labels, "epsilon": eps,
            "metrics": result.metrics, "initial_loss": result.initial_loss,
            "final_loss": result.final_loss}


def _curves(exp: ExperimentConfig, dataset_name: str, per_model: list[dict]) -> dict:
    curves = {}
    for meth in exp.methods:
        for task in exp.end_tasks:
            kind = TASK_TESTS[task]
            pooled = np.concatenate([r["scores"][meth].ravel() for r in per_model])
            grid = threshold_grid(pooled, kind, exp.n_thresholds)
            curves[meth, task] = []
            for m, r in enumerate(per_model):
                preds = np.column_stack([r["scores"][meth].ravel(), r["labels"][task].ravel()])
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    curve = roc_curve(preds, kind, grid, {
                        "method_tag": meth, "dataset": dataset_name, "end_task": task,
                        "model_index": m})
                curves[meth, task].append(curve)
    return curves


def run_sweep(dataset: Dataset, exp: ExperimentConfig = ExperimentConfig(),
              train: TrainConfig = TrainConfig(), jobs: int = 1) -> SweepResult:
    """The full models x examples x methods x thresholds sweep.

    Rates pool confusion counts over every (example, feature) cell of one
    model. With ``exp.forged`` the trained networks are replaced by forged
    pairs, see :func:`run_forged_sweep`.
    """
    if exp.forged:
        return run_forged_sweep(dataset, exp)
    train_ds, test_ds = split(dataset, exp.test_fraction, derive_seed(exp.seed, _SPLIT))
    if test_ds.n < exp.n_examples:
        raise ConfigurationError(f"test split has {test_ds.n} rows, fewer than n_examples")
    examples = test_ds.features[np.random.default_rng(derive_seed(exp.seed, _EXAMPLES))
                                .choice(test_ds.n, exp.n_examples, replace=False)]
    calib = train_ds.features[np.random.default_rng(derive_seed(exp.seed, _CALIB)).choice(
        train_ds.n, min(exp.calibration_examples, train_ds.n), replace=False)]
    ctx = _make_context(dataset, train_ds, exp)
    ranges, features = dataset.feature_ranges, dataset.test_features
    if not features:
        raise ConfigurationError("dataset has no non-categorical features to test")
    payloads = [(m, train_ds, test_ds, examples, calib, ctx, exp, train, ranges, features)
                for m in range(exp.n_models)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_model = list(pool.map(_model_cell, payloads))
    else:
        per_model = [_model_cell(pl) for pl in payloads]
    curves = _curves(exp, dataset.name, per_model)
    metadata = _metadata(dataset, exp, train, curves, {
        "models": [{"index": m, "initial_loss": r["initial_loss"], "final_loss": r["final_loss"],
                    "metrics": r["metrics"], "spurious_epsilon": r["epsilon"]}
                   for m, r in enumerate(per_model)]})
    return SweepResult(dataset.name, curves, metadata)


def _make_context(dataset: Dataset, train_ds: Dataset, exp: ExperimentConfig, exact_ig=False) -> _Context:
    count = min(exp.settings.shap_baseline_samples, train_ds.n)
    rows = np.random.default_rng(derive_seed(exp.seed, _BACKGROUND)).choice(train_ds.n, count, replace=False)
    return _Context(Empirical(train_ds.features[np.sort(rows)]), Pointmass(np.zeros(dataset.p)),
                    Pointmass(dataset.features.min(axis=0)), exp.settings, exact_ig)


def _metadata(dataset, exp, train, curves, extra: dict) -> dict:
    return {
        "dataset": dataset.name,
        "experiment": exp.to_dict(),
        "train": asdict(train),
        "averaging": "micro: confusion counts pooled over examples and features per model",
        "thresholds": {f"{m}/{t}": [repr(float(a)) for a in c[0].thresholds]
                       for (m, t), c in curves.items()},
        **extra,
    }


def _forged_behaviours(task: str, x, j: int, delta: float, eps: float):
    if task == "recourse":
        return (LocalBehaviour.linear(x, j, delta, 1.0), LocalBehaviour.linear(x, j, delta, -1.0))
    xj = float(x[j])
    ramp = PiecewiseLinear1D((xj,), (eps,), eps / delta, eps / delta)
    return (LocalBehaviour.constant(x, j, delta), LocalBehaviour(ramp, x, j, delta))


def run_forged_sweep(dataset: Dataset, exp: ExperimentConfig) -> SweepResult:
    """Replace trained models by forged pairs with opposite ground truth.

    For every (example, feature, task) two additive models are forged
    against each method's own baseline so that they share the attribution
    while their neighbourhood behaviour puts them on opposite sides of the
    end-task. Complete and linear methods then sit exactly on the diagonal.
    Integrated Gradients uses the kink-aware quadrature here so scores are
    exact; spurious labels use the sup statistic at ``forged_epsilon``.
    Cells where the baseline has no mass outside the neighbourhood are
    skipped and counted in the metadata.
    """
    train_ds, test_ds = split(dataset, exp.test_fraction, derive_seed(exp.seed, _SPLIT))
    if test_ds.n < exp.n_examples:
        raise ConfigurationError(f"test split has {test_ds.n} rows, fewer than n_examples")
    examples = test_ds.features[np.random.default_rng(derive_seed(exp.seed, _EXAMPLES))
                                .choice(test_ds.n, exp.n_examples, replace=False)]
    ctx = _make_context(dataset, train_ds, exp, exact_ig=True)
    ranges, features = dataset.feature_ranges, dataset.test_features
    eps = exp.forged_epsilon
    pooled = {(m, t): ([], []) for m in exp.methods for t in exp.end_tasks}
    skipped = {m: 0 for m in exp.methods}
    for e, x in enumerate(examples):
        for j in features:
            nb = Neighbourhood(x, j, ranges[j], exp.neighbourhood_fraction)
            for ti, task in enumerate(exp.end_tasks):
                behaviours = _forged_behaviours(task, x, j, nb.delta, eps)
                for mi, meth in enumerate(exp.methods):
                    try:
                        pair = forge_pair(*behaviours, ctx.baseline(meth), shared_phi=0.0)
                    except AssumptionViolated:
                        skipped[meth] += 1
                        continue
                    seed = derive_seed(exp.seed, _METHOD, e, j, ti, mi)
                    scores, labels = pooled[meth, task]
                    for forged in pair:
                        scores.append(ctx.score(meth, forged.model, x, seed)[j, 0])
                        labels.append(_labels(task, forged.model, nb, 0, eps, "sup"))
    curves = {}
    for (meth, task), (scores, labels) in pooled.items():
        kind = TASK_TESTS[task]
        if not scores:
            raise AssumptionViolated(f"no cell satisfies the assumption for method {meth!r}")
        grid = threshold_grid(scores, kind, exp.n_thresholds)
        curves[meth, task] = [roc_curve(np.column_stack([scores, labels]), kind, grid, {
            "method_tag": meth, "dataset": dataset.name, "end_task": task, "model_index": 0})]
    metadata = _metadata(dataset, exp, TrainConfig(), curves, {"mode": "forged", "skipped_cells": skipped})
    return SweepResult(dataset.name + "_forged", curves, metadata)
