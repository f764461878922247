"""Hypothesis tests built on attribution scores.

Ground-truth labels for the recourse and spurious-feature end-tasks come from
evaluating the model on a 20-point perturbation grid around an example.
Threshold tests turn a score into a reject/accept decision; sweeping the
threshold gives ROC curves, and :func:`scenario_spec_sens` gives worst-case
specificity and sensitivity over finite model families.
"""

from __future__ import annotations

import csv
import enum
import io
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DegenerateLabelsWarning

__all__ = [
    "TestKind",
    "ThresholdTest",
    "run_threshold_test",
    "Neighbourhood",
    "grid_outputs",
    "recourse_ground_truth",
    "perturbation_variance",
    "spurious_epsilon",
    "spurious_ground_truth",
    "threshold_grid",
    "RocCurve",
    "roc_curve",
    "ScenarioResult",
    "scenario_spec_sens",
]


class TestKind(str, enum.Enum):
    RECOURSE_SIGN = "recourse_sign"
    SPURIOUS_MAGNITUDE = "spurious_magnitude"

    __test__ = False  # not a pytest class


TASK_TESTS = {"recourse": TestKind.RECOURSE_SIGN, "spurious": TestKind.SPURIOUS_MAGNITUDE}


@dataclass(frozen=True)
class ThresholdTest:
    kind: TestKind
    alpha: float

    __test__ = False

    def __post_init__(self):
        object.__setattr__(self, "kind", TestKind(self.kind))
        object.__setattr__(self, "alpha", float(self.alpha))

    def __call__(self, score: float) -> int:
        return run_threshold_test(self, score)


def _statistic(kind: TestKind, scores):
    scores = np.asarray(scores, dtype=np.float64)
    return scores if kind is TestKind.RECOURSE_SIGN else np.abs(scores)


def run_threshold_test(test: ThresholdTest, attribution_score: float) -> int:
    """``1{score > alpha}`` for recourse, ``1{|score| > alpha}`` for spurious features."""
    return int(_statistic(test.kind, attribution_score) > test.alpha)


@dataclass(frozen=True, eq=False)
class Neighbourhood:
    """Twenty copies of ``x`` with feature ``j`` shifted by offsets evenly
    spaced in the open interval ``(-fraction * range, fraction * range)``."""

    x: np.ndarray
    j: int
    range: float
    fraction: float = 0.1
    size: int = 20

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64).reshape(-1)
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        if not 0 < self.fraction <= 1:
            raise ValueError("fraction must lie in (0, 1]")
        if not self.range > 0:
            raise ValueError("feature range must be positive")
        if self.size < 2 or self.size % 2:
            raise ValueError("grid size must be a positive even number")
        if not 0 <= self.j < x.shape[0]:
            raise IndexError(f"feature {self.j} out of range")

    @property
    def delta(self) -> float:
        return self.fraction * self.range

    @property
    def offsets(self) -> np.ndarray:
        # mirror the positive half so the grid is exactly symmetric
        half = np.linspace(-self.delta, self.delta, self.size + 2)[self.size // 2 + 1:-1]
        return np.concatenate([-half[::-1], half])

    @property
    def points(self) -> np.ndarray:
        pts = np.tile(self.x, (self.size, 1))
        pts[:, self.j] += self.offsets
        return pts


def grid_outputs(model, nb: Neighbourhood, output_k: int = 0) -> np.ndarray:
    return model.evaluate(nb.points)[:, output_k]


def recourse_ground_truth(model, nb: Neighbourhood, output_k: int = 0,
                          weights: Sequence[float] | None = None) -> int:
    """1 iff the mean output over positive offsets exceeds that over negative offsets.

    ``weights`` optionally reweights the grid points (a discrete perturbation
    distribution); by default every point counts equally.
    """
    y = grid_outputs(model, nb, output_k)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64)
    up, down = nb.offsets > 0, nb.offsets < 0
    mean_up = np.sum(w[up] * y[up]) / np.sum(w[up])
    mean_down = np.sum(w[down] * y[down]) / np.sum(w[down])
    return int(mean_up > mean_down)


def perturbation_variance(model, nb: Neighbourhood, output_k: int = 0) -> float:
    return float(np.var(grid_outputs(model, nb, output_k)))


def spurious_epsilon(model, calibration_examples, features: Iterable[int], ranges,
                     fraction: float = 0.1, quantile: float = 0.8, output_k: int = 0) -> float:
    """Quantile of the perturbation variance over calibration examples and features."""
    calibration_examples = np.atleast_2d(np.asarray(calibration_examples, dtype=np.float64))
    if calibration_examples.shape[0] == 0:
        raise ValueError("calibration set is empty")
    ranges = np.broadcast_to(np.asarray(ranges, dtype=np.float64),
                             (calibration_examples.shape[1],))
    variances = [perturbation_variance(model, Neighbourhood(c, j, ranges[j], fraction), output_k)
                 for c in calibration_examples for j in features]
    if not variances:
        raise ValueError("calibration set is empty")
    return float(np.quantile(variances, quantile))


def spurious_ground_truth(model, nb: Neighbourhood, output_k: int = 0, calibration_examples=None,
                          quantile: float = 0.8, statistic: str = "variance",
                          epsilon: float | None = None) -> int:
    """1 when the output is sensitive to feature ``j`` near ``x``.

    ``statistic="variance"``: compare the grid variance with ``epsilon``, by
    default the ``quantile`` of the same statistic on the calibration
    examples' neighbourhoods of feature ``j``. ``statistic="sup"``: compare
    ``max |f|`` over the positive offsets with an explicit ``epsilon``.
    """
    if statistic == "sup":
        if epsilon is None:
            raise ValueError("the sup statistic needs an explicit epsilon")
        y = grid_outputs(model, nb, output_k)
        return int(np.max(np.abs(y[nb.offsets > 0])) >= epsilon)
    if statistic != "variance":
        raise ValueError(f"unknown statistic {statistic!r}")
    if epsilon is None:
        if calibration_examples is None or len(calibration_examples) == 0:
            raise ValueError("calibration set is empty")
        epsilon = spurious_epsilon(model, calibration_examples, [nb.j], nb.range,
                                   nb.fraction, quantile, output_k)
    return int(perturbation_variance(model, nb, output_k) > epsilon)


def threshold_grid(scores, kind: TestKind, n: int = 40, tie_tol: float = 1e-6) -> np.ndarray:
    """``n`` thresholds spanning the 1st-99th percentile of the test statistic.

    Thresholds within ``tie_tol`` of an observed statistic are pushed just
    above it, so a pair of scores that agree to within ``tie_tol`` always gets
    the same decision. A collapsed range is widened by one unit either side.
    """
    kind = TestKind(kind)
    values = np.sort(_statistic(kind, np.ravel(scores)))
    if values.size == 0:
        raise ValueError("no scores to build thresholds from")
    lo, hi = np.percentile(values, [1, 99])
    if hi - lo <= tie_tol * max(1.0, abs(hi)):
        lo, hi = lo - 1.0, hi + 1.0
    grid = np.linspace(lo, hi, n)
    for i, t in enumerate(grid):
        while True:
            near = values[np.abs(values - t) <= tie_tol]
            if near.size == 0:
                break
            t = near.max() + 2 * tie_tol
        grid[i] = t
    return np.sort(grid)


@dataclass(eq=False)
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    provenance: dict = field(default_factory=dict)
    degenerate: bool = False

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["threshold", "fpr", "tpr"])
        for row in zip(self.thresholds, self.fpr, self.tpr):
            writer.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    def save_plot(self, path, label: str | None = None):
        """Write a vector plot (format from the suffix, SVG by default)."""
        from .plotting import roc_figure, save_figure

        name = label or self.provenance.get("method_tag", "curve")
        return save_figure(roc_figure({name: [self]}, self.provenance.get("end_task", "")), path)


def roc_curve(predictions, kind: TestKind, thresholds, provenance: dict | None = None) -> RocCurve:
    """Empirical (false, true) positive rates of the threshold test at each threshold.

    ``predictions`` is a sequence of ``(score, truth_label)`` pairs. When one
    label class is absent its rate is NaN and the curve is flagged degenerate.
    """
    kind = TestKind(kind)
    arr = np.asarray(predictions, dtype=np.float64).reshape(-1, 2)
    stat, labels = _statistic(kind, arr[:, 0]), arr[:, 1].astype(int)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    rejects = stat[None, :] > thresholds[:, None]
    pos, neg = labels == 1, labels == 0
    degenerate = not (pos.any() and neg.any())
    if degenerate:
        warnings.warn("ground-truth labels are all one class; ROC rates undefined",
                      DegenerateLabelsWarning, stacklevel=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        tpr = rejects[:, pos].sum(axis=1) / pos.sum() if pos.any() else np.full(len(thresholds), np.nan)
        fpr = rejects[:, neg].sum(axis=1) / neg.sum() if neg.any() else np.full(len(thresholds), np.nan)
    return RocCurve(thresholds, np.asarray(fpr, dtype=np.float64), np.asarray(tpr, dtype=np.float64),
                    dict(provenance or {}, kind=kind.value), degenerate)


@dataclass(frozen=True)
class ScenarioResult:
    spec: float
    sens: float
    counts: tuple[int, int, int, int]  # (tp, fp, tn, fn)


def scenario_spec_sens(model_set_0, model_set_1, attributor: Callable[[object], float],
                       test: Callable[[float], float]) -> ScenarioResult:
    """Worst-case specificity over the null family and sensitivity over the alternate.

    ``attributor`` maps a model to the scalar attribution the test reads;
    ``test`` maps that score to a rejection probability.
    """
    if not model_set_0 or not model_set_1:
        raise ValueError("both model families must be non-empty")
    h0 = [float(test(attributor(f))) for f in model_set_0]
    h1 = [float(test(attributor(f))) for f in model_set_1]
    counts = (int(round(sum(h1))), int(round(sum(h0))),
              int(round(len(h0) - sum(h0))), int(round(len(h1) - sum(h1))))
    return ScenarioResult(min(1.0 - h for h in h0), min(h1), counts)
