"""Feature attribution methods.

SHAP (marginal, exact and sampled), Integrated Gradients, Gradient,
SmoothGrad and LIME, each a pure function of ``(model, baseline, x)`` that
returns a ``(p, q)`` score matrix wrapped in :class:`Attribution`.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, replace
from typing import Callable

import numpy as np

from . import baselines as bl
from .models import AdditiveModel, path_kinks

__all__ = [
    "MethodSettings",
    "Attribution",
    "shap_weight",
    "shap_exact",
    "shap_sampled",
    "integrated_gradients",
    "gradient_method",
    "smoothgrad",
    "lime",
    "attribute",
    "METHODS",
    "verify_completeness",
    "verify_linearity",
    "marginal_baseline",
]

MAX_EXACT_FEATURES = 20
_ROW_CHUNK = 200_000


@dataclass(frozen=True)
class MethodSettings:
    """Knobs shared by the sampled methods.

    ``smoothgrad_sigma`` and ``lime_sigma`` are standard deviations of the
    isotropic Gaussian perturbation; the defaults give covariance ``0.1 I``.
    ``shap_baseline_samples`` also caps the background used by Integrated
    Gradients when the baseline is continuous.
    """

    ig_steps: int = 20
    shap_baseline_samples: int = 100
    shap_subset_samples: int = 500
    smoothgrad_sigma: float = math.sqrt(0.1)
    smoothgrad_samples: int = 100
    lime_lambda: float = 1.0
    lime_sigma: float = math.sqrt(0.1)
    lime_samples: int = 100
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("ig_steps", "shap_baseline_samples", "shap_subset_samples",
                     "smoothgrad_samples", "lime_samples"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be at least 1")
        for name in ("smoothgrad_sigma", "lime_sigma", "lime_lambda"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def with_seed(self, seed: int) -> "MethodSettings":
        return replace(self, rng_seed=int(seed))


@dataclass(frozen=True, eq=False)
class Attribution:
    scores: np.ndarray
    method_tag: str
    settings: MethodSettings | None = None

    def __post_init__(self):
        s = np.array(self.scores, dtype=np.float64)
        if s.ndim == 1:
            s = s[:, None]
        if not np.all(np.isfinite(s)):
            raise ValueError(f"{self.method_tag} produced non-finite scores")
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)

    @property
    def shape(self):
        return self.scores.shape

    def __getitem__(self, idx):
        return self.scores[idx]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["feature"] + [f"output_{k}" for k in range(self.scores.shape[1])])
        for j, row in enumerate(self.scores):
            writer.writerow([j] + [repr(float(v)) for v in row])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"method_tag": self.method_tag,
                "settings": asdict(self.settings) if self.settings else None,
                "scores": self.scores.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def shap_weight(subset_size: int, p: int) -> float:
    """Shapley kernel weight ``i! (p - i - 1)! / p!``."""
    return math.factorial(subset_size) * math.factorial(p - subset_size - 1) / math.factorial(p)


def _point(x, model) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != model.n_inputs:
        raise ValueError(f"example has {x.shape[0]} features, model expects {model.n_inputs}")
    return x


def _background(baseline, settings: MethodSettings | None, allow_sampling: bool = True):
    """Atoms and weights used to average over the baseline."""
    atoms = baseline.atoms()
    limit = settings.shap_baseline_samples if settings else None
    if atoms is not None and (limit is None or atoms[0].shape[0] <= limit):
        return atoms
    if not allow_sampling:
        raise ValueError(f"{type(baseline).__name__} baseline needs a finite support here")
    pts = bl.sample(baseline, settings.rng_seed, settings.shap_baseline_samples)
    return pts, np.full(pts.shape[0], 1.0 / pts.shape[0])


class _HybridTable:
    """Baseline-averaged model values at hybrid examples, keyed by subset mask.

    Entry ``mask`` is ``sum_i w_i f(z_i)`` where ``z_i`` takes the features
    in ``mask`` from ``x`` and the rest from background atom ``i``.
    """

    def __init__(self, model, x, points, weights):
        self.model = model
        self.x = x
        self.points = points
        self.weights = weights
        self.p = x.shape[0]
        self._cache: dict[int, np.ndarray] = {}

    def _bits(self, masks) -> np.ndarray:
        masks = np.asarray(masks, dtype=np.int64)
        return ((masks[:, None] >> np.arange(self.p)) & 1).astype(bool)

    def fill(self, masks) -> None:
        todo = [m for m in dict.fromkeys(int(m) for m in masks) if m not in self._cache]
        n_atoms = self.points.shape[0]
        per_chunk = max(1, _ROW_CHUNK // n_atoms)
        for start in range(0, len(todo), per_chunk):
            chunk = todo[start:start + per_chunk]
            sel = self._bits(chunk)
            Z = np.where(sel[:, None, :], self.x[None, None, :], self.points[None, :, :])
            out = self.model.evaluate(Z.reshape(-1, self.p))
            out = out.reshape(len(chunk), n_atoms, -1)
            avg = np.einsum("i,miq->mq", self.weights, out)
            for m, row in zip(chunk, avg):
                self._cache[m] = row

    def __getitem__(self, mask: int) -> np.ndarray:
        if mask not in self._cache:
            self.fill([mask])
        return self._cache[mask]


def shap_exact(model, baseline, x) -> Attribution:
    """Exact marginal SHAP by enumerating every subset of the other features.

    The baseline must have finite support (point mass or empirical sample)
    and the model at most 20 inputs.
    """
    x = _point(x, model)
    p = x.shape[0]
    if p > MAX_EXACT_FEATURES:
        raise ValueError(f"exact SHAP enumerates 2^p subsets; p={p} exceeds {MAX_EXACT_FEATURES}")
    atoms = baseline.atoms()
    if atoms is None:
        raise ValueError(f"exact SHAP needs a finite-support baseline, got {type(baseline).__name__}")
    table = _HybridTable(model, x, *atoms)
    table.fill(range(1 << p))
    sizes = np.array([bin(m).count("1") for m in range(1 << p)])
    weights = np.array([shap_weight(k, p) if k < p else 0.0 for k in range(p + 1)])
    F = np.stack([table[m] for m in range(1 << p)])
    all_masks = np.arange(1 << p)
    scores = np.zeros((p, model.n_outputs))
    for j in range(p):
        bit = 1 << j
        without = all_masks[(all_masks & bit) == 0]
        scores[j] = weights[sizes[without]] @ (F[without | bit] - F[without])
    return Attribution(scores, "shap_exact")


def _sample_subsets(rng: np.random.Generator, p: int, j: int, count: int) -> np.ndarray:
    # Over subsets of the other p-1 features the Shapley weights sum to one and
    # every size 0..p-1 carries mass 1/p, so: uniform size, then uniform subset.
    others = np.array([i for i in range(p) if i != j], dtype=np.int64)
    if others.size == 0:
        return np.zeros(count, dtype=np.int64)
    sizes = rng.integers(0, p, size=count)
    order = np.argsort(rng.random((count, others.size)), axis=1)
    chosen = np.arange(others.size)[None, :] < sizes[:, None]
    bits = np.zeros((count, others.size), dtype=np.int64)
    np.put_along_axis(bits, order, chosen.astype(np.int64), axis=1)
    return bits @ (np.int64(1) << others)


def shap_sampled(model, baseline, x, settings: MethodSettings = MethodSettings()) -> Attribution:
    """Monte Carlo SHAP.

    The outer expectation uses the baseline atoms when there are at most
    ``shap_baseline_samples`` of them, otherwise that many seeded draws. The
    inner sum over subsets is replaced by the mean over
    ``shap_subset_samples`` subsets drawn from the Shapley kernel.
    """
    x = _point(x, model)
    p = x.shape[0]
    points, weights = _background(baseline, settings)
    rng = np.random.default_rng([settings.rng_seed, 1])
    table = _HybridTable(model, x, points, weights)
    scores = np.zeros((p, model.n_outputs))
    K = settings.shap_subset_samples
    for j in range(p):
        masks, counts = np.unique(_sample_subsets(rng, p, j, K), return_counts=True)
        bit = 1 << j
        table.fill(np.concatenate([masks, masks | bit]))
        for mask, c in zip(masks.tolist(), counts.tolist()):
            scores[j] += c * (table[mask | bit] - table[mask])
        scores[j] /= K
    return Attribution(scores, "shap_sampled", settings)


def _path_average_gradient(model, start: np.ndarray, x: np.ndarray, rule: str, steps: int) -> np.ndarray:
    """``int_0^1 grad f(start + a (x - start)) da`` for one path, shape ``(p, q)``."""
    if rule == "midpoint":
        alphas = (np.arange(steps) + 0.5) / steps
        widths = np.full(steps, 1.0 / steps)
    elif rule == "piecewise":
        # midpoint rule on the uniform grid refined at the path's kinks; exact
        # for piecewise-linear models
        edges = np.union1d(np.linspace(0.0, 1.0, steps + 1), path_kinks(model, start, x))
        alphas = 0.5 * (edges[:-1] + edges[1:])
        widths = np.diff(edges)
    else:
        raise ValueError(f"unknown quadrature rule {rule!r}")
    pts = start[None, :] + alphas[:, None] * (x - start)[None, :]
    return np.einsum("t,tpq->pq", widths, model.gradient(pts))


def integrated_gradients(model, baseline, x, settings: MethodSettings = MethodSettings(),
                         rule: str = "midpoint") -> Attribution:
    """Integrated Gradients averaged over the baseline.

    ``rule="midpoint"`` uses ``ig_steps`` nodes at ``(t - 1/2) / steps``;
    ``rule="piecewise"`` additionally splits each path at the model's kinks.
    """
    x = _point(x, model)
    points, weights = _background(baseline, settings)
    steps = settings.ig_steps
    scores = np.zeros((x.shape[0], model.n_outputs))
    if rule == "midpoint":
        alphas = (np.arange(steps) + 0.5) / steps
        per_chunk = max(1, _ROW_CHUNK // steps)
        for start in range(0, points.shape[0], per_chunk):
            P = points[start:start + per_chunk]
            W = weights[start:start + per_chunk]
            diff = x[None, :] - P
            Z = P[:, None, :] + alphas[None, :, None] * diff[:, None, :]
            G = model.gradient(Z.reshape(-1, x.shape[0])).reshape(P.shape[0], steps, x.shape[0], -1)
            scores += np.einsum("i,ip,ipq->pq", W, diff, G.mean(axis=1))
    else:
        for P, w in zip(points, weights):
            scores += w * (x - P)[:, None] * _path_average_gradient(model, P, x, rule, steps)
    tag = "integrated_gradients" if rule == "midpoint" else f"integrated_gradients_{rule}"
    return Attribution(scores, tag, settings)


def gradient_method(model, x, baseline=None) -> Attribution:
    """Gradient at ``x``; ``baseline`` is accepted for interface symmetry and ignored."""
    x = _point(x, model)
    return Attribution(model.gradient(x[None, :])[0], "gradient")


def smoothgrad(model, x, settings: MethodSettings = MethodSettings()) -> Attribution:
    x = _point(x, model)
    rng = np.random.default_rng(settings.rng_seed)
    noisy = x[None, :] + settings.smoothgrad_sigma * rng.standard_normal(
        (settings.smoothgrad_samples, x.shape[0]))
    return Attribution(model.gradient(noisy).mean(axis=0), "smoothgrad", settings)


def lime(model, x, settings: MethodSettings = MethodSettings()) -> Attribution:
    """Ridge surrogate without intercept fitted on seeded Gaussian perturbations.

    Solves ``(A / n + lambda I) beta = b / n`` with ``A = sum x' x'^T`` and
    ``b = sum x' f(x')``, one column per model output.
    """
    x = _point(x, model)
    rng = np.random.default_rng(settings.rng_seed)
    Xp = x[None, :] + settings.lime_sigma * rng.standard_normal((settings.lime_samples, x.shape[0]))
    return _ridge_attribution(Xp, model.evaluate(Xp), settings)


def _ridge_attribution(Xp: np.ndarray, Y: np.ndarray, settings: MethodSettings) -> Attribution:
    n, p = Xp.shape
    A = Xp.T @ Xp / n + settings.lime_lambda * np.eye(p)
    beta = np.linalg.solve(A, Xp.T @ Y / n)
    return Attribution(beta, "lime", settings)


def _shap_any(model, baseline, x, settings=MethodSettings()):
    return shap_exact(model, baseline, x)


def _ig_piecewise(model, baseline, x, settings=MethodSettings()):
    return integrated_gradients(model, baseline, x, settings, rule="piecewise")


METHODS: dict[str, Callable] = {
    "shap_exact": _shap_any,
    "shap_sampled": shap_sampled,
    "integrated_gradients": integrated_gradients,
    "ig_piecewise": _ig_piecewise,
    "gradient": lambda model, baseline, x, settings=None: gradient_method(model, x, baseline),
    "smoothgrad": lambda model, baseline, x, settings=MethodSettings(): smoothgrad(model, x, settings),
    "lime": lambda model, baseline, x, settings=MethodSettings(): lime(model, x, settings),
}
_ALIASES = {"shap": "shap_exact", "ig": "integrated_gradients"}


def attribute(method: str, model, baseline, x, settings: MethodSettings = MethodSettings()) -> Attribution:
    """Dispatch by method name (``shap``, ``ig``, ``gradient``, ``smoothgrad``, ``lime`` ...)."""
    name = _ALIASES.get(method, method)
    if name not in METHODS:
        raise ValueError(f"unknown attribution method {method!r}; choose from {sorted(METHODS)}")
    return METHODS[name](model, baseline, x, settings)


def _baseline_expectation(model, baseline, settings) -> np.ndarray:
    pts, w = _background(baseline, settings)
    return np.einsum("i,iq->q", w, model.evaluate(pts))


def verify_completeness(method: str, model, baseline, x, tol: float,
                        settings: MethodSettings = MethodSettings()) -> bool:
    """Do the scores sum to ``f(x) - E f(X)`` within ``tol`` for every output?"""
    scores = attribute(method, model, baseline, x, settings).scores
    target = model.evaluate(_point(x, model)[None, :])[0] - _baseline_expectation(model, baseline, settings)
    return bool(np.all(np.abs(scores.sum(axis=0) - target) <= tol))


def marginal_baseline(baseline, j: int):
    """The ``j``-th marginal of ``baseline`` as a 1-D baseline."""
    if isinstance(baseline, bl.Pointmass):
        return bl.Pointmass(baseline.point[[j]])
    if isinstance(baseline, bl.Empirical):
        return bl.Empirical(baseline.samples[:, [j]])
    if isinstance(baseline, bl.UniformBox):
        return bl.UniformBox(baseline.lo[[j]], baseline.hi[[j]])
    if isinstance(baseline, bl.GaussianIso):
        return bl.GaussianIso(baseline.center[[j]], baseline.sigma)
    raise TypeError(f"unknown baseline {type(baseline).__name__}")


def verify_linearity(method: str, model, baseline, x, tol: float,
                     settings: MethodSettings = MethodSettings()) -> bool:
    """Compare each feature's score with the 1-D attribution of its own component."""
    if not isinstance(model, AdditiveModel):
        raise TypeError("linearity is only defined for additive models")
    x = _point(x, model)
    full = attribute(method, model, baseline, x, settings).scores
    for j, comp in enumerate(model.components):
        own = attribute(method, comp, marginal_baseline(baseline, j), x[[j]], settings).scores
        if np.any(np.abs(full[j] - own[0]) > tol):
            return False
    return True
