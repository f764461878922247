"""Model classes evaluated by the attribution and auditing code.

Every model maps a batch of inputs ``X`` with shape ``(n, p)`` to outputs of
shape ``(n, q)`` and exposes an analytic gradient of shape ``(n, p, q)``.
The 1-D classes (:class:`PiecewiseLinear1D`, :class:`Polynomial1D`) double as
additive components and as ``p = q = 1`` models.

Gradients at kinks are right-derivatives. Models are immutable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

__all__ = [
    "PiecewiseLinear1D",
    "Polynomial1D",
    "AdditiveModel",
    "MlpModel",
    "linear_model",
    "constant_model",
    "evaluate",
    "gradient",
    "lipschitz_bound",
    "path_kinks",
    "model_to_dict",
    "model_from_dict",
    "model_to_json",
    "model_from_json",
]


def _as_batch(X, n_inputs: int) -> tuple[np.ndarray, bool]:
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim <= 1
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != n_inputs:
        raise ValueError(f"expected {n_inputs} input features, got {X.shape[1]}")
    return X, single


class _ScalarFunction:
    """Mixin turning a vectorized 1-D ``value``/``derivative`` pair into a model."""

    n_inputs = 1
    n_outputs = 1

    def evaluate(self, X) -> np.ndarray:
        X, _ = _as_batch(X, 1)
        return self.value(X[:, 0])[:, None]

    def gradient(self, X) -> np.ndarray:
        X, _ = _as_batch(X, 1)
        return self.derivative(X[:, 0])[:, None, None]

    def __call__(self, t):
        return self.value(t)


@dataclass(frozen=True)
class PiecewiseLinear1D(_ScalarFunction):
    """Continuous piecewise-linear function through ``(breakpoints, values)``.

    Outside the breakpoints the function continues linearly with
    ``left_slope`` / ``right_slope``.
    """

    breakpoints: tuple[float, ...]
    values: tuple[float, ...]
    left_slope: float = 0.0
    right_slope: float = 0.0
    _b: np.ndarray = field(init=False, repr=False, compare=False)
    _v: np.ndarray = field(init=False, repr=False, compare=False)
    _slopes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        b = np.array(self.breakpoints, dtype=np.float64)
        v = np.array(self.values, dtype=np.float64)
        if b.ndim != 1 or b.size == 0:
            raise ValueError("need at least one breakpoint")
        if v.shape != b.shape:
            raise ValueError("values and breakpoints differ in length")
        if np.any(np.diff(b) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(v))):
            raise ValueError("breakpoints and values must be finite")
        ls, rs = float(self.left_slope), float(self.right_slope)
        if not (math.isfinite(ls) and math.isfinite(rs)):
            raise ValueError("outer slopes must be finite")
        # slopes[i + 1] is the slope right of breakpoint i; slopes[0] is left_slope.
        slopes = np.concatenate([[ls], np.diff(v) / np.diff(b), [rs]])
        for arr in (b, v, slopes):
            arr.setflags(write=False)
        object.__setattr__(self, "breakpoints", tuple(b.tolist()))
        object.__setattr__(self, "values", tuple(v.tolist()))
        object.__setattr__(self, "left_slope", ls)
        object.__setattr__(self, "right_slope", rs)
        object.__setattr__(self, "_b", b)
        object.__setattr__(self, "_v", v)
        object.__setattr__(self, "_slopes", slopes)

    @property
    def n_pieces(self) -> int:
        return len(self.breakpoints) + 1

    def _locate(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        idx = np.searchsorted(self._b, t, side="right") - 1
        return np.maximum(idx, 0), idx + 1

    def value(self, t):
        t = np.asarray(t, dtype=np.float64)
        anchor, piece = self._locate(t)
        return self._v[anchor] + self._slopes[piece] * (t - self._b[anchor])

    def derivative(self, t):
        t = np.asarray(t, dtype=np.float64)
        _, piece = self._locate(t)
        return self._slopes[piece].astype(np.float64, copy=True)

    def kinks(self) -> np.ndarray:
        return self._b

    def max_abs_slope(self, lo: float, hi: float) -> float:
        # pieces overlapping the open interval (lo, hi)
        edges = np.concatenate([[-np.inf], self._b, [np.inf]])
        live = (edges[:-1] < hi) & (edges[1:] > lo)
        return float(np.max(np.abs(self._slopes[live])))


@dataclass(frozen=True)
class Polynomial1D(_ScalarFunction):
    """Polynomial with degree-ascending ``coefficients``."""

    coefficients: tuple[float, ...]

    def __post_init__(self):
        c = tuple(float(a) for a in self.coefficients)
        if not c:
            c = (0.0,)
        object.__setattr__(self, "coefficients", c)

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def value(self, t):
        t = np.asarray(t, dtype=np.float64)
        out = np.zeros_like(t)
        for c in reversed(self.coefficients):
            out = out * t + c
        return out

    def derivative_poly(self) -> "Polynomial1D":
        c = self.coefficients
        return Polynomial1D(tuple(k * c[k] for k in range(1, len(c))))

    def derivative(self, t):
        return self.derivative_poly().value(t)

    def kinks(self) -> np.ndarray:
        return np.empty(0)

    def max_abs_slope(self, lo: float, hi: float) -> float:
        d = self.derivative_poly()
        if d.degree == 0:
            return abs(d.coefficients[0])
        if not (math.isfinite(lo) and math.isfinite(hi)):
            return math.inf
        candidates = [lo, hi]
        dd = d.derivative_poly()
        if any(dd.coefficients):
            roots = np.polynomial.polynomial.polyroots(dd.coefficients)
            candidates += [r.real for r in np.atleast_1d(roots)
                           if abs(r.imag) < 1e-12 and lo < r.real < hi]
        return float(np.max(np.abs(d.value(np.array(candidates)))))


@dataclass(frozen=True)
class AdditiveModel:
    """``f(x) = sum_j components[j](x_j)``; scalar output."""

    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("additive model needs at least one component")
        for c in comps:
            if not isinstance(c, (PiecewiseLinear1D, Polynomial1D)):
                raise TypeError(f"unsupported component {type(c).__name__}")
        object.__setattr__(self, "components", comps)

    @property
    def n_inputs(self) -> int:
        return len(self.components)

    n_outputs = 1

    def evaluate(self, X) -> np.ndarray:
        X, _ = _as_batch(X, self.n_inputs)
        total = np.zeros(X.shape[0])
        for j, comp in enumerate(self.components):
            total = total + comp.value(X[:, j])
        return total[:, None]

    def gradient(self, X) -> np.ndarray:
        X, _ = _as_batch(X, self.n_inputs)
        cols = [comp.derivative(X[:, j]) for j, comp in enumerate(self.components)]
        return np.stack(cols, axis=1)[:, :, None]


@dataclass(frozen=True, eq=False)
class MlpModel:
    """ReLU multilayer perceptron; identity on the output layer.

    ``layers`` holds ``(weight, bias)`` pairs with ``weight`` shaped
    ``(fan_out, fan_in)``.
    """

    layers: tuple

    def __post_init__(self):
        frozen = []
        prev = None
        for W, b in self.layers:
            W = np.array(W, dtype=np.float64, ndmin=2)
            b = np.array(b, dtype=np.float64).reshape(-1)
            if b.shape[0] != W.shape[0]:
                raise ValueError("bias length must match weight rows")
            if prev is not None and W.shape[1] != prev:
                raise ValueError("layer dimensions do not chain")
            prev = W.shape[0]
            W.setflags(write=False)
            b.setflags(write=False)
            frozen.append((W, b))
        if not frozen:
            raise ValueError("MLP needs at least one layer")
        object.__setattr__(self, "layers", tuple(frozen))

    @property
    def n_inputs(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def n_outputs(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def n_hidden_units(self) -> int:
        return sum(W.shape[0] for W, _ in self.layers[:-1])

    def _forward(self, X: np.ndarray):
        h = X
        masks = []
        for W, b in self.layers[:-1]:
            z = h @ W.T + b
            m = z >= 0.0
            masks.append(m)
            h = np.where(m, z, 0.0)
        W, b = self.layers[-1]
        return h @ W.T + b, masks

    def evaluate(self, X) -> np.ndarray:
        X, _ = _as_batch(X, self.n_inputs)
        return self._forward(X)[0]

    def gradient(self, X) -> np.ndarray:
        X, _ = _as_batch(X, self.n_inputs)
        _, masks = self._forward(X)
        # G[n, i, k] = d (layer-k activation) / d x_i
        G = np.broadcast_to(self.layers[0][0].T, (X.shape[0],) + self.layers[0][0].T.shape)
        for (W, _), m in zip(self.layers[1:], masks):
            G = (G * m[:, None, :]) @ W.T
        return np.array(G, dtype=np.float64)

    def __eq__(self, other):
        if not isinstance(other, MlpModel) or len(self.layers) != len(other.layers):
            return False
        return all(np.array_equal(W1, W2) and np.array_equal(b1, b2)
                   for (W1, b1), (W2, b2) in zip(self.layers, other.layers))

    __hash__ = None


def linear_model(weights: Sequence[float], bias: float = 0.0) -> AdditiveModel:
    """Additive model ``bias + sum_j w_j x_j`` (bias carried by the first component)."""
    comps = [Polynomial1D((bias if j == 0 else 0.0, float(w))) for j, w in enumerate(weights)]
    return AdditiveModel(tuple(comps))


def constant_model(value: float, n_inputs: int = 1) -> AdditiveModel:
    comps = [Polynomial1D((value if j == 0 else 0.0,)) for j in range(n_inputs)]
    return AdditiveModel(tuple(comps))


def evaluate(model, x) -> np.ndarray:
    """Evaluate ``model`` at one example (returns shape ``(q,)``) or a batch."""
    out = model.evaluate(x)
    return out[0] if np.ndim(x) <= 1 else out


def gradient(model, x) -> np.ndarray:
    """Analytic gradient, ``(p, q)`` for one example or ``(n, p, q)`` for a batch."""
    out = model.gradient(x)
    return out[0] if np.ndim(x) <= 1 else out


def _box(box, n_inputs: int) -> np.ndarray:
    box = np.asarray(box, dtype=np.float64).reshape(-1, 2)
    if box.shape[0] != n_inputs:
        raise ValueError(f"box has {box.shape[0]} intervals, model has {n_inputs} inputs")
    if np.any(box[:, 0] >= box[:, 1]):
        raise ValueError("box intervals must be non-degenerate")
    return box


def lipschitz_bound(model, box) -> float:
    """Upper bound on ``sup |f(x)_k - f(x')_k| / ||x - x'||_inf`` over ``box``.

    ``box`` is a sequence of ``(lo, hi)`` per input. Exact for 1-D and
    additive models (the sup-norm geometry sums the per-coordinate slope
    bounds); for MLPs the product of induced infinity-norms of the weights.
    """
    b = _box(box, model.n_inputs)
    if isinstance(model, (PiecewiseLinear1D, Polynomial1D)):
        return model.max_abs_slope(*b[0])
    if isinstance(model, AdditiveModel):
        return float(sum(c.max_abs_slope(lo, hi) for c, (lo, hi) in zip(model.components, b)))
    if isinstance(model, MlpModel):
        return float(np.prod([np.abs(W).sum(axis=1).max() for W, _ in model.layers]))
    bound = getattr(model, "lipschitz_bound", None)
    if bound is None:
        raise TypeError(f"no Lipschitz bound for {type(model).__name__}")
    return float(bound(b))


def _segment_crossings(a: float, b: float, knots: np.ndarray) -> list[float]:
    if a == b:
        return []
    alphas = (knots - a) / (b - a)
    return [float(t) for t in alphas if 0.0 < t < 1.0]


def path_kinks(model, start, end) -> np.ndarray:
    """Sorted ``alpha`` in ``(0, 1)`` where ``model`` restricted to the segment
    ``start + alpha (end - start)`` can change slope."""
    start = np.asarray(start, dtype=np.float64).reshape(-1)
    end = np.asarray(end, dtype=np.float64).reshape(-1)
    if isinstance(model, (PiecewiseLinear1D, Polynomial1D)):
        found = _segment_crossings(start[0], end[0], model.kinks())
    elif isinstance(model, AdditiveModel):
        found = []
        for j, comp in enumerate(model.components):
            found += _segment_crossings(start[j], end[j], comp.kinks())
    elif isinstance(model, MlpModel):
        found = _mlp_path_kinks(model, start, end)
    elif hasattr(model, "path_kinks"):
        found = list(model.path_kinks(start, end))
    else:
        raise TypeError(f"cannot locate kinks for {type(model).__name__}")
    return np.unique(np.asarray(found, dtype=np.float64))


def _mlp_path_kinks(model: MlpModel, start: np.ndarray, end: np.ndarray) -> list[float]:
    # Layer by layer: between consecutive known kinks every earlier activation
    # pattern is fixed, so the next pre-activation is affine there and its
    # zero crossings follow from the endpoint values.
    alphas = np.array([0.0, 1.0])
    d = end - start
    for depth in range(len(model.layers) - 1):
        pts = start[None, :] + alphas[:, None] * d[None, :]
        h = pts
        for W, b in model.layers[:depth]:
            h = np.maximum(h @ W.T + b, 0.0)
        W, b = model.layers[depth]
        z = h @ W.T + b
        new = []
        for i in range(len(alphas) - 1):
            z0, z1 = z[i], z[i + 1]
            cross = (z0 * z1) < 0
            if np.any(cross):
                frac = z0[cross] / (z0[cross] - z1[cross])
                new.extend(alphas[i] + frac * (alphas[i + 1] - alphas[i]))
        if new:
            alphas = np.unique(np.concatenate([alphas, new]))
    return [float(a) for a in alphas if 0.0 < a < 1.0]


# -- serialization -----------------------------------------------------------

def model_to_dict(model) -> dict[str, Any]:
    if isinstance(model, PiecewiseLinear1D):
        return {"kind": "pwl1d", "breakpoints": list(model.breakpoints),
                "values": list(model.values), "left_slope": model.left_slope,
                "right_slope": model.right_slope}
    if isinstance(model, Polynomial1D):
        return {"kind": "poly", "coefficients": list(model.coefficients)}
    if isinstance(model, AdditiveModel):
        return {"kind": "additive", "components": [model_to_dict(c) for c in model.components]}
    if isinstance(model, MlpModel):
        return {"kind": "mlp", "activation": "relu",
                "layers": [{"weight": W.tolist(), "bias": b.tolist()} for W, b in model.layers]}
    raise TypeError(f"cannot serialize {type(model).__name__}")


def model_from_dict(doc: dict[str, Any]):
    try:
        kind = doc["kind"]
        if kind == "pwl1d":
            return PiecewiseLinear1D(tuple(doc["breakpoints"]), tuple(doc["values"]),
                                     doc.get("left_slope", 0.0), doc.get("right_slope", 0.0))
        if kind == "poly":
            return Polynomial1D(tuple(doc["coefficients"]))
        if kind == "additive":
            return AdditiveModel(tuple(model_from_dict(c) for c in doc["components"]))
        if kind == "mlp":
            if doc.get("activation", "relu") != "relu":
                raise ValueError("only relu activations are supported")
            return MlpModel(tuple((layer["weight"], layer["bias"]) for layer in doc["layers"]))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed model document: {exc!r}") from exc
    raise ValueError(f"unknown model kind {doc.get('kind')!r}")


def model_to_json(model, **extra) -> str:
    doc = model_to_dict(model)
    doc.update(extra)
    return json.dumps(doc, indent=2)


def model_from_json(text: str):
    return model_from_dict(json.loads(text))
