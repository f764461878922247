"""Baseline distributions over examples.

Four variants cover what the attribution methods and the counterexample
forge need: a point mass, a finite empirical sample, a uniform box, and an
isotropic Gaussian. Marginal interval masses, truncated first moments and raw
moments are computed in closed form.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import ConfigurationError

__all__ = [
    "Interval",
    "Pointmass",
    "Empirical",
    "UniformBox",
    "GaussianIso",
    "Assumption1Check",
    "sample",
    "interval_mass",
    "truncated_first_moment",
    "raw_moment",
    "baseline_mean",
    "check_assumption1",
    "baseline_to_dict",
    "baseline_from_dict",
]


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    closed_lo: bool = False
    closed_hi: bool = False

    @classmethod
    def open(cls, lo, hi):
        return cls(float(lo), float(hi), False, False)

    @classmethod
    def closed(cls, lo, hi):
        return cls(float(lo), float(hi), True, True)

    @property
    def is_empty(self) -> bool:
        if self.lo < self.hi:
            return False
        return not (self.lo == self.hi and self.closed_lo and self.closed_hi)

    def contains(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        left = t >= self.lo if self.closed_lo else t > self.lo
        right = t <= self.hi if self.closed_hi else t < self.hi
        return left & right


REAL_LINE = Interval(-math.inf, math.inf)


def _vec(v) -> np.ndarray:
    arr = np.array(v, dtype=np.float64).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Pointmass:
    point: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "point", _vec(self.point))

    @property
    def dim(self) -> int:
        return self.point.shape[0]

    def atoms(self):
        return self.point[None, :], np.ones(1)


@dataclass(frozen=True, eq=False)
class Empirical:
    samples: np.ndarray

    def __post_init__(self):
        s = np.array(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[0] == 0:
            raise ValueError("empirical baseline needs a non-empty (N, p) sample")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def atoms(self):
        n = self.samples.shape[0]
        return self.samples, np.full(n, 1.0 / n)


@dataclass(frozen=True, eq=False)
class UniformBox:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo, hi = _vec(self.lo), _vec(self.hi)
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ValueError("uniform box needs lo < hi componentwise")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("uniform box must be bounded")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    def atoms(self):
        return None


@dataclass(frozen=True, eq=False)
class GaussianIso:
    center: np.ndarray
    sigma: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center))
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def atoms(self):
        return None


def _check_feature(b, j: int) -> None:
    if not 0 <= j < b.dim:
        raise IndexError(f"feature {j} out of range for a {b.dim}-dimensional baseline")


def sample(b, rng_seed: int, count: int) -> np.ndarray:
    """Draw ``count`` examples; deterministic given ``rng_seed``."""
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(rng_seed)
    if isinstance(b, Pointmass):
        return np.tile(b.point, (count, 1))
    if isinstance(b, Empirical):
        return b.samples[rng.integers(0, b.samples.shape[0], size=count)].copy()
    if isinstance(b, UniformBox):
        return rng.uniform(b.lo, b.hi, size=(count, b.dim))
    if isinstance(b, GaussianIso):
        return b.center + b.sigma * rng.standard_normal((count, b.dim))
    raise TypeError(f"unknown baseline {type(b).__name__}")


def _finite_sum(values: np.ndarray, weights: np.ndarray, mask: np.ndarray) -> float:
    return float(np.sum(weights[mask] * values[mask]))


def interval_mass(b, j: int, interval: Interval) -> float:
    """Exact marginal probability ``mu_j(interval)``."""
    _check_feature(b, j)
    if interval.is_empty:
        return 0.0
    atoms = b.atoms()
    if atoms is not None:
        pts, w = atoms
        return _finite_sum(np.ones(len(w)), w, interval.contains(pts[:, j]))
    if isinstance(b, UniformBox):
        lo, hi = b.lo[j], b.hi[j]
        overlap = min(interval.hi, hi) - max(interval.lo, lo)
        return max(overlap, 0.0) / (hi - lo)
    if isinstance(b, GaussianIso):
        c, s = b.center[j], b.sigma
        return float(max(ndtr((interval.hi - c) / s) - ndtr((interval.lo - c) / s), 0.0))
    raise TypeError(f"unknown baseline {type(b).__name__}")


def _normal_pdf(z: float) -> float:
    if math.isinf(z):
        return 0.0
    return math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def truncated_first_moment(b, j: int, interval: Interval) -> float:
    """Exact ``E[X_j 1{X_j in interval}]``."""
    _check_feature(b, j)
    if interval.is_empty:
        return 0.0
    atoms = b.atoms()
    if atoms is not None:
        pts, w = atoms
        return _finite_sum(pts[:, j], w, interval.contains(pts[:, j]))
    if isinstance(b, UniformBox):
        lo, hi = max(interval.lo, b.lo[j]), min(interval.hi, b.hi[j])
        if hi <= lo:
            return 0.0
        return (hi * hi - lo * lo) / (2.0 * (b.hi[j] - b.lo[j]))
    if isinstance(b, GaussianIso):
        c, s = b.center[j], b.sigma
        za, zb = (interval.lo - c) / s, (interval.hi - c) / s
        mass = ndtr(zb) - ndtr(za)
        return float(c * mass + s * (_normal_pdf(za) - _normal_pdf(zb)))
    raise TypeError(f"unknown baseline {type(b).__name__}")


def raw_moment(b, j: int, order: int) -> float:
    """``E[X_j ** order]`` under the marginal."""
    _check_feature(b, j)
    if order < 0:
        raise ValueError("order must be non-negative")
    atoms = b.atoms()
    if atoms is not None:
        pts, w = atoms
        return float(np.sum(w * pts[:, j] ** order))
    if isinstance(b, UniformBox):
        lo, hi = b.lo[j], b.hi[j]
        return (hi ** (order + 1) - lo ** (order + 1)) / ((order + 1) * (hi - lo))
    if isinstance(b, GaussianIso):
        c, s = b.center[j], b.sigma
        total = 0.0
        for k in range(0, order + 1, 2):
            # E Z^k = (k - 1)!! for even k
            double_fact = math.prod(range(k - 1, 0, -2)) if k else 1
            total += math.comb(order, k) * c ** (order - k) * s ** k * double_fact
        return total
    raise TypeError(f"unknown baseline {type(b).__name__}")


def baseline_mean(b) -> np.ndarray:
    return np.array([raw_moment(b, j, 1) for j in range(b.dim)])


@dataclass(frozen=True)
class Assumption1Check:
    holds: bool
    witness: tuple[float, float]
    outside_mass: float

    def __bool__(self) -> bool:
        return self.holds


def _feature_domain(domain_box, j: int) -> tuple[float, float]:
    box = np.asarray(domain_box, dtype=np.float64).reshape(-1, 2)
    lo, hi = box[j] if box.shape[0] > 1 else box[0]
    if not lo < hi:
        raise ConfigurationError(f"degenerate domain for feature {j}: ({lo}, {hi})")
    return float(lo), float(hi)


def check_assumption1(b, x, j: int, delta: float, domain_box) -> Assumption1Check:
    """Test whether the baseline has mass near, but outside, the neighbourhood.

    The witness interval is the whole feature domain ``(lo, hi)``. A baseline
    that puts mass outside the closed domain is a configuration error.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    _check_feature(b, j)
    lo, hi = _feature_domain(domain_box, j)
    spill = 1.0 - interval_mass(b, j, Interval.closed(lo, hi))
    if spill > 1e-12:
        raise ConfigurationError(
            f"baseline puts mass {spill:.3g} outside the domain [{lo}, {hi}] of feature {j}")
    xj = float(np.asarray(x, dtype=np.float64).reshape(-1)[j])
    a, c = xj - delta, xj + delta
    if not (lo < a and c < hi):
        return Assumption1Check(False, (lo, hi), 0.0)
    outside = interval_mass(b, j, Interval.open(lo, a)) + interval_mass(b, j, Interval.open(c, hi))
    return Assumption1Check(outside > 0.0, (lo, hi), outside)


def baseline_to_dict(b) -> dict[str, Any]:
    if isinstance(b, Pointmass):
        return {"kind": "pointmass", "point": b.point.tolist()}
    if isinstance(b, Empirical):
        return {"kind": "empirical", "samples": b.samples.tolist()}
    if isinstance(b, UniformBox):
        return {"kind": "uniform_box", "lo": b.lo.tolist(), "hi": b.hi.tolist()}
    if isinstance(b, GaussianIso):
        return {"kind": "gaussian_iso", "center": b.center.tolist(), "sigma": b.sigma}
    raise TypeError(f"cannot serialize {type(b).__name__}")


def baseline_from_dict(doc: dict[str, Any]):
    try:
        kind = doc["kind"]
        if kind == "pointmass":
            return Pointmass(doc["point"])
        if kind == "empirical":
            return Empirical(doc["samples"])
        if kind == "uniform_box":
            return UniformBox(doc["lo"], doc["hi"])
        if kind == "gaussian_iso":
            return GaussianIso(doc["center"], doc["sigma"])
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed baseline document: {exc!r}") from exc
    raise ValueError(f"unknown baseline kind {doc.get('kind')!r}")


def baseline_to_json(b) -> str:
    return json.dumps(baseline_to_dict(b), indent=2)


def baseline_from_json(text: str):
    return baseline_from_dict(json.loads(text))
