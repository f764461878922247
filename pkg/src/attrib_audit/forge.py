"""Counterexample construction.

Given a local behaviour ``g`` of feature ``j`` on ``[x_j - delta, x_j + delta]``
and a baseline, :func:`forge_counterexample` builds an additive piecewise-linear
model that equals ``g`` on that neighbourhood and yet receives any prescribed
attribution from every complete and linear method (SHAP, Integrated
Gradients). Outside the neighbourhood the model continues linearly with one
free slope, chosen to hit the target; the other side stays flat.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import baselines as bl
from .baselines import Interval
from .errors import AssumptionViolated, DegenerateBehaviour
from .models import AdditiveModel, PiecewiseLinear1D, Polynomial1D, model_to_dict

__all__ = [
    "LocalBehaviour",
    "ForgedModel",
    "forge_counterexample",
    "forge_pair",
    "random_polynomial_mc",
    "polynomial_disagreement_exact",
]

RAMP_WIDTH = 1e-9


@dataclass(frozen=True)
class LocalBehaviour:
    """Behaviour ``g`` of feature ``j`` near ``x``, in absolute feature units.

    ``local`` is ``g`` re-expressed with breakpoints at both neighbourhood
    ends; forged models reuse exactly these breakpoints and values so they
    reproduce ``local`` bit for bit inside the neighbourhood.
    """

    g: PiecewiseLinear1D
    x: tuple[float, ...]
    j: int
    delta: float

    def __post_init__(self):
        x = tuple(float(v) for v in np.asarray(self.x, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "x", x)
        if not 0 <= self.j < len(x):
            raise IndexError(f"feature {self.j} out of range for a {len(x)}-feature example")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not isinstance(self.g, PiecewiseLinear1D):
            raise TypeError("local behaviour must be a PiecewiseLinear1D")
        lo, hi = self.lo, self.hi
        inner = [b for b in self.g.breakpoints if lo < b < hi]
        knots = np.array([lo] + inner + [hi])
        with np.errstate(over="ignore", invalid="ignore"):
            vals = self.g.value(knots)
        if not np.all(np.isfinite(vals)):
            raise DegenerateBehaviour("behaviour is not finite on the closed neighbourhood")
        local = PiecewiseLinear1D(tuple(knots.tolist()), tuple(vals.tolist()),
                                  self.g.derivative(lo).item(), self.g.derivative(hi).item())
        object.__setattr__(self, "local", local)

    @property
    def xj(self) -> float:
        return self.x[self.j]

    @property
    def lo(self) -> float:
        return self.xj - self.delta

    @property
    def hi(self) -> float:
        return self.xj + self.delta

    def __call__(self, t):
        return self.local.value(t)

    @classmethod
    def linear(cls, x, j: int, delta: float, slope: float, value_at_x: float = 0.0):
        """``g(t) = value_at_x + slope (t - x_j)``."""
        xj = float(np.asarray(x, dtype=np.float64).reshape(-1)[j])
        g = PiecewiseLinear1D((xj,), (float(value_at_x),), slope, slope)
        return cls(g, x, j, delta)

    @classmethod
    def constant(cls, x, j: int, delta: float, value: float = 0.0):
        return cls.linear(x, j, delta, 0.0, value)


@dataclass(frozen=True, eq=False)
class ForgedModel:
    model: AdditiveModel
    slopes: tuple[float, float]
    witness: tuple[float, float]
    behaviour: LocalBehaviour
    target_phi: float
    coefficients: tuple[float, float]

    @property
    def component(self) -> PiecewiseLinear1D:
        return self.model.components[self.behaviour.j]

    def provenance(self) -> dict:
        b = self.behaviour
        return {"phi": self.target_phi, "delta": b.delta, "x": list(b.x), "feature": b.j,
                "witness": [w if math.isfinite(w) else None for w in self.witness], "beta_left": self.slopes[0],
                "beta_right": self.slopes[1]}

    def to_dict(self) -> dict:
        doc = model_to_dict(self.model)
        doc["forge_provenance"] = self.provenance()
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _outer_sets(behaviour: LocalBehaviour, witness) -> tuple[Interval, Interval]:
    xl, xr = witness
    # closed at a finite domain edge so the sets match where the model is defined
    left = Interval(xl, behaviour.lo, math.isfinite(xl), False)
    right = Interval(behaviour.hi, xr, False, math.isfinite(xr))
    return left, right


def _expected_local(baseline, j: int, local: PiecewiseLinear1D) -> float:
    """``E[g(X_j) 1{X_j in [lo, hi]}]`` for the restricted behaviour."""
    b, v = local.breakpoints, local.values
    total = 0.0
    for i in range(len(b) - 1):
        seg = Interval(b[i], b[i + 1], True, i == len(b) - 2)
        slope = (v[i + 1] - v[i]) / (b[i + 1] - b[i])
        m0 = bl.interval_mass(baseline, j, seg)
        m1 = bl.truncated_first_moment(baseline, j, seg)
        total += v[i] * m0 + slope * (m1 - b[i] * m0)
    return total


def _build_component(behaviour: LocalBehaviour, witness, beta_left: float,
                     beta_right: float) -> PiecewiseLinear1D:
    local = behaviour.local
    knots = list(local.breakpoints)
    vals = list(local.values)
    xl, xr = witness
    g_lo, g_hi = vals[0], vals[-1]
    left_slope = right_slope = 0.0
    if math.isfinite(xl):
        w = RAMP_WIDTH * max(1.0, abs(xl))
        knots = [xl - w, xl] + knots
        vals = [0.0, g_lo + beta_left * (xl - behaviour.lo)] + vals
    else:
        left_slope = beta_left
    if math.isfinite(xr):
        w = RAMP_WIDTH * max(1.0, abs(xr))
        knots = knots + [xr, xr + w]
        vals = vals + [g_hi + beta_right * (xr - behaviour.hi), 0.0]
    else:
        right_slope = beta_right
    return PiecewiseLinear1D(tuple(knots), tuple(vals), left_slope, right_slope)


def forge_counterexample(behaviour: LocalBehaviour, baseline, target_phi: float,
                         domain_box=None) -> ForgedModel:
    """Model equal to ``behaviour`` near ``x`` whose feature-``j`` attribution is ``target_phi``.

    ``domain_box`` gives ``(lo, hi)`` per feature (default: the real line);
    its ``j``-th interval is the witness outside which the component is zero,
    joined by a ramp of width ``1e-9`` carrying no baseline mass.
    """
    j = behaviour.j
    p = len(behaviour.x)
    if baseline.dim != p:
        raise ValueError(f"baseline has {baseline.dim} features, example has {p}")
    if domain_box is None:
        domain_box = [(-math.inf, math.inf)] * p
    check = bl.check_assumption1(baseline, behaviour.x, j, behaviour.delta, domain_box)
    if not check.holds:
        raise AssumptionViolated(
            f"no baseline mass for feature {j} outside [{behaviour.lo}, {behaviour.hi}] "
            f"within the domain {check.witness}")
    witness = check.witness
    left, right = _outer_sets(behaviour, witness)
    mass_l, mass_r = bl.interval_mass(baseline, j, left), bl.interval_mass(baseline, j, right)
    coef_l = bl.truncated_first_moment(baseline, j, left) - behaviour.lo * mass_l
    coef_r = bl.truncated_first_moment(baseline, j, right) - behaviour.hi * mass_r
    local = behaviour.local
    rhs = (-local.values[0] * mass_l - local.values[-1] * mass_r
           - _expected_local(baseline, j, local) + float(local.value(behaviour.xj)) - target_phi)
    if abs(coef_l) == 0.0 and abs(coef_r) == 0.0:
        raise AssumptionViolated("both outer-slope coefficients vanish")
    if abs(coef_l) >= abs(coef_r):
        slopes = (float(rhs / coef_l), 0.0)
    else:
        slopes = (0.0, float(rhs / coef_r))
    comp = _build_component(behaviour, witness, *slopes)
    comps = tuple(comp if i == j else Polynomial1D((0.0,)) for i in range(p))
    return ForgedModel(AdditiveModel(comps), slopes, witness, behaviour, float(target_phi),
                       (float(coef_l), float(coef_r)))


def forge_pair(behaviour0: LocalBehaviour, behaviour1: LocalBehaviour, baseline,
               shared_phi: float = 0.0, domain_box=None) -> tuple[ForgedModel, ForgedModel]:
    """Two models with different local behaviour but the same attribution."""
    if (behaviour0.x, behaviour0.j, behaviour0.delta) != (behaviour1.x, behaviour1.j, behaviour1.delta):
        raise ValueError("paired behaviours must share x, j and delta")
    return (forge_counterexample(behaviour0, baseline, shared_phi, domain_box),
            forge_counterexample(behaviour1, baseline, shared_phi, domain_box))


def _moments_for_polynomial(n_degree: int, baseline) -> tuple[float, float]:
    if n_degree < 2:
        raise ValueError("degree must be at least 2")
    if baseline.dim != 1:
        raise ValueError("polynomial models are univariate")
    m_n = bl.raw_moment(baseline, 0, n_degree)
    if not 0.5 < m_n < 1.0:
        raise ValueError(f"moment condition violated: E X^{n_degree} = {m_n} not in (1/2, 1)")
    return m_n, bl.raw_moment(baseline, 0, 1)


def random_polynomial_mc(n_degree: int, baseline, mc_samples: int, rng_seed: int = 0) -> float:
    """Fraction of ``f(t) = a t^n - t`` (``a`` standard normal) whose attribution
    at ``x = 1`` has the opposite sign to ``f'(1)``.

    The attribution of any complete and linear method is
    ``a (1 - E X^n) - (1 - E X)``.
    """
    m_n, m_1 = _moments_for_polynomial(n_degree, baseline)
    a = np.random.default_rng(rng_seed).standard_normal(mc_samples)
    phi = a * (1.0 - m_n) - (1.0 - m_1)
    slope = n_degree * a - 1.0
    return float(np.mean(np.sign(phi) != np.sign(slope)))


def polynomial_disagreement_exact(n_degree: int, baseline) -> float:
    """Gaussian probability that ``a`` falls between the two sign-change points."""
    m_n, m_1 = _moments_for_polynomial(n_degree, baseline)
    lo, hi = sorted((1.0 / n_degree, (1.0 - m_1) / (1.0 - m_n)))
    return float(ndtr(hi) - ndtr(lo))
