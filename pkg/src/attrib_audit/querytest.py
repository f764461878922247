"""Brute-force query testing of local model behaviour.

The tester spends ``n`` model evaluations at iid uniform points of
``(0, delta]^p`` and rejects if any evaluation is positive, otherwise it still
rejects with probability ``tau``. Against the hardest Lipschitz alternative
(a pyramid of height ``epsilon`` whose positive region is a cube of side
``2 epsilon / L``) its specificity and sensitivity have closed forms, which
:func:`empirical_rates` checks by simulation.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "QueryPlan",
    "PyramidBump",
    "SEC5_PRESET",
    "run_query_test",
    "theoretical_rates",
    "empirical_rates",
    "EmpiricalRates",
    "adversary_detection",
    "adversary_bound_check",
    "rates_table",
]

# random draws held in memory per simulation block
_BLOCK_BUDGET = 2_000_000


@dataclass(frozen=True)
class QueryPlan:
    delta: float
    p: int
    n: int
    tau: float
    epsilon: float
    lipschitz_L: float
    rng_seed: int = 0

    def __post_init__(self):
        if not self.delta > 0 or not self.epsilon > 0 or not self.lipschitz_L > 0:
            raise ConfigurationError("delta, epsilon and L must be positive")
        if int(self.p) != self.p or self.p < 1:
            raise ConfigurationError("p must be a positive integer")
        if int(self.n) != self.n or self.n < 0:
            raise ConfigurationError("n must be a non-negative integer")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigurationError("tau must lie in [0, 1]")
        if 2.0 * self.epsilon > self.lipschitz_L * self.delta:
            raise ConfigurationError(
                f"2*epsilon = {2 * self.epsilon} exceeds L*delta = {self.lipschitz_L * self.delta}")

    @property
    def cell_fraction(self) -> float:
        """Probability that one uniform query lands in a cube of side ``2 eps / L``."""
        return (2.0 * self.epsilon / (self.lipschitz_L * self.delta)) ** self.p

    @property
    def r(self) -> int:
        """Cells per axis in the adversarial partition of ``(0, delta]``."""
        # guard against 0.3 / 0.1 style rounding just below an integer
        ratio = self.lipschitz_L * self.delta / (2.0 * self.epsilon)
        return int(math.floor(ratio + 1e-12 * ratio))

    def to_dict(self) -> dict:
        return asdict(self)


SEC5_PRESET = QueryPlan(delta=0.05, p=10, n=21960, tau=0.0, epsilon=0.01, lipschitz_L=1.0)


@dataclass(frozen=True, eq=False)
class PyramidBump:
    """``height * max(0, 1 - ||x - center||_inf / half_width)``.

    Its slope along any axis is ``height / half_width``; every construction
    here keeps that at most ``L`` (the looser ``2L`` of the lower-bound
    argument also holds).
    """

    center: np.ndarray
    half_width: float
    height: float

    def __post_init__(self):
        c = np.array(self.center, dtype=np.float64).reshape(-1)
        c.setflags(write=False)
        object.__setattr__(self, "center", c)
        if not self.half_width > 0 or not self.height > 0:
            raise ValueError("half_width and height must be positive")

    @classmethod
    def hardest(cls, plan: QueryPlan) -> "PyramidBump":
        """Corner bump whose positive region is ``(0, 2 eps / L)^p``."""
        h = plan.epsilon / plan.lipschitz_L
        return cls(np.full(plan.p, h), h, plan.epsilon)

    @classmethod
    def in_cell(cls, plan: QueryPlan, cell_index: int) -> "PyramidBump":
        """Bump filling cell ``cell_index`` of the ``r^p`` grid partition."""
        r = plan.r
        if r < 2:
            raise ConfigurationError(f"need floor(L*delta / (2*epsilon)) >= 2, got {r}")
        if not 0 <= cell_index < r ** plan.p:
            raise IndexError(f"cell {cell_index} out of range for {r}^{plan.p} cells")
        digits = np.array(np.unravel_index(cell_index, (r,) * plan.p), dtype=np.float64)
        side = plan.delta / r
        return cls((digits + 0.5) * side, side / 2.0, plan.epsilon)

    @property
    def lipschitz(self) -> float:
        return self.height / self.half_width

    def evaluate(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        dist = np.max(np.abs(X - self.center), axis=1)
        return (self.height * np.maximum(0.0, 1.0 - dist / self.half_width))[:, None]

    def __call__(self, X) -> np.ndarray:
        return self.evaluate(X)[:, 0]


def _values(model, X: np.ndarray) -> np.ndarray:
    if hasattr(model, "evaluate"):
        return np.asarray(model.evaluate(X), dtype=np.float64).reshape(X.shape[0], -1)[:, 0]
    return np.asarray(model(X), dtype=np.float64).reshape(X.shape[0])


def _trial_draws(plan: QueryPlan, stream: int, trial: int) -> tuple[bool, np.ndarray]:
    rng = np.random.default_rng([plan.rng_seed, stream, trial])
    coin = bool(rng.random() < plan.tau)
    # uniform on (0, delta]: 1 - U with U in [0, 1)
    return coin, plan.delta * (1.0 - rng.random((plan.n, plan.p)))


def _simulate(plan: QueryPlan, model, trials: range, stream: int) -> np.ndarray:
    """Reject decisions for the given trial indices; each trial has its own seed."""
    draws = [_trial_draws(plan, stream, t) for t in trials]
    coin = np.array([c for c, _ in draws], dtype=bool)
    if plan.n == 0 or not draws:
        return coin
    Q = np.concatenate([q for _, q in draws])
    hit = (_values(model, Q) > 0.0).reshape(len(draws), plan.n).any(axis=1)
    return coin | hit


def run_query_test(plan: QueryPlan, model, trial: int = 0) -> int:
    """One run of the tester; deterministic in ``(plan.rng_seed, trial)``."""
    return int(_simulate(plan, model, range(trial, trial + 1), stream=2)[0])


def _rejection_rate(plan: QueryPlan, model, trials: int, stream: int) -> float:
    if trials < 1:
        raise ValueError("trials must be at least 1")
    # blocks only bound memory; results do not depend on the block size
    block = max(1, min(trials, _BLOCK_BUDGET // max(1, plan.n * plan.p)))
    rejects = 0
    for start in range(0, trials, block):
        rejects += int(_simulate(plan, model, range(start, min(start + block, trials)), stream).sum())
    return rejects / trials


def theoretical_rates(plan: QueryPlan) -> tuple[float, float]:
    spec = 1.0 - plan.tau
    miss = (1.0 - plan.cell_fraction) ** plan.n
    return spec, 1.0 - (1.0 - plan.tau) * miss


@dataclass(frozen=True)
class EmpiricalRates:
    spec_hat: float
    sens_hat: float
    spec: float
    sens: float
    trials: int

    def __iter__(self):
        return iter((self.spec_hat, self.sens_hat))

    def se(self, rate: float) -> float:
        return math.sqrt(rate * (1.0 - rate) / self.trials)

    @property
    def within_4se(self) -> bool:
        return (abs(self.spec_hat - self.spec) <= 4 * self.se(self.spec)
                and abs(self.sens_hat - self.sens) <= 4 * self.se(self.sens))


def empirical_rates(plan: QueryPlan, trials: int) -> EmpiricalRates:
    """Simulated specificity (model identically 0) and sensitivity (hardest bump)."""
    null_model: Callable = lambda X: np.zeros(len(X))
    spec_hat = 1.0 - _rejection_rate(plan, null_model, trials, stream=0)
    sens_hat = _rejection_rate(plan, PyramidBump.hardest(plan), trials, stream=1)
    spec, sens = theoretical_rates(plan)
    return EmpiricalRates(spec_hat, sens_hat, spec, sens, trials)


def adversary_detection(plan: QueryPlan, trials: int, cell_index: int = 0) -> tuple[float, float, float]:
    """``(detection rate, n / r^p, standard error)`` for a bump filling one cell.

    Uniform queries hit every cell with the same probability, so cell 0 is as
    unlikely as any; the coin is disabled to isolate query detection.
    """
    bump = PyramidBump.in_cell(plan, cell_index)
    if plan.n == 0:
        return 0.0, 0.0, 0.0
    probe = QueryPlan(plan.delta, plan.p, plan.n, 0.0, plan.epsilon, plan.lipschitz_L, plan.rng_seed)
    rate = _rejection_rate(probe, bump, trials, stream=3)
    bound = plan.n / plan.r ** plan.p
    return rate, bound, math.sqrt(rate * (1.0 - rate) / trials)


def adversary_bound_check(plan: QueryPlan, trials: int) -> bool:
    rate, bound, se = adversary_detection(plan, trials)
    return rate <= bound + 4.0 * se


RATE_COLUMNS = ["delta", "p", "n", "tau", "epsilon", "lipschitz_L", "rng_seed", "trials",
                "spec", "sens", "spec_hat", "sens_hat", "ci_half_width_spec", "ci_half_width_sens"]


def rates_table(plans, trials: int) -> list[dict]:
    """One row per plan; empirical columns are NaN when ``trials == 0``.

    The half-widths are four binomial standard errors at the closed-form rate.
    """
    rows = []
    for plan in plans:
        spec, sens = theoretical_rates(plan)
        row = dict(plan.to_dict(), trials=trials, spec=spec, sens=sens)
        if trials > 0:
            emp = empirical_rates(plan, trials)
            row.update(spec_hat=emp.spec_hat, sens_hat=emp.sens_hat,
                       ci_half_width_spec=4 * emp.se(spec), ci_half_width_sens=4 * emp.se(sens))
        else:
            row.update(spec_hat=math.nan, sens_hat=math.nan,
                       ci_half_width_spec=math.nan, ci_half_width_sens=math.nan)
        rows.append(row)
    return rows


def rows_to_csv(rows: list[dict], columns=RATE_COLUMNS) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in columns])
    return buf.getvalue()
