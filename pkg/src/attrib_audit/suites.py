"""Invariant batteries run by ``attrib-audit verify``.

Each suite returns a list of :class:`Check` records; a suite passes when
every check does. Randomized cases are drawn from a seeded generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import attribution as attr
from . import baselines as bl
from . import forge, hyptest, querytest
from .models import AdditiveModel, MlpModel, PiecewiseLinear1D, Polynomial1D

__all__ = ["Check", "SUITES", "run_suite"]


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""

    def __post_init__(self):
        object.__setattr__(self, "passed", bool(self.passed))


def random_baseline(rng, p: int):
    if rng.random() < 0.3:
        return bl.Pointmass(rng.normal(size=p))
    return bl.Empirical(rng.normal(size=(int(rng.integers(1, 8)), p)))


def random_mlp(rng, p: int, q: int = 1) -> MlpModel:
    h = int(rng.integers(2, 7))
    return MlpModel(((rng.normal(size=(h, p)), rng.normal(size=h)),
                     (rng.normal(size=(q, h)), rng.normal(size=q))))


def random_pwl(rng) -> PiecewiseLinear1D:
    k = int(rng.integers(1, 5))
    return PiecewiseLinear1D(tuple(np.sort(rng.normal(size=k) * 2).tolist()),
                             tuple(rng.normal(size=k).tolist()), float(rng.normal()), float(rng.normal()))


def random_poly(rng) -> Polynomial1D:
    return Polynomial1D(tuple(rng.normal(size=int(rng.integers(1, 4))).tolist()))


def random_additive(rng, p: int, smooth: bool = False) -> AdditiveModel:
    make = (lambda: random_poly(rng)) if smooth else (
        lambda: random_pwl(rng) if rng.random() < 0.5 else random_poly(rng))
    return AdditiveModel(tuple(make() for _ in range(p)))


def completeness(seed: int = 0, shap_cases: int = 200, ig_cases: int = 200) -> list[Check]:
    rng = np.random.default_rng([seed, 10])
    shap_fail = ig_fail = 0
    for _ in range(shap_cases):
        p = int(rng.integers(1, 7))
        model = random_mlp(rng, p, int(rng.integers(1, 3))) if rng.random() < 0.5 else random_additive(rng, p)
        if not attr.verify_completeness("shap_exact", model, random_baseline(rng, p), rng.normal(size=p), 1e-9):
            shap_fail += 1
    settings = attr.MethodSettings(ig_steps=200)
    for _ in range(ig_cases):
        p = int(rng.integers(1, 7))
        model = random_additive(rng, p, smooth=True)
        if not attr.verify_completeness("integrated_gradients", model, random_baseline(rng, p),
                                        rng.normal(size=p), 1e-4, settings):
            ig_fail += 1
    return [Check("shap_exact completeness", shap_fail == 0, f"{shap_fail}/{shap_cases} failed at 1e-9"),
            Check("integrated_gradients completeness", ig_fail == 0,
                  f"{ig_fail}/{ig_cases} failed at 1e-4 with 200 steps")]


def linearity(seed: int = 0, cases: int = 100) -> list[Check]:
    rng = np.random.default_rng([seed, 11])
    shap_fail = ig_fail = 0
    settings = attr.MethodSettings(ig_steps=200)
    for _ in range(cases):
        p = int(rng.integers(1, 7))
        base, x = random_baseline(rng, p), rng.normal(size=p)
        if not attr.verify_linearity("shap_exact", random_additive(rng, p), base, x, 1e-9):
            shap_fail += 1
        if not attr.verify_linearity("integrated_gradients", random_additive(rng, p, smooth=True),
                                     base, x, 1e-4, settings):
            ig_fail += 1
    return [Check("shap_exact linearity", shap_fail == 0, f"{shap_fail}/{cases} failed at 1e-9"),
            Check("integrated_gradients linearity", ig_fail == 0, f"{ig_fail}/{cases} failed at 1e-4")]


def two_target_forge_models(seed: int = 0, samples: int = 10_000):
    """Two forged models at x = 0.1, delta = 0.2 on Unif(-1, 1) with targets 0 and 1."""
    base = bl.Empirical(np.random.default_rng(seed).uniform(-1.0, 1.0, size=(samples, 1)))
    g = PiecewiseLinear1D((-0.1, 0.1, 0.3), (0.2, 0.0, 0.4), -1.0, 2.0)
    behaviour = forge.LocalBehaviour(g, (0.1,), 0, 0.2)
    return base, behaviour, [forge.forge_counterexample(behaviour, base, phi, [(-1.0, 1.0)])
                             for phi in (0.0, 1.0)]


def forge_suite(seed: int = 0) -> list[Check]:
    base, behaviour, forged = two_target_forge_models(seed)
    checks = []
    grid = np.linspace(behaviour.lo, behaviour.hi, 401)
    for target, fm in zip((0.0, 1.0), forged):
        phi = attr.shap_exact(fm.model, base, behaviour.x).scores[0, 0]
        checks.append(Check(f"forged SHAP = {target}", abs(phi - target) <= 0.02, f"got {phi:.6g}"))
        same = np.array_equal(fm.component.value(grid), behaviour.local.value(grid))
        checks.append(Check(f"forged model matches g (phi={target})", same))
    return checks


def forged_pair_population(delta: float = 0.2, eps: float = 0.1):
    """Recourse (+/- identity) and spurious (0 vs ramp) pairs at x = 0.1, pointmass baseline at 1."""
    x, base = (0.1,), bl.Pointmass([1.0])
    rec = forge.forge_pair(forge.LocalBehaviour.linear(x, 0, delta, 1.0),
                           forge.LocalBehaviour.linear(x, 0, delta, -1.0), base)
    ramp = PiecewiseLinear1D((0.1,), (eps,), eps / delta, eps / delta)
    spu = forge.forge_pair(forge.LocalBehaviour.constant(x, 0, delta),
                           forge.LocalBehaviour(ramp, x, 0, delta), base)
    return x, base, rec, spu


def roc_suite(seed: int = 0) -> list[Check]:
    delta, eps = 0.2, 0.1
    x, base, rec, spu = forged_pair_population(delta, eps)
    checks = []
    for name, pair, kind, grad_alpha in (
            ("recourse", rec, hyptest.TestKind.RECOURSE_SIGN, 0.0),
            ("spurious", spu, hyptest.TestKind.SPURIOUS_MAGNITUDE, eps / (2 * delta))):
        shap = [attr.shap_exact(fm.model, base, x).scores[0, 0] for fm in pair]
        checks.append(Check(f"{name}: equal SHAP", abs(shap[0] - shap[1]) <= 2e-6,
                            f"|diff| = {abs(shap[0] - shap[1]):.3g}"))
        f0, f1 = [fm.model for fm in pair] if name == "spurious" else [pair[1].model, pair[0].model]
        shap_of = lambda f: attr.shap_exact(f, base, x).scores[0, 0]  # noqa: E731
        results = [hyptest.scenario_spec_sens([f0], [f1], shap_of, hyptest.ThresholdTest(kind, a))
                   for a in hyptest.threshold_grid(shap, kind)]
        worst = max(r.spec + r.sens for r in results)
        checks.append(Check(f"{name}: SHAP spec + sens <= 1", worst <= 1 + 1e-9, f"max {worst:.12g}"))
        res = hyptest.scenario_spec_sens([f0], [f1], lambda f: attr.gradient_method(f, x).scores[0, 0],
                                         hyptest.ThresholdTest(kind, grad_alpha))
        checks.append(Check(f"{name}: gradient separates", res.spec == 1 and res.sens == 1,
                            f"spec {res.spec}, sens {res.sens}"))
    return checks


def query_suite(seed: int = 0, trials: int = 20_000) -> list[Check]:
    checks = []
    for plan in (querytest.QueryPlan(1.0, 1, 1, 0.0, 0.25, 1.0, seed),
                 querytest.QueryPlan(1.0, 2, 5, 0.2, 0.2, 1.0, seed),
                 querytest.QueryPlan(0.5, 3, 20, 0.1, 0.1, 1.0, seed)):
        emp = querytest.empirical_rates(plan, trials)
        checks.append(Check(f"query rates p={plan.p} n={plan.n}", emp.within_4se,
                            f"spec {emp.spec_hat:.4f}/{emp.spec:.4f}, sens {emp.sens_hat:.4f}/{emp.sens:.4f}"))
    plan = querytest.QueryPlan(1.0, 2, 3, 0.0, 0.1, 1.0, seed)
    checks.append(Check("adversary union bound", querytest.adversary_bound_check(plan, trials)))
    return checks


def prop4_suite(seed: int = 0, samples: int = 1_000_000) -> list[Check]:
    base = bl.UniformBox([-1.5], [1.5])
    est = forge.random_polynomial_mc(2, base, samples, seed)
    exact = forge.polynomial_disagreement_exact(2, base)
    return [Check("prop4 estimate in (0.25, 0.5)", 0.25 < est < 0.5, f"{est:.5f}"),
            Check("prop4 estimate near exact", abs(est - exact) <= 0.005, f"{est:.5f} vs {exact:.5f}")]


SUITES = {
    "completeness": completeness,
    "linearity": linearity,
    "forge": forge_suite,
    "roc": roc_suite,
    "query": query_suite,
    "prop4": prop4_suite,
}


def run_suite(name: str, seed: int = 0) -> list[Check]:
    if name == "all":
        return [c for fn in SUITES.values() for c in fn(seed)]
    if name not in SUITES:
        raise KeyError(name)
    return SUITES[name](seed)
