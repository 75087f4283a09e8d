"""Oracle-backed self-checks, shared by ``relaypower validate`` and the acceptance tests.

Each ``check_*`` function returns a :class:`CheckResult`; failing instances
are serialised into ``failures`` so they can be replayed.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import sca
from .bayes import GaussianBelief, SensorNetwork, observation_moments
from .experiments import METHODS, ScenarioConfig, curve_csv, run_sweep, simulate_realization
from .oracle import GridSpec, grid_search_mse
from .relay import Allocation, Budgets, RelayProblem, posterior_mse


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    failures: list = field(default_factory=list)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _dump(**kw) -> str:
    return json.dumps({k: np.asarray(v).tolist() for k, v in kw.items()})


def random_problem(rng: np.random.Generator, n_max: int = 4, m_max: int = 6, *, n=None, m=None,
                   random_noise: bool = False) -> RelayProblem:
    """Random relay problem with log-uniform link gains in [0.1, 100]."""
    n = n or int(rng.integers(1, n_max + 1))
    m = m or int(rng.integers(1, m_max + 1))
    a = rng.standard_normal((n, n))
    prior = GaussianBelief(rng.standard_normal(n), a @ a.T / n + 0.1 * np.eye(n))
    net = SensorNetwork(rng.standard_normal((m, n)), np.eye(m))
    moments = observation_moments(prior, net)
    gains = lambda: 10 ** rng.uniform(-1, 2, m)
    noise = (lambda: 10 ** rng.uniform(-0.5, 0.5, m)) if random_noise else (lambda: 1.0)
    return RelayProblem.from_moments(moments, gains(), gains(), noise(), noise(),
                                     direct_gain=gains(), network=net)


def random_budgets(rng) -> Budgets:
    return Budgets(float(10 ** rng.uniform(-1, 1)), float(10 ** rng.uniform(-0.5, 1.5)))


def random_feasible(rng, powers, budgets: Budgets) -> Allocation:
    m = powers.size
    fa = rng.dirichlet(np.ones(m)) * rng.uniform(0.05, 1.0)
    fb = rng.dirichlet(np.ones(m)) * rng.uniform(0.05, 1.0)
    return Allocation(fa * budgets.p_t / powers, fb * budgets.p_r)


@_timed
def check_form_equivalence(n_instances: int = 100, seed: int = 1) -> CheckResult:
    """Direct and phi-diagonal forms of the posterior covariance agree."""
    rng = np.random.default_rng(seed)
    worst, failures = 0.0, []
    for i in range(n_instances):
        prob = random_problem(rng, random_noise=True)
        m = prob.channel_count
        alloc = Allocation(10 ** rng.uniform(-2, 1, m), 10 ** rng.uniform(-2, 1, m))
        t1, c1 = posterior_mse(prob.moments, prob.spec, alloc, "phi")
        t2, c2 = posterior_mse(prob.moments, prob.spec, alloc, "direct")
        rel = abs(t1 - t2) / max(abs(t2), 1e-300)
        ent = np.max(np.abs(c1 - c2)) / max(np.max(np.abs(c2)), 1e-300)
        worst = max(worst, rel, ent)
        if rel > 1e-8 or ent > 1e-8:
            failures.append(_dump(instance=i, alpha=alloc.alpha, beta=alloc.beta, phi=t1, direct=t2))
    return CheckResult("form_equivalence", not failures,
                       f"{n_instances} instances, worst relative gap {worst:.2e} (tol 1e-8)",
                       failures=failures)


@_timed
def check_majorant(n_states: int = 20, n_allocs: int = 1000, seed: int = 2) -> CheckResult:
    """Majorant is tight at its expansion point and dominates the objective."""
    rng = np.random.default_rng(seed)
    worst_tight, worst_dom, failures = 0.0, np.inf, []
    for i in range(n_states):
        prob = random_problem(rng, m_max=8)
        budgets = random_budgets(rng)
        start = random_feasible(rng, prob.channel_powers, budgets)
        state = sca._evaluate(prob, start, 0)
        coeffs = prob.spec.coefficients
        tight = abs(sca.majorant_eval(state, start, coeffs) - state.objective) / max(state.objective, 1e-300)
        worst_tight = max(worst_tight, tight)
        if tight > 1e-12:
            failures.append(_dump(state=i, kind="tightness", gap=tight))
        for _ in range(n_allocs):
            alloc = random_feasible(rng, prob.channel_powers, budgets)
            maj = sca.majorant_eval(state, alloc, coeffs)
            true = prob.objective(alloc)
            gap = (maj - true) / max(1.0, abs(true))
            worst_dom = min(worst_dom, gap)
            if gap < -1e-10:
                failures.append(_dump(state=i, kind="dominance", alpha=alloc.alpha, beta=alloc.beta, gap=gap))
                break
    return CheckResult("majorant", not failures,
                       f"{n_states} states x {n_allocs} allocations, worst tightness {worst_tight:.1e}, "
                       f"worst dominance margin {worst_dom:.1e}", failures=failures)


@_timed
def check_descent(n_problems: int = 1000, m_max: int = 10, seed: int = 3) -> CheckResult:
    """Every trace descends monotonically, strictly before the stop, with tight budgets."""
    rng = np.random.default_rng(seed)
    converged, failures, worst_budget = 0, [], 0.0
    for i in range(n_problems):
        prob = random_problem(rng, m_max=m_max)
        budgets = random_budgets(rng)
        _, trace = sca.optimize(prob, budgets)
        obj = trace.objectives
        diffs = np.diff(obj)
        ok = bool(np.all(diffs <= 0) and np.all(diffs[:-1] < 0))
        for s in trace.states[1:]:
            gt = abs(s.alloc.sensor_power(prob.channel_powers) - budgets.p_t) / budgets.p_t
            gr = abs(s.alloc.relay_power() - budgets.p_r) / budgets.p_r
            worst_budget = max(worst_budget, gt, gr)
            ok = ok and gt <= 1e-8 and gr <= 1e-8
        converged += trace.converged and trace.iterations <= 200
        if not ok:
            failures.append(_dump(problem=i, objectives=obj))
    frac = converged / n_problems
    passed = not failures and frac >= 0.99
    return CheckResult("descent", passed,
                       f"{n_problems} problems, monotone violations {len(failures)}, "
                       f"converged {frac:.1%} (need 99%), worst budget gap {worst_budget:.1e}",
                       failures=failures)


def bisection_root(a, c, d, steps: int = 200):
    """Reference positive root of a x^3 - c x - d by plain bisection on [0, sqrt(c/a) + cbrt(d/a)]."""
    a, c, d = (np.asarray(v, dtype=float) for v in (a, c, d))
    lo = np.zeros_like(a)
    hi = np.sqrt(c / a) + np.cbrt(d / a)
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        pos = a * mid**3 - c * mid - d > 0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)
    return 0.5 * (lo + hi)


@_timed
def check_cubic(n: int = 10_000, seed: int = 4) -> CheckResult:
    """Scaled residual, positivity, uniqueness and agreement with bisection."""
    rng = np.random.default_rng(seed)
    a = 10 ** rng.uniform(-6, 6, n)
    c = 10 ** rng.uniform(-6, 6, n)
    d = 10 ** rng.uniform(-6, 6, n)
    c[rng.random(n) < 0.05] = 0.0
    d[(rng.random(n) < 0.05) & (c > 0)] = 0.0
    x = sca.cubic_positive_root(a, c, d)
    resid = np.abs(a * x**3 - c * x - d) / np.maximum(1.0, a * x**3)
    unique = (-d <= 0) & (3 * a * x**2 - c > 0)
    ref = bisection_root(a, c, d)
    agree = np.abs(x - ref) / ref
    bad = (resid > 1e-12) | ~(x > 0) | ~unique | (agree > 1e-10)
    failures = [_dump(a=a[i], c=c[i], d=d[i], x=x[i]) for i in np.flatnonzero(bad)[:20]]
    return CheckResult("cubic", not bad.any(),
                       f"{n} triples, max scaled residual {resid.max():.1e}, "
                       f"max bisection gap {agree.max():.1e}", failures=failures)


@_timed
def check_golden_search(n: int = 1000, seed: int = 5) -> CheckResult:
    """Both multiplier searches meet their budgets; closed-form cases are exact."""
    rng = np.random.default_rng(seed)
    worst, failures = 0.0, []
    for i in range(n):
        m = int(rng.integers(1, 31))
        vals = [10 ** rng.uniform(-4, 3, m) for _ in range(4)]
        for v in vals:
            v[rng.random(m) < 0.1] = 0.0
        for v_lin, v_const in ((0, 2), (1, 3)):
            both = (vals[v_lin] + vals[v_const]) == 0
            vals[v_lin][both] = 1.0
        coeffs = sca.MajorantCoeffs(*vals)
        powers = 10 ** rng.uniform(-1, 3, m)
        p_t, p_r = 10 ** rng.uniform(-2, 1), 10 ** rng.uniform(-1, 2)
        _, alpha = sca.golden_search_sensors(coeffs, powers, p_t)
        _, beta = sca.golden_search_relay(coeffs, p_r)
        gt = abs(powers @ alpha - p_t) / p_t
        gr = abs(beta.sum() - p_r) / p_r
        worst = max(worst, gt, gr)
        if gt > 1e-8 or gr > 1e-8:
            failures.append(_dump(case=i, a=coeffs.a, b=coeffs.b, c=coeffs.c, d=coeffs.d, powers=powers))
    exact = 0.0
    for i in range(200):
        m = int(rng.integers(1, 11))
        a, b, c, d = 10 ** rng.uniform(-3, 3, 4)
        y2 = 10 ** rng.uniform(-1, 3)
        p_t, p_r = 10 ** rng.uniform(-2, 1), 10 ** rng.uniform(-1, 2)
        coeffs = sca.MajorantCoeffs(*(np.full(m, v) for v in (a, b, c, d)))
        _, alpha = sca.golden_search_sensors(coeffs, np.full(m, y2), p_t)
        _, beta = sca.golden_search_relay(coeffs, p_r)
        exact = max(exact, np.max(np.abs(alpha * m * y2 / p_t - 1)), np.max(np.abs(beta * m / p_r - 1)))
    if exact > 1e-12:
        failures.append(_dump(kind="closed_form", gap=exact))
    return CheckResult("golden_search", not failures,
                       f"{n} random sets, worst budget gap {worst:.1e} (tol 1e-8); "
                       f"M=1/symmetric worst error {exact:.1e} (tol 1e-12)", failures=failures)


def random_scalar_m2(rng) -> tuple[RelayProblem, Budgets]:
    prior = GaussianBelief([rng.normal()], [[10 ** rng.uniform(-0.5, 0.5)]])
    net = SensorNetwork(rng.uniform(0.5, 2.0, (2, 1)), np.eye(2))
    moments = observation_moments(prior, net)
    prob = RelayProblem.from_moments(moments, 10 ** rng.uniform(-1, 2, 2), 10 ** rng.uniform(-1, 2, 2))
    return prob, random_budgets(rng)


@_timed
def check_grid_agreement(n: int = 50, resolution: int = 200, seed: int = 6) -> CheckResult:
    """Optimizer MSE within 0.5% of an exhaustive grid over both budget surfaces."""
    rng = np.random.default_rng(seed)
    worst, failures = 0.0, []
    for i in range(n):
        prob, budgets = random_scalar_m2(rng)
        alloc, _ = sca.optimize(prob, budgets)
        ours = prob.mse(alloc)
        _, grid = grid_search_mse(prob, budgets, GridSpec(resolution))
        gap = max(ours / grid - 1, grid / ours - 1)
        worst = max(worst, gap)
        if gap > 0.005:
            failures.append(_dump(instance=i, ours=ours, grid=grid, alpha=alloc.alpha, beta=alloc.beta))
    return CheckResult("grid_agreement", not failures,
                       f"{n} M=2 instances at {resolution}x{resolution}, worst gap {worst:.2%} (tol 0.5%)",
                       failures=failures)


@_timed
def check_end_to_end(n_scenarios: int = 10, samples: int = 100_000, seed: int = 7) -> CheckResult:
    """Simulated FC estimator error matches the analytic posterior trace within 3 SE."""
    rng = np.random.default_rng(seed)
    worst, failures = 0.0, []
    for i in range(n_scenarios):
        prob = random_problem(rng, random_noise=i % 2 == 1)
        budgets = random_budgets(rng)
        if i == 0:
            alloc = Allocation(np.zeros(prob.channel_count), np.zeros(prob.channel_count))
        elif i % 3 == 0:
            alloc = sca.uniform_allocation(prob.channel_powers, budgets)
        else:
            alloc, _ = sca.optimize(prob, budgets)
        analytic, _ = posterior_mse(prob.moments, prob.spec, alloc)
        emp, se = simulate_realization(prob, alloc, rng, samples)
        gap = abs(emp - analytic)
        z = gap / se if se > 0 else (0.0 if gap == 0 else np.inf)
        worst = max(worst, z)
        if z > 3:
            failures.append(_dump(scenario=i, analytic=analytic, empirical=emp, se=se))
    return CheckResult("end_to_end", not failures,
                       f"{n_scenarios} scenarios x {samples} samples, worst |z| {worst:.2f} (tol 3)",
                       failures=failures)


def _paired_monotone(mat: np.ndarray) -> tuple[bool, float]:
    """Mean MSE nonincreasing in budget at 3 sigma of the paired difference."""
    worst = -np.inf
    for k in range(mat.shape[1] - 1):
        diff = mat[:, k + 1] - mat[:, k]
        diff = diff[np.isfinite(diff)]
        se = np.std(diff, ddof=1) / np.sqrt(diff.size) if diff.size > 1 else 0.0
        worst = max(worst, np.mean(diff) - 3 * se)
    return worst <= 0, float(worst)


@_timed
def check_shape(trials: int = 500, seed: int = 0, workers: int = 1, scalar_sweep=None,
                vector_sweep=None) -> CheckResult:
    """Scalar: paired dominance and budget monotonicity. Vector: two-hop optimum is best."""
    scalar_cfg = ScenarioConfig(kind="scalar", trials=trials, seed=seed)
    vector_cfg = ScenarioConfig(kind="vector", trials=trials, seed=seed)
    s = scalar_sweep or run_sweep(scalar_cfg, METHODS, workers)
    v = vector_sweep or run_sweep(vector_cfg, METHODS, workers)
    grid = scalar_cfg.p_t_grid
    opt, uni = s.matrix("two_hop_opt", grid), s.matrix("two_hop_uniform", grid)
    violations = int(np.sum(opt > uni))
    mono = {m: _paired_monotone(s.matrix(m, grid)) for m in METHODS}
    mono_ok = all(ok for ok, _ in mono.values())
    means = {m: v.curve.series(m)[0] for m in METHODS}
    best = np.all([means["two_hop_opt"] < means[m] for m in METHODS if m != "two_hop_opt"])
    failures = []
    if violations:
        failures.append(_dump(kind="paired_dominance", violations=violations))
    if not mono_ok:
        failures.append(json.dumps({"kind": "monotone", "worst": {m: w for m, (_, w) in mono.items()}}))
    if not best:
        failures.append(json.dumps({"kind": "vector_ordering", "means": {m: x.tolist() for m, x in means.items()}}))
    detail = (f"{trials} trials: (a) dominance violations {violations}; "
              f"(b) monotone {'ok' if mono_ok else 'violated'}; "
              f"(c) vector two_hop_opt lowest at all budgets: {bool(best)}")
    res = CheckResult("shape", not failures, detail, failures=failures)
    res.scalar_csv, res.vector_csv = curve_csv(s.curve), curve_csv(v.curve)
    return res


QUICK = dict(
    form_equivalence=dict(n_instances=30),
    majorant=dict(n_states=5, n_allocs=200),
    descent=dict(n_problems=50),
    cubic=dict(n=2000),
    golden_search=dict(n=100),
    end_to_end=dict(n_scenarios=4, samples=20_000),
)

FULL = dict(
    form_equivalence=dict(n_instances=100),
    majorant=dict(n_states=20, n_allocs=1000),
    descent=dict(n_problems=1000),
    cubic=dict(n=10_000),
    golden_search=dict(n=1000),
    grid_agreement=dict(n=50, resolution=200),
    end_to_end=dict(n_scenarios=10, samples=100_000),
    shape=dict(trials=500),
)

CHECKS = {
    "form_equivalence": check_form_equivalence,
    "majorant": check_majorant,
    "descent": check_descent,
    "cubic": check_cubic,
    "golden_search": check_golden_search,
    "grid_agreement": check_grid_agreement,
    "end_to_end": check_end_to_end,
    "shape": check_shape,
}


def run_suite(full: bool = False) -> list[CheckResult]:
    """Run every check of the chosen scale; a check that raises is reported as failed."""
    plan = FULL if full else QUICK
    results = []
    for name, kw in plan.items():
        t0 = time.perf_counter()
        try:
            results.append(CHECKS[name](**kw))
        except Exception as exc:
            results.append(CheckResult(name, False, f"raised {type(exc).__name__}",
                                       time.perf_counter() - t0, [f"{type(exc).__name__}: {exc}"]))
    return results
