import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats

from bounds import BoundInputs, compute_theory_bounds, two_phase_runs
from oracles import smoothed_value_mc
from problems import build_problem, gen_quadratic
from prox_geometry import FeasibleSet, Geometry, SimpleTerm, prox_step
from solvers import (
    SolverConfig,
    StepsizePolicy,
    pg_solve,
    rspg_batch_size,
    rspg_solve,
    rspgf_batch_size,
    rspgf_smoothing_mu,
    rspgf_solve,
    stochastic_output_mapping,
    termination_law,
    two_phase_rspg,
    two_phase_rspg_v,
)

logger = logging.getLogger(__name__)

TOL = 1e-8
CHI_SQUARE_LEVEL = 1e-3


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _random_prox_case(rng, kind, n):
    if kind == "euclidean_l1":
        geometry, fs, h = Geometry.euclidean(), FeasibleSet.all_space(), SimpleTerm.l1(rng.uniform(0, 1))
        x = rng.standard_normal(n)
    elif kind == "euclidean_box":
        geometry, fs, h = Geometry.euclidean(), FeasibleSet.box(-np.ones(n), np.ones(n)), SimpleTerm.zero()
        x = rng.uniform(-1, 1, n)
    else:
        geometry, fs, h = Geometry.entropy_simplex(), FeasibleSet.simplex(), SimpleTerm.zero()
        x = rng.dirichlet(np.ones(n))
    return geometry, fs, h, x


def check_prox_properties(seed=0, instances=300):
    """
    <g, P> >= alpha |P|^2 + (h(x+) - h(x))/gamma and
    |P(x, g1) - P(x, g2)| <= |g1 - g2|_* / alpha on random instances.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for kind in ("euclidean_l1", "euclidean_box", "entropy"):
        for _ in range(instances):
            n = int(rng.integers(1, 8))
            geometry, fs, h, x = _random_prox_case(rng, kind, n)
            g1, g2 = rng.standard_normal(n) * 3, rng.standard_normal(n) * 3
            gamma = float(rng.uniform(0.05, 2.0))
            p1 = prox_step(geometry, fs, h, x, g1, gamma)
            p2 = prox_step(geometry, fs, h, x, g2, gamma)
            a = geometry.modulus_alpha
            descent = (a * geometry.norm(p1.mapping) ** 2
                       + (h.value(p1.x_plus) - h.value(x)) / gamma - float(g1 @ p1.mapping))
            lipschitz = geometry.norm(p1.mapping - p2.mapping) - geometry.dual_norm(g1 - g2) / a
            worst = max(worst, descent, lipschitz)
    return CheckResult("prox properties", worst <= TOL, f"largest violation {worst:.3e}")


def check_pg_bound(seed=0, max_iterations=100):
    problem = gen_quadratic(10, diag=np.linspace(0.5, 1.0, 10), x1=np.zeros(10), rng=np.random.default_rng(seed))
    geometry = Geometry.euclidean()
    L = problem.lipschitz
    config = SolverConfig(total_budget=max_iterations, lipschitz=L, stepsize=StepsizePolicy.constant(1.0 / L))
    run = pg_solve(problem, geometry, config, max_iterations)
    best = np.minimum.accumulate(run.per_iteration_mapping_norms)
    D = problem.d_psi()
    bound = 2 * L ** 2 * D ** 2 / np.arange(1, max_iterations + 1)
    excess = float(np.max(best - bound * (1 + 1e-12)))
    return CheckResult("PG bound", excess <= 0, f"max(|g_R|^2 - bound) = {excess:.3e}")


def check_termination_law(seed=0, draws=20_000):
    rng = np.random.default_rng(seed)
    details = []
    passed = True
    schedule = StepsizePolicy.from_schedule(np.linspace(0.1, 0.9, 8))
    for label, stepsize in (("constant", None), ("schedule", schedule)):
        config = SolverConfig(total_budget=8, lipschitz=1.0, stepsize=stepsize)
        law = termination_law(config, 8)
        sample = law.sample(rng, size=draws)
        observed = np.bincount(sample - 1, minlength=8)
        expected = law.weights * draws
        support = expected > 0
        p_value = stats.chisquare(observed[support], expected[support]).pvalue
        passed &= p_value > CHI_SQUARE_LEVEL and observed[~support].sum() == 0
        details.append(f"{label} p={p_value:.3g}")
    return CheckResult("termination law", bool(passed), ", ".join(details))


def check_parameter_formulas():
    expected = {
        "rspg_batch_size": (rspg_batch_size(1000, 1.0, 1.0, 1.0), 20),
        "rspg_batch_size sigma=0": (rspg_batch_size(1000, 0.0, 1.0, 1.0), 1),
        "rspgf_batch_size": (rspgf_batch_size(100, 4, 1.0, 0.0, 1.0, 1.0), 29),
        "smoothing mu": (round(rspgf_smoothing_mu(1.0, 6, 10, convex=False), 12), 0.1),
        "runs S(0.5)": (two_phase_runs(0.5), 2),
        "B_N": (compute_theory_bounds(BoundInputs(lipschitz=1.0, sigma=0.0, d_psi=1.0, d_tilde=1.0,
                                                  total_budget=16)).rspg_nonconvex, 1.0),
    }
    wrong = [f"{name}: {got} != {want}" for name, (got, want) in expected.items() if got != want]
    return CheckResult("parameter formulas", not wrong, "; ".join(wrong) or f"{len(expected)} values")


def check_smoothing_identity(seed=0, samples=200_000, mu=0.5):
    rng = np.random.default_rng(seed)
    n = 5
    diag = rng.uniform(0.5, 2.0, n)

    def f_eval(points):
        return 0.5 * np.sum(points ** 2 * diag, axis=-1)

    x = rng.standard_normal(n)
    estimate, stderr = smoothed_value_mc(f_eval, x, mu, samples, rng, vectorized=True, return_stderr=True)
    target = f_eval(x) + 0.5 * mu ** 2 * diag.sum()
    gap = abs(estimate - target)
    return CheckResult("smoothing identity", gap <= 3 * stderr, f"|MC - closed form| = {gap:.3e}, SE = {stderr:.3e}")


def agreement_problem(n=3):
    return gen_quadratic(n, x_star=np.arange(1.0, n + 1), x1=np.zeros(n))


def check_zeroth_first_agreement(seed=0, iterations=40, batch_size=50, mu=1e-6):
    problem = agreement_problem()
    geometry = Geometry.euclidean()
    gammas = [1.0] * (iterations - 1) + [0.5]
    config = SolverConfig(total_budget=iterations * batch_size, lipschitz=1.0, batch_size=batch_size,
                          stepsize=StepsizePolicy.from_schedule(gammas), mu=mu, master_seed=seed)
    first = rspg_solve(problem, geometry, config)
    zeroth = rspgf_solve(problem, geometry, config)
    norms = [np.linalg.norm(problem.exact_gradient(run.output_x)) for run in (first, zeroth)]
    gap = abs(norms[0] - norms[1])
    return CheckResult("zeroth/first agreement", gap <= 1e-3, f"|difference| = {gap:.3e}")


def check_rspg_expectation(seed=0, replications=100, n=10, noise_std=0.3, total_budget=500):
    problem = gen_quadratic(n, noise_std=noise_std, diag=np.linspace(0.5, 1.0, n), x1=np.zeros(n),
                            rng=np.random.default_rng(seed))
    geometry = Geometry.euclidean()
    L = problem.lipschitz
    sigma = noise_std * np.sqrt(n)
    D = problem.d_psi()
    config = SolverConfig(total_budget=total_budget, lipschitz=L, sigma=sigma, d_tilde=D,
                          master_seed=seed, record_trajectory=False)
    values = []
    m = N = None
    for rep in range(replications):
        run = rspg_solve(problem, geometry, config, stream_key=(rep,))
        m, N = run.batch_size, run.iterations
        values.append(stochastic_output_mapping(problem, geometry, run, seed, (rep,)))
    bound = compute_theory_bounds(BoundInputs(lipschitz=L, sigma=sigma, d_psi=D, iterations=N,
                                              batch_size=m)).rspg_stochastic_mapping
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / np.sqrt(replications))
    return CheckResult("RSPG expectation", mean <= bound + 3 * se,
                       f"mean {mean:.4g} vs bound {bound:.4g} (+3 SE {3 * se:.2g})")


def check_s3vm_constraint(seed=0, n=20, budget=600):
    problem = build_problem("s3vm", n, seed=seed)
    geometry = Geometry.euclidean()
    lo, hi = problem.data.bias_interval
    config = SolverConfig(total_budget=budget, lipschitz=4.0, sigma=1.0, d_tilde=1.0, master_seed=seed)
    runs = [
        rspg_solve(problem, geometry, config),
        two_phase_rspg(problem, geometry, config, S=3),
        two_phase_rspg_v(problem, geometry, config, S=3),
        rspgf_solve(problem, geometry, config),
    ]
    worst = -np.inf
    for run in runs:
        points = list(run.trajectory) + [run.output_x]
        for sub in run.phase_metadata.get("runs", []):
            points.extend(sub.trajectory)
        worst = max(worst, max(max(lo - p[-1], p[-1] - hi) for p in points))
    return CheckResult("S3VM bias interval", worst <= 1e-12, f"largest excursion {worst:.3e}")


CHECKS = (
    check_prox_properties,
    check_pg_bound,
    check_termination_law,
    check_parameter_formulas,
    check_smoothing_identity,
    check_zeroth_first_agreement,
    check_rspg_expectation,
    check_s3vm_constraint,
)


def run_checks(seed=0):
    results = []
    for check in CHECKS:
        try:
            result = check() if check is check_parameter_formulas else check(seed=seed)
        except Exception as e:
            logger.error(f"{check.__name__} raised: {e}")
            result = CheckResult(check.__name__, False, f"raised {type(e).__name__}: {e}")
        logger.debug(f"{result.name}: {'PASS' if result.passed else 'FAIL'} ({result.detail})")
        results.append(result)
    return results
