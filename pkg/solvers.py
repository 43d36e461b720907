import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from bounds import two_phase_parameters
from errors import ConfigError, RejectedInputError
from oracles import (
    OracleCounter,
    StreamPurpose,
    make_stream,
    minibatch_mean,
    minibatch_smoothed_mean,
)
from prox_geometry import gradient_mapping, prox_step

logger = logging.getLogger(__name__)

DEFAULT_RUNS = 5


@dataclass(frozen=True)
class StepsizePolicy:
    """Either a constant gamma or an explicit schedule gamma_1..gamma_N."""
    gamma: float = None
    schedule: tuple = None

    @classmethod
    def constant(cls, gamma):
        return cls(gamma=float(gamma))

    @classmethod
    def from_schedule(cls, gammas):
        return cls(schedule=tuple(float(g) for g in gammas))

    def stepsizes(self, N):
        if self.schedule is not None:
            if len(self.schedule) < N:
                raise ConfigError(f"Stepsize schedule has {len(self.schedule)} entries, need {N}")
            return np.asarray(self.schedule[:N], dtype=float)
        return np.full(N, self.gamma, dtype=float)


@dataclass(frozen=True)
class SolverConfig:
    total_budget: int
    lipschitz: float
    alpha: float = 1.0
    sigma: float = 0.0
    d_tilde: float = 1.0
    stepsize: StepsizePolicy = None
    relaxed_pr: bool = False
    master_seed: int = 0
    batch_size: int = None
    gradient_bound: float = 0.0
    mu: float = None
    convex: bool = False
    v_star_x1: float = None
    record_trajectory: bool = True

    def __post_init__(self):
        if int(self.total_budget) != self.total_budget or self.total_budget < 1:
            raise ConfigError(f"Total oracle budget must be a positive integer, got {self.total_budget}")
        if not self.lipschitz > 0:
            raise ConfigError(f"Lipschitz constant must be positive, got {self.lipschitz}")
        if not self.alpha > 0:
            raise ConfigError(f"Modulus alpha must be positive, got {self.alpha}")
        if self.sigma < 0:
            raise ConfigError(f"sigma must be nonnegative, got {self.sigma}")
        if not self.d_tilde > 0:
            raise ConfigError(f"d_tilde must be positive, got {self.d_tilde}")

    def stepsizes(self, N):
        policy = self.stepsize or StepsizePolicy.constant(self.alpha / (2.0 * self.lipschitz))
        return policy.stepsizes(N)


def validate_stepsizes(gammas, limit):
    gammas = np.asarray(gammas, dtype=float)
    if gammas.size == 0:
        raise ConfigError("Empty stepsize sequence")
    if np.any(~np.isfinite(gammas)) or np.any(gammas <= 0) or np.any(gammas > limit):
        raise ConfigError(f"Stepsizes must lie in (0, {limit:.6g}]")
    if not np.any(gammas < limit):
        raise ConfigError(f"At least one stepsize must be strictly below {limit:.6g}")
    return gammas


@dataclass(frozen=True, eq=False)
class TerminationLaw:
    weights: np.ndarray

    @classmethod
    def from_stepsizes(cls, gammas, alpha, L, relaxed=False):
        """P_R(k) proportional to alpha*gamma_k - L*gamma_k^2 (halved quadratic term when relaxed)."""
        limit = 2 * alpha / L if relaxed else alpha / L
        gammas = validate_stepsizes(gammas, limit)
        factor = 0.5 if relaxed else 1.0
        raw = np.maximum(alpha * gammas - factor * L * gammas ** 2, 0.0)
        total = raw.sum()
        if not total > 0:
            raise ConfigError("Termination law has all weights zero")
        if np.all(raw == raw[0]):
            return cls(np.full(raw.size, 1.0 / raw.size))
        return cls(raw / total)

    def sample(self, rng, size=None):
        """1-based draws of R."""
        draws = rng.choice(self.weights.size, size=size, p=self.weights)
        if size is None:
            return int(draws) + 1
        return np.asarray(draws, dtype=int) + 1


def termination_law(config, N):
    if int(N) != N or N < 1:
        raise ConfigError(f"Iteration limit must be a positive integer, got {N}")
    return TerminationLaw.from_stepsizes(config.stepsizes(int(N)), config.alpha, config.lipschitz,
                                         relaxed=config.relaxed_pr)


@dataclass(eq=False)
class SolverRun:
    algorithm: str
    output_x: np.ndarray
    random_index: int
    iterations: int
    batch_size: int
    output_gamma: float
    trajectory: list = None
    sfo_calls: int = 0
    szo_calls: int = 0
    post_calls: int = 0
    per_iteration_mapping_norms: np.ndarray = None
    output_mapping_norm_sq: float = None
    phase_metadata: dict = field(default_factory=dict)


def rspg_batch_size(total_budget, sigma, L, d_tilde):
    if total_budget < 1 or not L > 0 or not d_tilde > 0 or sigma < 0:
        raise RejectedInputError("rspg_batch_size needs N̄ >= 1, L > 0, d_tilde > 0, sigma >= 0")
    inner = sigma * math.sqrt(6 * total_budget) / (4 * L * d_tilde)
    return int(math.ceil(min(max(1.0, inner), total_budget)))


def rspgf_batch_size(total_budget, n, M, sigma, L, d_tilde):
    if total_budget < 1 or n < 1 or not L > 0 or not d_tilde > 0 or M < 0 or sigma < 0:
        raise RejectedInputError("rspgf_batch_size needs positive budget, dimension, L and d_tilde")
    inner = math.sqrt((n + 4) * (M ** 2 + sigma ** 2) * total_budget) / (L * d_tilde)
    return int(math.ceil(min(max(inner, n + 4), total_budget)))


def rspgf_smoothing_mu(d_psi_or_v, n, total_budget, convex, alpha=1.0):
    """Largest admissible smoothing parameter."""
    if not (d_psi_or_v > 0 and n >= 1 and total_budget >= 1 and alpha > 0):
        raise RejectedInputError("rspgf_smoothing_mu needs positive inputs")
    if convex:
        return math.sqrt(d_psi_or_v / (alpha * (n + 4) * total_budget))
    return d_psi_or_v / math.sqrt((n + 4) * total_budget)


def _plan(config, default_batch):
    m = config.batch_size if config.batch_size is not None else default_batch
    if m > config.total_budget:
        raise ConfigError(f"Budget {config.total_budget} cannot pay for one batch of {m}")
    return int(m), config.total_budget // int(m)


def _trace(problem, geometry, config, estimator, gammas, steps, stream_key, keep_all):
    """
    Run `steps` prox updates from x1 with per-iteration streams. Returns the
    list of visited points (x1 first) and the squared mapping norms.
    """
    x = np.asarray(problem.x1, dtype=float).copy()
    points = [x]
    norms = []
    for k in range(1, steps + 1):
        rng = make_stream(config.master_seed, StreamPurpose.ITERATION, *stream_key, k)
        g = estimator(x, rng)
        step = prox_step(geometry, problem.feasible_set, problem.simple_term, x, g, gammas[k - 1])
        norms.append(geometry.norm(step.mapping) ** 2)
        x = step.x_plus
        if keep_all:
            points.append(x)
        else:
            points[-1] = x
    return points, np.asarray(norms, dtype=float)


def pg_solve(problem, geometry, config, N):
    """
    Deterministic projected gradient for N steps; returns the iterate with the
    smallest gradient-mapping norm.
    """
    if problem.exact_gradient is None:
        raise ConfigError(f"PG needs an exact gradient; problem {problem.name} has none")
    if int(N) != N or N < 1:
        raise ConfigError(f"Iteration count must be a positive integer, got {N}")
    N = int(N)
    gammas = validate_stepsizes(config.stepsizes(N), 2 * config.alpha / config.lipschitz)

    x = np.asarray(problem.x1, dtype=float).copy()
    trajectory = [x]
    norms = np.empty(N)
    objectives = []
    for k in range(N):
        step = prox_step(geometry, problem.feasible_set, problem.simple_term, x,
                         problem.exact_gradient(x), gammas[k])
        norms[k] = geometry.norm(step.mapping) ** 2
        if problem.exact_objective is not None:
            objectives.append(problem.psi(x))
        if k < N - 1:
            x = step.x_plus
            trajectory.append(x)
    best = int(np.argmin(norms))
    logger.debug(f"PG finished {N} steps, R={best + 1}, |g_X|^2={norms[best]:.3e}")
    return SolverRun(
        algorithm="PG",
        output_x=trajectory[best],
        random_index=best + 1,
        iterations=N,
        batch_size=1,
        output_gamma=float(gammas[best]),
        trajectory=trajectory if config.record_trajectory else None,
        sfo_calls=N,
        per_iteration_mapping_norms=norms,
        output_mapping_norm_sq=float(norms[best]),
        phase_metadata={"objectives": objectives},
    )


def rspg_solve(problem, geometry, config, stream_key=()):
    """
    Randomized stochastic projected gradient. R is drawn before the first
    oracle call and only iterations 1..R-1 query the oracle.
    """
    m, N = _plan(config, rspg_batch_size(config.total_budget, config.sigma, config.lipschitz, config.d_tilde))
    law = termination_law(config, N)
    gammas = config.stepsizes(N)
    R = law.sample(make_stream(config.master_seed, StreamPurpose.TERMINATION, *stream_key))

    counter = OracleCounter()

    def estimator(x, rng):
        return minibatch_mean(problem.sfo, x, m, rng, counter).mean_gradient

    points, norms = _trace(problem, geometry, config, estimator, gammas, R - 1, stream_key,
                           config.record_trajectory)
    return SolverRun(
        algorithm="RSPG",
        output_x=points[-1],
        random_index=R,
        iterations=N,
        batch_size=m,
        output_gamma=float(gammas[R - 1]),
        trajectory=points if config.record_trajectory else None,
        sfo_calls=counter.sfo_calls,
        per_iteration_mapping_norms=norms,
    )


def post_select(candidates, problem, geometry, T, gamma_list, rng, counter=None):
    """
    Score every candidate by the norm of its T-sample gradient mapping and
    return the first minimizer with all scores.
    """
    if not candidates:
        raise RejectedInputError("post_select needs at least one candidate")
    if int(T) != T or T < 1:
        raise RejectedInputError(f"Post-selection sample size must be a positive integer, got {T}")
    if len(gamma_list) != len(candidates):
        raise RejectedInputError("One stepsize per candidate is required")
    scores = np.empty(len(candidates))
    for s, (x, gamma) in enumerate(zip(candidates, gamma_list)):
        batch = minibatch_mean(problem.sfo, x, int(T), rng, counter, channel="post")
        mapping = gradient_mapping(geometry, problem.feasible_set, problem.simple_term,
                                   x, batch.mean_gradient, gamma)
        scores[s] = geometry.norm(mapping)
    return candidates[int(np.argmin(scores))], scores


def _default_post_samples(N):
    return max(1, N // 2)


def two_phase_rspg(problem, geometry, config, S=DEFAULT_RUNS, T=None, light_tail=False,
                   accuracy=None, stream_key=(), executor=None):
    """
    S independent RSPG runs followed by post-selection. With
    `accuracy=(epsilon, Lambda)` the run count, per-run budget and sample size
    come from the (epsilon, Lambda)-solution formulas instead.
    """
    if accuracy is not None:
        epsilon, Lambda = accuracy
        params = two_phase_parameters(epsilon, Lambda, config.lipschitz, config.d_tilde, config.d_tilde,
                                      config.sigma, config.alpha, light_tail=light_tail)
        S, T = params.runs, params.post_samples
        config = replace(config, total_budget=params.total_budget)
        logger.info(f"Two-phase parameters for eps={epsilon}, Lambda={Lambda}: "
                    f"S={S}, N̄={params.total_budget}, T={T}")
    if int(S) != S or S < 1:
        raise ConfigError(f"Number of runs must be a positive integer, got {S}")
    S = int(S)

    # 1. Optimization phase
    def one_run(s):
        return rspg_solve(problem, geometry, config, stream_key=tuple(stream_key) + (s,))

    if executor is not None:
        runs = list(executor.map(one_run, range(S)))
    else:
        runs = [one_run(s) for s in range(S)]

    # 2. Post-optimization phase
    if T is None:
        T = _default_post_samples(runs[0].iterations)
    counter = OracleCounter()
    rng = make_stream(config.master_seed, StreamPurpose.POST_SELECTION, *stream_key)
    candidates = [run.output_x for run in runs]
    x_star, scores = post_select(candidates, problem, geometry, T,
                                 [run.output_gamma for run in runs], rng, counter)
    chosen = runs[int(np.argmin(scores))]
    return SolverRun(
        algorithm="2-RSPG",
        output_x=x_star,
        random_index=chosen.random_index,
        iterations=chosen.iterations,
        batch_size=chosen.batch_size,
        output_gamma=chosen.output_gamma,
        trajectory=chosen.trajectory,
        sfo_calls=sum(run.sfo_calls for run in runs),
        post_calls=counter.post_calls,
        per_iteration_mapping_norms=chosen.per_iteration_mapping_norms,
        phase_metadata={
            "candidates": candidates,
            "scores": scores,
            "selected": int(np.argmin(scores)),
            "post_samples": int(T),
            "runs": runs,
        },
    )


def two_phase_rspg_v(problem, geometry, config, S=DEFAULT_RUNS, T=None, stream_key=()):
    """
    One RSPG trajectory, then S indices drawn i.i.d. from the termination law
    and post-selection among those iterates. The batch is sized for a budget of
    NS/S, so the single trajectory runs S times as many iterations as one
    2-RSPG run.
    """
    if int(S) != S or S < 1:
        raise ConfigError(f"Number of runs must be a positive integer, got {S}")
    per_run = config.total_budget // int(S)
    if per_run < 1:
        raise ConfigError(f"Budget {config.total_budget} is smaller than the run count {S}")
    m, N = _plan(config, rspg_batch_size(per_run, config.sigma, config.lipschitz, config.d_tilde))
    law = termination_law(config, N)
    gammas = config.stepsizes(N)
    counter = OracleCounter()

    def estimator(x, rng):
        return minibatch_mean(problem.sfo, x, m, rng, counter).mean_gradient

    points, norms = _trace(problem, geometry, config, estimator, gammas, N - 1, stream_key, True)
    indices = law.sample(make_stream(config.master_seed, StreamPurpose.CANDIDATES, *stream_key), size=int(S))
    candidates = [points[k - 1] for k in indices]
    if T is None:
        T = _default_post_samples(N)
    rng = make_stream(config.master_seed, StreamPurpose.POST_SELECTION, *stream_key)
    x_star, scores = post_select(candidates, problem, geometry, T,
                                 [float(gammas[k - 1]) for k in indices], rng, counter)
    selected = int(np.argmin(scores))
    R = int(indices[selected])
    return SolverRun(
        algorithm="2-RSPG-V",
        output_x=x_star,
        random_index=R,
        iterations=N,
        batch_size=m,
        output_gamma=float(gammas[R - 1]),
        trajectory=points,
        sfo_calls=counter.sfo_calls,
        post_calls=counter.post_calls,
        per_iteration_mapping_norms=norms,
        phase_metadata={
            "candidates": candidates,
            "candidate_indices": [int(k) for k in indices],
            "scores": scores,
            "selected": selected,
            "post_samples": int(T),
        },
    )


def rspgf_solve(problem, geometry, config, stream_key=()):
    """
    Zeroth-order RSPG: the mini-batch gradient is replaced by Gaussian-smoothed
    difference quotients. Uses the same termination law and streams as RSPG.
    """
    if problem.szo is None:
        raise ConfigError(f"RSPGF needs a zeroth-order oracle; problem {problem.name} has none")
    n = problem.dim
    default_m = rspgf_batch_size(config.total_budget, n, config.gradient_bound, config.sigma,
                                 config.lipschitz, config.d_tilde)
    m, N = _plan(config, default_m)
    mu = config.mu
    if mu is None:
        scale = config.v_star_x1 if config.convex and config.v_star_x1 is not None else config.d_tilde
        mu = rspgf_smoothing_mu(scale, n, config.total_budget, config.convex, config.alpha)
    law = termination_law(config, N)
    gammas = config.stepsizes(N)
    R = law.sample(make_stream(config.master_seed, StreamPurpose.TERMINATION, *stream_key))

    counter = OracleCounter()

    def estimator(x, rng):
        return minibatch_smoothed_mean(problem.szo, x, mu, m, rng, counter).mean_gradient

    points, norms = _trace(problem, geometry, config, estimator, gammas, R - 1, stream_key,
                           config.record_trajectory)
    return SolverRun(
        algorithm="RSPGF",
        output_x=points[-1],
        random_index=R,
        iterations=N,
        batch_size=m,
        output_gamma=float(gammas[R - 1]),
        trajectory=points if config.record_trajectory else None,
        szo_calls=counter.szo_calls,
        per_iteration_mapping_norms=norms,
        phase_metadata={"mu": mu},
    )


def stochastic_output_mapping(problem, geometry, run, master_seed=0, stream_key=()):
    """
    Squared norm of P_X(x_R, G_R, gamma_R) with G_R a fresh batch of the run's
    own size at the output point.
    """
    rng = make_stream(master_seed, StreamPurpose.OUTPUT_MAPPING, *stream_key)
    batch = minibatch_mean(problem.sfo, run.output_x, run.batch_size, rng)
    mapping = gradient_mapping(geometry, problem.feasible_set, problem.simple_term,
                               run.output_x, batch.mean_gradient, run.output_gamma)
    return geometry.norm(mapping) ** 2
