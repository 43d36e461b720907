import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from errors import RejectedInputError

logger = logging.getLogger(__name__)

SQRT6 = math.sqrt(6.0)


@dataclass(frozen=True)
class BoundInputs:
    """
    Problem and run constants feeding the bound calculators. A field left
    as None makes every bound that needs it come out absent (None).
    """
    lipschitz: float
    alpha: float = 1.0
    sigma: float = None
    d_psi: float = None
    d_tilde: float = None
    total_budget: int = None
    iterations: int = None
    batch_size: int = None
    stepsizes: tuple = None
    v_star_x1: float = None
    v_bar: float = None
    dim: int = None
    gradient_bound: float = None
    mu: float = None


@dataclass(frozen=True)
class TheoryBounds:
    pg_bound: float = None
    pg_general: float = None
    rspg_general: float = None
    rspg_relaxed_general: float = None
    rspg_stochastic_mapping: float = None
    rspg_true_mapping: float = None
    rspg_convex_gap: float = None
    rspg_nonconvex: float = None
    rspg_convex: float = None
    rspg_nonconvex_large_budget: float = None
    rspg_convex_large_budget: float = None
    convex_nondecreasing: float = None
    convex_nonincreasing: float = None
    sigma_tilde_sq: float = None
    theta1: float = None
    theta2: float = None
    rspgf_stochastic_mapping: float = None
    rspgf_true_mapping: float = None
    rspgf_convex_gap: float = None
    rspgf_nonconvex: float = None
    rspgf_convex: float = None
    rspgf_nonconvex_large_budget: float = None
    rspgf_convex_large_budget: float = None

    def as_dict(self):
        return asdict(self)


def _known(*values):
    return all(v is not None for v in values)


def _denominator(gammas, alpha, L, relaxed=False):
    factor = 0.5 if relaxed else 1.0
    return float(np.sum(alpha * gammas - factor * L * gammas ** 2))


def theta_factors(n, M, sigma, L, d_tilde, total_budget):
    theta1 = max(1.0, math.sqrt((n + 4) * (M ** 2 + sigma ** 2)) / (L * d_tilde * math.sqrt(total_budget)))
    theta2 = max(1.0, (n + 4) / total_budget)
    return theta1, theta2


def sigma_tilde_squared(n, M, sigma, mu, L):
    return 2.0 * (n + 4) * (M ** 2 + sigma ** 2 + mu ** 2 * L ** 2 * (n + 4) ** 2)


def large_budget_first_order(total_budget, sigma, L, d_tilde):
    return total_budget >= 3.0 * sigma ** 2 / (8.0 * L ** 2 * d_tilde ** 2)


def large_budget_zeroth_order(total_budget, n, M, sigma, L, d_tilde):
    return total_budget >= max((n + 4) ** 2 * (M ** 2 + sigma ** 2) / (L ** 2 * d_tilde ** 2), n + 4)


def compute_theory_bounds(inputs):
    """
    Evaluate every convergence bound whose constants are present in `inputs`.
    """
    L = inputs.lipschitz
    a = inputs.alpha
    sigma = inputs.sigma
    D = inputs.d_psi
    Dt = inputs.d_tilde
    Nbar = inputs.total_budget
    N = inputs.iterations
    m = inputs.batch_size
    V = inputs.v_star_x1
    n = inputs.dim
    M = inputs.gradient_bound
    mu = inputs.mu
    if not (L is not None and L > 0 and a > 0):
        raise RejectedInputError("Bounds need a positive Lipschitz constant and modulus")

    out = {}
    if _known(D, N):
        out["pg_bound"] = 2 * L ** 2 * D ** 2 / (a ** 2 * N)
    if _known(D, N, sigma, m):
        out["rspg_stochastic_mapping"] = 4 * L ** 2 * D ** 2 / (a ** 2 * N) + 2 * sigma ** 2 / (a ** 2 * m)
        out["rspg_true_mapping"] = 8 * L ** 2 * D ** 2 / (a ** 2 * N) + 6 * sigma ** 2 / (a ** 2 * m)
    if _known(V, N, sigma, m):
        out["rspg_convex_gap"] = 2 * L * V / (N * a) + sigma ** 2 / (2 * L * m)

    if inputs.stepsizes is not None:
        gammas = np.asarray(inputs.stepsizes, dtype=float)
        relaxed_den = _denominator(gammas, a, L, relaxed=True)
        strict_den = _denominator(gammas, a, L)
        if D is not None and relaxed_den > 0:
            out["pg_general"] = L * D ** 2 / relaxed_den
        if _known(D, sigma, m):
            noise = (sigma ** 2 / a) * float(np.sum(gammas / m))
            if strict_den > 0:
                out["rspg_general"] = (L * D ** 2 + noise) / strict_den
            if relaxed_den > 0:
                out["rspg_relaxed_general"] = (L * D ** 2 + noise) / relaxed_den
        if _known(sigma, m) and strict_den > 0:
            noise = (sigma ** 2 / 2) * float(np.sum(gammas ** 2 / m))
            if V is not None and np.all(np.diff(gammas) >= 0):
                out["convex_nondecreasing"] = ((a - L * gammas[0]) * V + noise) / strict_den
            if inputs.v_bar is not None and np.all(np.diff(gammas) <= 0):
                out["convex_nonincreasing"] = ((a - L * gammas[-1]) * inputs.v_bar + noise) / strict_den

    if _known(D, Dt, sigma, Nbar):
        clamp = max(1.0, SQRT6 * sigma / (4 * L * Dt * math.sqrt(Nbar)))
        out["rspg_nonconvex"] = (16 * L * D ** 2 / Nbar
                                 + 4 * SQRT6 * sigma / math.sqrt(Nbar) * (D ** 2 / Dt + Dt * clamp))
        out["rspg_nonconvex_large_budget"] = 16 * L * D ** 2 / Nbar + 8 * SQRT6 * D * sigma / math.sqrt(Nbar)
    if _known(V, Dt, sigma, Nbar):
        clamp = max(1.0, SQRT6 * sigma / (4 * L * Dt * math.sqrt(Nbar)))
        out["rspg_convex"] = (4 * L * V / (a * Nbar)
                              + SQRT6 * sigma / (a * math.sqrt(Nbar)) * (V / Dt + a * Dt / 3 * clamp))
        out["rspg_convex_large_budget"] = (4 * L * V / (a * Nbar)
                                           + 2 * math.sqrt(2 * V) * sigma / math.sqrt(a * Nbar))

    if _known(n, M, sigma, mu):
        st2 = sigma_tilde_squared(n, M, sigma, mu, L)
        out["sigma_tilde_sq"] = st2
        if _known(D, N, m):
            out["rspgf_stochastic_mapping"] = ((4 * L ** 2 * D ** 2 + 4 * mu ** 2 * L ** 2 * n) / (a ** 2 * N)
                                               + 2 * st2 / (a ** 2 * m))
            out["rspgf_true_mapping"] = (mu ** 2 * L ** 2 * (n + 3) ** 2 / (2 * a ** 2)
                                         + (16 * L ** 2 * D ** 2 + 16 * mu ** 2 * L ** 2 * n) / (a ** 2 * N)
                                         + 12 * st2 / (a ** 2 * m))
        if _known(V, N, m):
            out["rspgf_convex_gap"] = 2 * L * V / (N * a) + st2 / (2 * L * m) + mu ** 2 * L * n
    if _known(n, M, sigma, Dt, Nbar):
        theta1, theta2 = theta_factors(n, M, sigma, L, Dt, Nbar)
        out["theta1"] = theta1
        out["theta2"] = theta2
        spread = math.sqrt((n + 4) * (M ** 2 + sigma ** 2))
        if D is not None:
            out["rspgf_nonconvex"] = ((24 * theta2 + 41) * L * D ** 2 * (n + 4) / Nbar
                                      + 32 * spread / math.sqrt(Nbar) * (D ** 2 / Dt + Dt * theta1))
            out["rspgf_nonconvex_large_budget"] = (65 * L * D ** 2 * (n + 4) / Nbar
                                                   + 64 * D * spread / math.sqrt(Nbar))
        if V is not None:
            out["rspgf_convex"] = ((5 + theta2) * L * V * (n + 4) / (a * Nbar)
                                   + spread / (a * math.sqrt(Nbar)) * (4 * V / Dt + a * Dt * theta1))
            out["rspgf_convex_large_budget"] = (6 * L * V * (n + 4) / (a * Nbar)
                                                + 4 * math.sqrt(V * (n + 4) * (M ** 2 + sigma ** 2))
                                                / math.sqrt(a * Nbar))

    return TheoryBounds(**{k: (None if v is None else float(v)) for k, v in out.items()})


# (epsilon, Lambda)-solution parameters for the two-phase method

@dataclass(frozen=True)
class TwoPhaseParameters:
    runs: int
    total_budget: int
    post_samples: int
    light_tail: bool

    @property
    def total_calls(self):
        return self.runs * (self.total_budget + self.post_samples)


def _check_accuracy(epsilon, Lambda):
    if not epsilon > 0:
        raise RejectedInputError(f"epsilon must be positive, got {epsilon}")
    if not 0 < Lambda < 1:
        raise RejectedInputError(f"Lambda must lie in (0, 1), got {Lambda}")


def two_phase_runs(Lambda):
    """S(Lambda) = ceil(log2(2/Lambda))."""
    _check_accuracy(1.0, Lambda)
    return int(math.ceil(math.log2(2.0 / Lambda)))


def two_phase_budget(epsilon, L, d_psi, d_tilde, sigma, alpha=1.0):
    if not epsilon > 0:
        raise RejectedInputError(f"epsilon must be positive, got {epsilon}")
    terms = (
        512 * L ** 2 * d_psi ** 2 / (alpha ** 2 * epsilon),
        ((d_tilde + d_psi ** 2 / d_tilde) * 128 * SQRT6 * L * sigma / (alpha ** 2 * epsilon)) ** 2,
        3 * sigma ** 2 / (8 * L ** 2 * d_tilde ** 2),
    )
    return int(math.ceil(max(terms)))


def two_phase_sample_size(epsilon, Lambda, sigma, alpha=1.0):
    _check_accuracy(epsilon, Lambda)
    S = two_phase_runs(Lambda)
    return max(1, int(math.ceil(24 * S * sigma ** 2 / (alpha ** 2 * Lambda * epsilon))))


def light_tail_sample_size(epsilon, Lambda, sigma, alpha=1.0):
    _check_accuracy(epsilon, Lambda)
    S = two_phase_runs(Lambda)
    factor = (1 + math.sqrt(3 * math.log2(2 * S / Lambda))) ** 2
    return max(1, int(math.ceil(24 * sigma ** 2 / (alpha ** 2 * epsilon) * factor)))


def two_phase_parameters(epsilon, Lambda, L, d_psi, d_tilde, sigma, alpha=1.0, light_tail=False):
    if light_tail:
        T = light_tail_sample_size(epsilon, Lambda, sigma, alpha)
    else:
        T = two_phase_sample_size(epsilon, Lambda, sigma, alpha)
    return TwoPhaseParameters(
        runs=two_phase_runs(Lambda),
        total_budget=two_phase_budget(epsilon, L, d_psi, d_tilde, sigma, alpha),
        post_samples=T,
        light_tail=light_tail,
    )
