import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from errors import RejectedInputError
from oracles import (
    DEFAULT_PILOT_SAMPLES,
    AdditiveNoiseOracle,
    FirstOrderOracle,
    FunctionValueOracle,
    StreamPurpose,
    ZerothOrderOracle,
    make_stream,
    minibatch_mean,
    variance_estimate,
)
from prox_geometry import FeasibleSet, GeometryKind, SimpleTerm, bregman_divergence, gradient_mapping

logger = logging.getLogger(__name__)

# Least squares with the smoothed SCAD penalty
SCAD_A = 3.7
SCAD_LAMBDA = 0.01
DATA_SPARSITY = 0.05
TRUE_DENSITY = 0.1
START_DENSITY = 0.1
START_SCALE = 5.0
DEFAULT_NOISE = 0.1

# Semi-supervised SVM
S3VM_WEIGHTS = (1.0, 0.5, 0.5)
S3VM_DELTA = 0.1
LABEL_POOL_SIZE = 10_000

# Pilot estimation and evaluation
LIPSCHITZ_SAFETY = 1.5
PILOT_POINTS = 5
PILOT_RADIUS = 0.1
EVAL_SAMPLES = 75_000
EVAL_CHUNK = 5_000
ZERO_THRESHOLD = 0.02

PROBLEM_KINDS = ("least_squares", "s3vm", "quadratic")


@dataclass(frozen=True)
class ScadParams:
    a: float = SCAD_A
    lam: float = SCAD_LAMBDA

    def __post_init__(self):
        if not self.a > 2:
            raise RejectedInputError(f"SCAD parameter a must exceed 2, got {self.a}")
        if not self.lam > 0:
            raise RejectedInputError(f"SCAD parameter lambda must be positive, got {self.lam}")


def _check_beta(beta):
    beta = np.asarray(beta, dtype=float)
    if np.any(beta < 0):
        raise RejectedInputError("SCAD surrogate is defined for beta >= 0; pass |x_j|")
    return beta


def scad_smooth_derivative(beta, params=ScadParams()):
    """
    q'(beta) = beta for beta <= lambda, max(0, a*lambda - beta)/(a - 1) beyond.
    Works elementwise on arrays.
    """
    beta = _check_beta(beta)
    a, lam = params.a, params.lam
    out = np.where(beta <= lam, beta, np.maximum(0.0, a * lam - beta) / (a - 1))
    return float(out) if out.ndim == 0 else out


def scad_smooth_value(beta, params=ScadParams()):
    """Antiderivative of scad_smooth_derivative with q(0) = 0."""
    beta = _check_beta(beta)
    a, lam = params.a, params.lam
    knee = a * lam
    inner = np.minimum(beta, knee)
    middle = lam ** 2 / 2 + (knee * (inner - lam) - (inner ** 2 - lam ** 2) / 2) / (a - 1)
    out = np.where(beta <= lam, beta ** 2 / 2, middle)
    return float(out) if out.ndim == 0 else out


def _sparse_normal(rng, shape, density):
    mask = rng.random(shape) < density
    return np.where(mask, rng.standard_normal(shape), 0.0)


@dataclass(frozen=True, eq=False)
class LsqInstance:
    n: int
    x_true: np.ndarray
    sparsity: float
    noise_sigma: float
    x1: np.ndarray
    scad: ScadParams

    def penalty_value(self, x):
        return float(np.sum(scad_smooth_value(np.abs(x), self.scad)))

    def penalty_gradient(self, x):
        return scad_smooth_derivative(np.abs(x), self.scad) * np.sign(x)

    def objective(self, x):
        d = x - self.x_true
        return self.sparsity * float(d @ d) + self.noise_sigma ** 2 + self.penalty_value(x)

    def gradient(self, x):
        return 2 * self.sparsity * (x - self.x_true) + self.penalty_gradient(x)


class LeastSquaresOracle(FirstOrderOracle, ZerothOrderOracle):
    """
    Samples (u, v) with u sparse normal and v = <x_true, u> + xi. The penalty
    part is deterministic and added exactly to every sample.
    """

    def __init__(self, instance):
        self.instance = instance
        self.true_gradient = instance.gradient

    def _draw(self, m, rng):
        inst = self.instance
        U = _sparse_normal(rng, (m, inst.n), inst.sparsity)
        v = U @ inst.x_true
        if inst.noise_sigma > 0:
            v = v + inst.noise_sigma * rng.standard_normal(m)
        return U, v

    def sample_gradients(self, x, m, rng):
        U, v = self._draw(m, rng)
        residual = U @ x - v
        return 2 * residual[:, None] * U + self.instance.penalty_gradient(x)

    def sample_values(self, x, m, rng):
        U, v = self._draw(m, rng)
        return (U @ x - v) ** 2 + self.instance.penalty_value(x)

    def sample_value_pairs(self, points, base, rng):
        points = np.atleast_2d(points)
        U, v = self._draw(points.shape[0], rng)
        shifted = (np.einsum("ij,ij->i", U, points) - v) ** 2
        shifted = shifted + np.array([self.instance.penalty_value(p) for p in points])
        at_base = (U @ base - v) ** 2 + self.instance.penalty_value(base)
        return shifted, at_base


def gen_least_squares(n, sparsity=DATA_SPARSITY, noise_sigma=DEFAULT_NOISE, scad=ScadParams(), rng=None):
    if n < 1:
        raise RejectedInputError(f"Dimension must be positive, got {n}")
    if not 0 < sparsity <= 1:
        raise RejectedInputError(f"Sparsity must lie in (0, 1], got {sparsity}")
    if noise_sigma < 0:
        raise RejectedInputError(f"Noise level must be nonnegative, got {noise_sigma}")
    rng = rng if rng is not None else np.random.default_rng()
    x_true = _sparse_normal(rng, n, TRUE_DENSITY)
    x1 = START_SCALE * _sparse_normal(rng, n, START_DENSITY)
    instance = LsqInstance(n=n, x_true=x_true, sparsity=float(sparsity), noise_sigma=float(noise_sigma),
                           x1=x1, scad=scad)
    oracle = LeastSquaresOracle(instance)
    return instance, oracle, oracle


@dataclass(frozen=True, eq=False)
class S3vmInstance:
    n: int
    x_true: np.ndarray
    sparsity: float
    ratio: float
    delta: float
    weights: tuple
    x1: np.ndarray
    b_true: float = 0.0
    noise_sigma: float = DEFAULT_NOISE

    @property
    def bias_interval(self):
        center = 2 * self.ratio - 1
        return center - self.delta, center + self.delta

    def feasible_set(self):
        lo, hi = self.bias_interval
        return FeasibleSet.product(self.n, lo, hi)


def _labels(scores, rng=None, noise_sigma=0.0):
    # sgn with sgn(0) = +1; xi ~ N(0, noise_sigma^2) flips labels near the boundary
    if noise_sigma > 0:
        scores = scores + noise_sigma * rng.standard_normal(np.shape(scores))
    return np.where(scores >= 0, 1.0, -1.0)


class S3vmOracle(FirstOrderOracle, ZerothOrderOracle):
    """
    Each sample is one labeled pair (u1, v) and one unlabeled u2 over z = (x, b).
    The ridge term is deterministic.
    """

    def __init__(self, instance):
        self.instance = instance

    def _draw(self, m, rng):
        inst = self.instance
        U1 = _sparse_normal(rng, (m, inst.n), inst.sparsity)
        U2 = _sparse_normal(rng, (m, inst.n), inst.sparsity)
        v = _labels(U1 @ inst.x_true + inst.b_true, rng, inst.noise_sigma)
        return U1, U2, v

    def _split(self, z):
        z = np.asarray(z, dtype=float)
        return z[..., :-1], z[..., -1]

    def sample_gradients(self, z, m, rng):
        w1, w2, w3 = self.instance.weights
        x, b = self._split(z)
        U1, U2, v = self._draw(m, rng)
        hinge = np.maximum(0.0, 1 - v * (U1 @ x + b))
        t2 = U2 @ x + b
        c1 = -2 * w1 * hinge * v
        c2 = -10 * w2 * t2 * np.exp(-5 * t2 ** 2)
        gx = c1[:, None] * U1 + c2[:, None] * U2 + 2 * w3 * x
        return np.column_stack([gx, c1 + c2])

    def _values(self, X, B, U1, U2, v):
        w1, w2, w3 = self.instance.weights
        hinge = np.maximum(0.0, 1 - v * (np.einsum("ij,ij->i", U1, X) + B))
        t2 = np.einsum("ij,ij->i", U2, X) + B
        return w1 * hinge ** 2 + w2 * np.exp(-5 * t2 ** 2) + w3 * np.einsum("ij,ij->i", X, X)

    def sample_values(self, z, m, rng):
        x, b = self._split(z)
        U1, U2, v = self._draw(m, rng)
        return self._values(np.broadcast_to(x, (m, x.size)), np.full(m, b), U1, U2, v)

    def sample_value_pairs(self, points, base, rng):
        points = np.atleast_2d(points)
        m = points.shape[0]
        U1, U2, v = self._draw(m, rng)
        X, B = self._split(points)
        x, b = self._split(base)
        return (self._values(X, B, U1, U2, v),
                self._values(np.broadcast_to(x, (m, x.size)), np.full(m, b), U1, U2, v))


def gen_s3vm(n, sparsity=DATA_SPARSITY, noise_sigma=DEFAULT_NOISE, r_target=None, deltab=S3VM_DELTA,
             weights=S3VM_WEIGHTS, rng=None):
    """
    Smoothed semi-supervised SVM over (x, b) with the label-ratio box on b.
    Labels are sgn(<x_true, u> + b + xi) with xi ~ N(0, noise_sigma^2) and a
    dense x_true. Without `r_target` the ratio is the positive share of a
    labeled pool.
    """
    if n < 1:
        raise RejectedInputError(f"Dimension must be positive, got {n}")
    if not 0 < sparsity <= 1:
        raise RejectedInputError(f"Sparsity must lie in (0, 1], got {sparsity}")
    if not deltab > 0:
        raise RejectedInputError(f"Bias tolerance must be positive, got {deltab}")
    if noise_sigma < 0:
        raise RejectedInputError(f"Label noise must be nonnegative, got {noise_sigma}")
    if len(weights) != 3 or any(w < 0 for w in weights):
        raise RejectedInputError(f"Need three nonnegative weights, got {weights}")
    rng = rng if rng is not None else np.random.default_rng()
    # 1. Separating direction and start point
    x_true = rng.standard_normal(n)
    x_start = START_SCALE * _sparse_normal(rng, n, START_DENSITY)
    # 2. Label ratio from a noisy labeled pool
    if r_target is None:
        pool = _sparse_normal(rng, (LABEL_POOL_SIZE, n), sparsity)
        r_target = float(np.mean(_labels(pool @ x_true, rng, noise_sigma) > 0))
    x1 = np.append(x_start, 2 * r_target - 1)
    instance = S3vmInstance(n=n, x_true=x_true, sparsity=float(sparsity), ratio=float(r_target),
                            delta=float(deltab), weights=tuple(float(w) for w in weights), x1=x1,
                            noise_sigma=float(noise_sigma))
    return instance, S3vmOracle(instance)


class QuadraticOracle(FirstOrderOracle, ZerothOrderOracle):
    """F(x, xi) = 0.5 (x - x*)' A (x - x*) + <xi, x>, xi ~ N(0, s^2 I), A diagonal."""

    def __init__(self, diag, x_star, noise_std):
        self.diag = np.asarray(diag, dtype=float)
        self.x_star = np.asarray(x_star, dtype=float)
        self.noise_std = float(noise_std)
        self.true_gradient = self.gradient
        self.sigma_bound = self.noise_std * np.sqrt(self.diag.size)

    def objective(self, x):
        d = np.asarray(x, dtype=float) - self.x_star
        return 0.5 * float(d @ (self.diag * d))

    def gradient(self, x):
        return self.diag * (np.asarray(x, dtype=float) - self.x_star)

    def _noise(self, m, rng):
        if self.noise_std > 0:
            return self.noise_std * rng.standard_normal((m, self.diag.size))
        return np.zeros((m, self.diag.size))

    def sample_gradients(self, x, m, rng):
        return self.gradient(x) + self._noise(m, rng)

    def sample_values(self, x, m, rng):
        return self.objective(x) + self._noise(m, rng) @ np.asarray(x, dtype=float)

    def sample_value_pairs(self, points, base, rng):
        points = np.atleast_2d(points)
        xi = self._noise(points.shape[0], rng)
        d = points - self.x_star
        shifted = 0.5 * np.einsum("ij,ij->i", d, d * self.diag) + np.einsum("ij,ij->i", xi, points)
        return shifted, self.objective(base) + xi @ np.asarray(base, dtype=float)


@dataclass(eq=False)
class ProblemInstance:
    """
    Composite problem Psi = f + h over X with its oracles and whatever exact
    information is known.
    """
    name: str
    kind: str
    x1: np.ndarray
    feasible_set: FeasibleSet
    simple_term: SimpleTerm
    sfo: FirstOrderOracle
    szo: Optional[ZerothOrderOracle] = None
    exact_gradient: Optional[Callable] = None
    exact_objective: Optional[Callable] = None
    lipschitz: Optional[float] = None
    psi_star: Optional[float] = None
    x_star: Optional[np.ndarray] = None
    true_zero_mask: Optional[np.ndarray] = None
    data: object = None
    manifest: dict = field(default_factory=dict)

    @property
    def dim(self):
        return int(np.asarray(self.x1).size)

    def psi(self, x):
        if self.exact_objective is None:
            raise RejectedInputError(f"Problem {self.name} exposes no exact objective")
        return float(self.exact_objective(x)) + self.simple_term.value(x)

    def sample_objective(self, x, m, rng):
        if self.szo is None:
            raise RejectedInputError(f"Problem {self.name} has no zeroth-order oracle")
        return np.asarray(self.szo.sample_values(x, m, rng), dtype=float) + self.simple_term.value(x)

    def d_psi(self):
        """sqrt((Psi(x1) - Psi*)/L) when the constants are known, else None."""
        if self.psi_star is None or self.lipschitz is None or self.exact_objective is None:
            return None
        return float(np.sqrt(max(self.psi(self.x1) - self.psi_star, 0.0) / self.lipschitz))

    def v_star_x1(self, geometry):
        if self.x_star is None:
            return None
        return bregman_divergence(geometry, self.x_star, self.x1)

    def v_bar(self, geometry):
        """Upper bound on max V(x*, u) over u in X; None for unbounded X."""
        if self.x_star is None or not self.feasible_set.is_bounded():
            return None
        if geometry.kind is not GeometryKind.EUCLIDEAN:
            return None
        lo, hi = self.feasible_set.dimension_bounds(self.dim)
        far = np.maximum(self.x_star - lo, hi - self.x_star)
        return 0.5 * float(far @ far)


def least_squares_problem(instance, oracle, name="least_squares"):
    return ProblemInstance(
        name=name,
        kind="least_squares",
        x1=instance.x1,
        feasible_set=FeasibleSet.all_space(),
        simple_term=SimpleTerm.zero(),
        sfo=oracle,
        szo=oracle,
        exact_gradient=instance.gradient,
        exact_objective=instance.objective,
        lipschitz=2 * instance.sparsity + 1.0,
        true_zero_mask=instance.x_true == 0,
        data=instance,
    )


def s3vm_problem(instance, oracle, name="s3vm"):
    return ProblemInstance(
        name=name,
        kind="s3vm",
        x1=instance.x1,
        feasible_set=instance.feasible_set(),
        simple_term=SimpleTerm.zero(),
        sfo=oracle,
        szo=oracle,
        data=instance,
    )


def gen_quadratic(n, noise_std=0.0, diag=None, x_star=None, x1=None, feasible_set=None, rng=None,
                  name="quadratic"):
    """
    Stochastic convex quadratic with known L = max(diag), sigma^2 = n s^2 and,
    for box or unconstrained X, known minimizer and Psi*.
    """
    if n < 1:
        raise RejectedInputError(f"Dimension must be positive, got {n}")
    rng = rng if rng is not None else np.random.default_rng()
    diag = np.ones(n) if diag is None else np.asarray(diag, dtype=float)
    if diag.shape != (n,) or np.any(diag < 0):
        raise RejectedInputError("Quadratic needs n nonnegative diagonal entries")
    x_star = rng.standard_normal(n) if x_star is None else np.asarray(x_star, dtype=float)
    x1 = np.zeros(n) if x1 is None else np.asarray(x1, dtype=float)
    feasible_set = feasible_set or FeasibleSet.all_space()
    oracle = QuadraticOracle(diag, x_star, noise_std)
    lo, hi = feasible_set.dimension_bounds(n)
    x_opt = np.clip(x_star, lo, hi)
    return ProblemInstance(
        name=name,
        kind="quadratic",
        x1=x1,
        feasible_set=feasible_set,
        simple_term=SimpleTerm.zero(),
        sfo=oracle,
        szo=oracle,
        exact_gradient=oracle.gradient,
        exact_objective=oracle.objective,
        lipschitz=float(np.max(diag)) if np.max(diag) > 0 else 1.0,
        psi_star=oracle.objective(x_opt),
        x_star=x_opt,
        data=oracle,
    )


def make_deterministic_problem(objective, gradient, x1, lipschitz=None, feasible_set=None,
                               simple_term=None, psi_star=None, x_star=None, name="deterministic"):
    x1 = np.asarray(x1, dtype=float)
    return ProblemInstance(
        name=name,
        kind="deterministic",
        x1=x1,
        feasible_set=feasible_set or FeasibleSet.all_space(),
        simple_term=simple_term or SimpleTerm.zero(),
        sfo=AdditiveNoiseOracle(gradient, 0.0, x1.size),
        szo=FunctionValueOracle(objective),
        exact_gradient=gradient,
        exact_objective=objective,
        lipschitz=lipschitz,
        psi_star=psi_star,
        x_star=x_star,
    )


def build_problem(kind, n, noise=DEFAULT_NOISE, seed=0, sparsity=DATA_SPARSITY, name=None, box=None):
    """
    Generate a benchmark instance from its manifest fields on the INSTANCE stream.
    `box` restricts a quadratic to [-box, box]^n.
    """
    if box is not None and (kind != "quadratic" or not box > 0):
        raise RejectedInputError(f"A box needs kind quadratic and a positive half-width, got {kind}, {box}")
    rng = make_stream(seed, StreamPurpose.INSTANCE)
    name = name or kind
    if kind == "least_squares":
        instance, sfo, _ = gen_least_squares(n, sparsity=sparsity, noise_sigma=noise, rng=rng)
        problem = least_squares_problem(instance, sfo, name=name)
    elif kind == "s3vm":
        instance, sfo = gen_s3vm(n, sparsity=sparsity, noise_sigma=noise, rng=rng)
        problem = s3vm_problem(instance, sfo, name=name)
    elif kind == "quadratic":
        feasible_set = FeasibleSet.box(-box * np.ones(n), box * np.ones(n)) if box is not None else None
        problem = gen_quadratic(n, noise_std=noise, diag=np.linspace(0.5, 1.0, n), feasible_set=feasible_set,
                                rng=rng, name=name)
    else:
        raise RejectedInputError(f"Unknown problem kind {kind!r}; expected one of {PROBLEM_KINDS}")
    problem.manifest = {
        "kind": kind,
        "name": name,
        "n": int(n),
        "noise": float(noise),
        "seed": int(seed),
        "sparsity": float(sparsity),
    }
    if box is not None:
        problem.manifest["box"] = float(box)
    if problem.data is not None and hasattr(problem.data, "x_true"):
        problem.manifest["x_true"] = [float(v) for v in problem.data.x_true]
    logger.debug(f"Built {kind} instance {name} with n={n}, noise={noise}, seed={seed}")
    return problem


def problem_manifest(problem):
    if not problem.manifest:
        raise RejectedInputError(f"Problem {problem.name} was not built from a manifest")
    return dict(problem.manifest)


def problem_from_manifest(manifest):
    problem = build_problem(manifest["kind"], manifest["n"], noise=manifest.get("noise", DEFAULT_NOISE),
                            seed=manifest.get("seed", 0), sparsity=manifest.get("sparsity", DATA_SPARSITY),
                            name=manifest.get("name"), box=manifest.get("box"))
    stored = manifest.get("x_true")
    if stored is not None and not np.array_equal(np.asarray(stored, dtype=float), problem.data.x_true):
        raise RejectedInputError("Manifest x_true does not match the regenerated instance")
    return problem


@dataclass(frozen=True)
class ProblemParams:
    lipschitz: float
    sigma: float
    d_tilde: float
    gradient_bound: float
    pilot_samples: int
    psi_at_x1: float

    def as_dict(self):
        return asdict(self)


def estimate_parameters(problem, x1=None, N0=DEFAULT_PILOT_SAMPLES, rng=None):
    """
    Pilot estimates of L, sigma, D_tilde and the gradient bound M at x1.
    L comes from gradient-difference quotients under common random numbers.
    """
    if N0 < 2:
        raise RejectedInputError(f"Pilot sample size must be at least 2, got {N0}")
    rng = rng if rng is not None else np.random.default_rng()
    x1 = np.asarray(problem.x1 if x1 is None else x1, dtype=float)
    n = x1.size

    # 1. Noise level and objective at x1
    sigma = float(np.sqrt(variance_estimate(problem.sfo, x1, N0, rng)))
    psi_hat = float(np.mean(problem.sample_objective(x1, N0, rng)))

    # 2. Lipschitz quotients on nearby points with common random numbers
    lo, hi = problem.feasible_set.dimension_bounds(n)
    radius = PILOT_RADIUS * (1.0 + float(np.linalg.norm(x1)) / np.sqrt(n))
    points = [x1] + [np.clip(x1 + radius * rng.standard_normal(n), lo, hi) for _ in range(PILOT_POINTS)]
    crn_seed = int(rng.integers(0, 2 ** 63 - 1))
    means = [minibatch_mean(problem.sfo, p, N0, np.random.Generator(np.random.Philox(crn_seed))).mean_gradient
             for p in points]
    quotients = []
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            gap = np.linalg.norm(points[i] - points[j])
            if gap > 0:
                quotients.append(np.linalg.norm(means[i] - means[j]) / gap)
    if problem.lipschitz is not None:
        lipschitz = float(problem.lipschitz)
    else:
        lipschitz = LIPSCHITZ_SAFETY * max(quotients, default=0.0)
        lipschitz = max(lipschitz, np.finfo(float).eps)
    gradient_bound = max(float(np.linalg.norm(g)) for g in means)
    d_tilde = float(np.sqrt(2 * max(psi_hat, 0.0) / lipschitz))
    logger.info(f"Pilot on {problem.name}: L={lipschitz:.4g}, sigma={sigma:.4g}, "
                f"D_tilde={d_tilde:.4g}, M={gradient_bound:.4g}")
    return ProblemParams(lipschitz=lipschitz, sigma=sigma, d_tilde=d_tilde, gradient_bound=gradient_bound,
                         pilot_samples=int(N0), psi_at_x1=psi_hat)


@dataclass(frozen=True)
class SolutionMetrics:
    mapping_norm_sq: float
    objective: float
    zero_ratio: Optional[float] = None

    def as_dict(self):
        return asdict(self)


def evaluate_solution(problem, geometry, x_out, gamma, K=EVAL_SAMPLES, rng=None):
    """
    K-sample estimates of the squared gradient-mapping norm and of Psi at x_out,
    plus the zero-recovery ratio for least-squares instances.
    """
    if int(K) != K or K < 1:
        raise RejectedInputError(f"Evaluation sample size must be a positive integer, got {K}")
    rng = rng if rng is not None else np.random.default_rng()
    x_out = np.asarray(x_out, dtype=float)
    grad_sum = np.zeros(x_out.size)
    value_sum = 0.0
    for start in range(0, int(K), EVAL_CHUNK):
        size = min(EVAL_CHUNK, int(K) - start)
        grad_sum += problem.sfo.sample_gradients(x_out, size, rng).sum(axis=0)
        value_sum += float(problem.szo.sample_values(x_out, size, rng).sum())
    mapping = gradient_mapping(geometry, problem.feasible_set, problem.simple_term,
                               x_out, grad_sum / K, gamma)
    zero_ratio = None
    if problem.true_zero_mask is not None and problem.true_zero_mask.any():
        mask = problem.true_zero_mask
        zero_ratio = float(np.sum(np.abs(x_out[mask]) < ZERO_THRESHOLD) / mask.sum())
    return SolutionMetrics(
        mapping_norm_sq=geometry.norm(mapping) ** 2,
        objective=value_sum / K + problem.simple_term.value(x_out),
        zero_ratio=zero_ratio,
    )
