import logging
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from errors import RejectedInputError

logger = logging.getLogger(__name__)

# Pilot sample size used to estimate sigma and L before a run.
DEFAULT_PILOT_SAMPLES = 200


class StreamPurpose(IntEnum):
    """First component of every stream key; keeps purposes disjoint."""
    TERMINATION = 1
    ITERATION = 2
    POST_SELECTION = 3
    CANDIDATES = 4
    EVALUATION = 5
    PILOT = 6
    INSTANCE = 7
    OUTPUT_MAPPING = 8


def make_stream(master_seed, *key):
    """
    Counter-based stream for (master seed, key...). The same key always
    yields the same Philox generator, independent of call order or thread.
    """
    spawn_key = tuple(int(k) for k in key)
    if any(k < 0 for k in spawn_key):
        raise RejectedInputError(f"Stream key components must be nonnegative, got {spawn_key}")
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(seq))


class OracleCounter:
    """Exact oracle-call accounting for one run."""

    CHANNELS = ("sfo", "szo", "post")

    def __init__(self):
        self._lock = threading.Lock()
        self.sfo_calls = 0
        self.szo_calls = 0
        self.post_calls = 0

    def record(self, channel, calls):
        if channel not in self.CHANNELS:
            raise RejectedInputError(f"Unknown oracle channel {channel!r}")
        with self._lock:
            setattr(self, f"{channel}_calls", getattr(self, f"{channel}_calls") + int(calls))

    def absorb(self, other):
        with self._lock:
            self.sfo_calls += other.sfo_calls
            self.szo_calls += other.szo_calls
            self.post_calls += other.post_calls


class FirstOrderOracle(ABC):
    """
    Stochastic first-order oracle: G(x, xi) with E[G(x, xi)] = grad f(x).
    `true_gradient` and `sigma_bound` are set when they are known.
    """
    true_gradient = None
    sigma_bound = None

    @abstractmethod
    def sample_gradients(self, x, m, rng):
        """Return an (m, n) array of independent samples G(x, xi_i)."""


class ZerothOrderOracle(ABC):
    """Stochastic zeroth-order oracle: F(x, xi) with E[F(x, xi)] = f(x)."""

    @abstractmethod
    def sample_value_pairs(self, points, base, rng):
        """
        For each row y_i of `points` draw one xi_i and return
        (F(y_i, xi_i), F(base, xi_i)) as two (m,) arrays.
        """

    @abstractmethod
    def sample_values(self, x, m, rng):
        """Return m independent samples F(x, xi_i)."""

    def query_pair(self, x1, x2, rng):
        first, second = self.sample_value_pairs(np.asarray(x1, dtype=float)[None, :], x2, rng)
        return float(first[0]), float(second[0])


class AdditiveNoiseOracle(FirstOrderOracle):
    """grad f(x) + N(0, s^2 I); sigma^2 = n s^2."""

    def __init__(self, gradient_fn, noise_std, dim):
        self.gradient_fn = gradient_fn
        self.noise_std = float(noise_std)
        self.dim = int(dim)
        self.true_gradient = gradient_fn
        self.sigma_bound = self.noise_std * np.sqrt(self.dim)

    def sample_gradients(self, x, m, rng):
        grad = np.asarray(self.gradient_fn(x), dtype=float)
        samples = np.broadcast_to(grad, (m, grad.size)).copy()
        if self.noise_std > 0:
            samples += self.noise_std * rng.standard_normal((m, grad.size))
        return samples


class FunctionValueOracle(ZerothOrderOracle):
    """F(x, xi) = f(x) + s*xi; the shared xi cancels in difference quotients."""

    def __init__(self, f_eval, noise_std=0.0, vectorized=False):
        self.f_eval = f_eval
        self.noise_std = float(noise_std)
        self.vectorized = vectorized

    def _values(self, points):
        if self.vectorized:
            return np.asarray(self.f_eval(points), dtype=float)
        return np.array([self.f_eval(p) for p in points], dtype=float)

    def _noise(self, m, rng):
        if self.noise_std > 0:
            return self.noise_std * rng.standard_normal(m)
        return np.zeros(m)

    def sample_value_pairs(self, points, base, rng):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        noise = self._noise(points.shape[0], rng)
        base_value = self._values(np.asarray(base, dtype=float)[None, :])[0]
        return self._values(points) + noise, base_value + noise

    def sample_values(self, x, m, rng):
        value = self._values(np.asarray(x, dtype=float)[None, :])[0]
        return value + self._noise(m, rng)


@dataclass(frozen=True, eq=False)
class MiniBatchResult:
    mean_gradient: np.ndarray
    batch_size: int
    sample_second_moment: float


def _check_batch_size(m):
    if isinstance(m, bool) or int(m) != m or m < 1:
        raise RejectedInputError(f"Batch size must be a positive integer, got {m}")
    return int(m)


def _center(samples):
    """Mean and deviations; identical rows give their common value and exact zeros."""
    if np.all(samples == samples[0]):
        return samples[0].copy(), np.zeros_like(samples)
    mean = samples.mean(axis=0)
    return mean, samples - mean


def _summarize_batch(samples):
    mean, deviation = _center(samples)
    second_moment = float(np.mean(np.einsum("ij,ij->i", deviation, deviation)))
    return MiniBatchResult(mean_gradient=mean, batch_size=samples.shape[0], sample_second_moment=second_moment)


def minibatch_mean(oracle, x, m, rng, counter=None, channel="sfo"):
    """
    G = (1/m) sum_i G(x, xi_i); consumes exactly m oracle calls.
    """
    m = _check_batch_size(m)
    samples = np.asarray(oracle.sample_gradients(np.asarray(x, dtype=float), m, rng), dtype=float)
    if counter is not None:
        counter.record(channel, m)
    return _summarize_batch(samples)


def minibatch_smoothed_mean(szo, x, mu, m, rng, counter=None):
    """
    Mean of m Gaussian difference-quotient samples [(F(x+mu v, xi) - F(x, xi))/mu] v,
    each with its own (xi, v) pair. One sample counts as one SZO call.
    """
    m = _check_batch_size(m)
    if not mu > 0:
        raise RejectedInputError(f"Smoothing parameter must be positive, got {mu}")
    x = np.asarray(x, dtype=float)
    directions = rng.standard_normal((m, x.size))
    shifted, base = szo.sample_value_pairs(x + mu * directions, x, rng)
    quotients = (np.asarray(shifted) - np.asarray(base)) / mu
    if counter is not None:
        counter.record("szo", m)
    return _summarize_batch(quotients[:, None] * directions)


def gaussian_difference_gradient(szo, x, mu, rng, counter=None):
    return minibatch_smoothed_mean(szo, x, mu, 1, rng, counter=counter).mean_gradient


def smoothed_value_mc(f_eval, x, mu, samples, rng, vectorized=False, return_stderr=False):
    """
    Monte Carlo estimate of f_mu(x) = E_v[f(x + mu v)], v standard Gaussian.
    """
    samples = _check_batch_size(samples)
    x = np.asarray(x, dtype=float)
    points = x + mu * rng.standard_normal((samples, x.size))
    if vectorized:
        values = np.asarray(f_eval(points), dtype=float)
    else:
        values = np.array([f_eval(p) for p in points], dtype=float)
    estimate = float(values.mean())
    if not return_stderr:
        return estimate
    stderr = float(values.std(ddof=1) / np.sqrt(samples)) if samples > 1 else float("nan")
    return estimate, stderr


def variance_estimate(oracle, x, n_samples, rng, counter=None):
    """
    Unbiased estimate of E|G(x, xi) - grad f(x)|^2 from n_samples draws.
    """
    if isinstance(n_samples, bool) or int(n_samples) != n_samples or n_samples < 2:
        raise RejectedInputError(f"Variance estimate needs at least 2 samples, got {n_samples}")
    n_samples = int(n_samples)
    samples = np.asarray(oracle.sample_gradients(np.asarray(x, dtype=float), n_samples, rng), dtype=float)
    if counter is not None:
        counter.record("sfo", n_samples)
    _, deviation = _center(samples)
    return float(np.einsum("ij,ij->", deviation, deviation) / (n_samples - 1))
