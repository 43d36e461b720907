import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import rel_entr, xlogy

from errors import RejectedInputError, UnsupportedCombinationError

logger = logging.getLogger(__name__)

# Simplex coordinates are floored here after the multiplicative update.
ENTROPY_FLOOR = 1e-300
MEMBERSHIP_TOL = 1e-9


class GeometryKind(str, Enum):
    EUCLIDEAN = "euclidean"
    ENTROPY_SIMPLEX = "entropy_simplex"


class SetKind(str, Enum):
    ALL_SPACE = "all_space"
    BOX = "box"
    SIMPLEX = "simplex"
    PRODUCT = "product"


class TermKind(str, Enum):
    ZERO = "zero"
    L1 = "l1"


@dataclass(frozen=True)
class Geometry:
    """
    Distance generating function omega with its modulus and norm pair.
    Euclidean: omega(x) = |x|^2/2, alpha = 1 under l2.
    Entropy: omega(x) = sum x_i ln x_i on the simplex, alpha = 1 under l1 (dual norm l-inf).
    """
    kind: GeometryKind
    modulus_alpha: float = 1.0

    @classmethod
    def euclidean(cls):
        return cls(GeometryKind.EUCLIDEAN)

    @classmethod
    def entropy_simplex(cls):
        return cls(GeometryKind.ENTROPY_SIMPLEX)

    def omega_value(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind is GeometryKind.EUCLIDEAN:
            return 0.5 * float(x @ x)
        return float(np.sum(xlogy(x, x)))

    def omega_gradient(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind is GeometryKind.EUCLIDEAN:
            return x.copy()
        if np.any(x <= 0):
            raise RejectedInputError("Entropy gradient is undefined on the simplex boundary")
        return 1.0 + np.log(x)

    def norm(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind is GeometryKind.EUCLIDEAN:
            return float(np.linalg.norm(v))
        return float(np.sum(np.abs(v)))

    def dual_norm(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind is GeometryKind.EUCLIDEAN:
            return float(np.linalg.norm(v))
        return float(np.max(np.abs(v))) if v.size else 0.0


@dataclass(frozen=True, eq=False)
class FeasibleSet:
    """
    Closed convex set X. PRODUCT is a box on the coordinates in `index`
    and the whole line on every other coordinate.
    """
    kind: SetKind
    lower: object = None
    upper: object = None
    index: tuple = ()

    @classmethod
    def all_space(cls):
        return cls(SetKind.ALL_SPACE)

    @classmethod
    def box(cls, lower, upper):
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        if np.any(lower > upper):
            raise RejectedInputError("Box lower bounds must not exceed upper bounds")
        return cls(SetKind.BOX, lower, upper)

    @classmethod
    def simplex(cls):
        return cls(SetKind.SIMPLEX)

    @classmethod
    def product(cls, index, lower, upper):
        if lower > upper:
            raise RejectedInputError(f"Empty interval [{lower}, {upper}] on coordinate {index}")
        return cls(SetKind.PRODUCT, float(lower), float(upper), (int(index),))

    def dimension_bounds(self, n):
        lo = np.full(n, -np.inf)
        hi = np.full(n, np.inf)
        if self.kind is SetKind.BOX:
            lo = np.broadcast_to(self.lower, (n,)).astype(float)
            hi = np.broadcast_to(self.upper, (n,)).astype(float)
        elif self.kind is SetKind.PRODUCT:
            lo[list(self.index)] = self.lower
            hi[list(self.index)] = self.upper
        elif self.kind is SetKind.SIMPLEX:
            lo[:] = 0.0
            hi[:] = 1.0
        return lo, hi

    def is_bounded(self):
        if self.kind is SetKind.SIMPLEX:
            return True
        if self.kind is SetKind.BOX:
            return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))
        return False

    def contains(self, x, tol=MEMBERSHIP_TOL):
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            return False
        if self.kind is SetKind.ALL_SPACE:
            return True
        if self.kind is SetKind.SIMPLEX:
            return bool(np.all(x >= -tol) and abs(x.sum() - 1.0) <= tol * max(1, x.size))
        lo, hi = self.dimension_bounds(x.size)
        return bool(np.all(x >= lo - tol) and np.all(x <= hi + tol))


@dataclass(frozen=True)
class SimpleTerm:
    kind: TermKind = TermKind.ZERO
    weight: float = 0.0

    @classmethod
    def zero(cls):
        return cls(TermKind.ZERO, 0.0)

    @classmethod
    def l1(cls, weight):
        if weight < 0:
            raise RejectedInputError(f"l1 weight must be nonnegative, got {weight}")
        return cls(TermKind.L1, float(weight))

    def value(self, x):
        if self.kind is TermKind.ZERO:
            return 0.0
        return self.weight * float(np.sum(np.abs(x)))


@dataclass(frozen=True, eq=False)
class ProxResult:
    x_plus: np.ndarray
    mapping: np.ndarray
    objective_residual: float


def bregman_divergence(geometry, x, z):
    """
    V(x, z) = omega(x) - omega(z) - <grad omega(z), x - z>.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape != z.shape:
        raise RejectedInputError(f"Shape mismatch {x.shape} vs {z.shape}")
    if geometry.kind is GeometryKind.EUCLIDEAN:
        d = x - z
        return 0.5 * float(d @ d)
    if np.any(z <= 0):
        raise RejectedInputError("Entropy divergence needs a strictly positive second argument")
    if np.any(x < 0):
        raise RejectedInputError("Entropy divergence needs a nonnegative first argument")
    # generalized KL; the linear terms cancel on the simplex
    value = float(np.sum(rel_entr(x, z) - x + z))
    return max(value, 0.0)


def soft_threshold(v, level):
    # |v| == level maps to 0
    return np.sign(v) * np.maximum(np.abs(v) - level, 0.0)


def project_simplex(v):
    """
    Euclidean projection onto the standard simplex (sort-based).
    """
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    cond = u - css / ind > 0
    rho = ind[cond][-1]
    theta = css[cond][-1] / rho
    return np.maximum(v - theta, 0.0)


def _entropy_update(x, g, gamma):
    log_w = np.log(x) - gamma * g
    log_w -= log_w.max()
    w = np.exp(log_w)
    w /= w.sum()
    w = np.maximum(w, ENTROPY_FLOOR)
    return w / w.sum()


def _separable_residual(x, x_plus, g, gamma, lo, hi, weight):
    # distance of -grad(smooth part) to the subdifferential of h plus the normal cone
    v = g + (x_plus - x) / gamma
    pos = x_plus > 0
    neg = x_plus < 0
    h_lo = np.where(pos, weight, -weight)
    h_hi = np.where(neg, -weight, weight)
    at_lo = np.isfinite(lo) & (x_plus <= lo)
    at_hi = np.isfinite(hi) & (x_plus >= hi)
    a = h_lo + np.where(at_lo, -np.inf, 0.0)
    b = h_hi + np.where(at_hi, np.inf, 0.0)
    t = -v
    violation = np.maximum(a - t, 0.0) + np.maximum(t - b, 0.0)
    return float(np.linalg.norm(violation))


def _simplex_residual(v, x_plus, support):
    if not np.any(support):
        return 0.0
    shift = -float(np.mean(v[support]))
    on_support = v[support] + shift
    off_support = np.maximum(-(v[~support] + shift), 0.0)
    return float(np.sqrt(on_support @ on_support + off_support @ off_support))


def _check_point(geometry, feasible_set, x):
    if geometry.kind is GeometryKind.ENTROPY_SIMPLEX and np.any(x <= 0):
        raise RejectedInputError("Entropy prox-step needs a strictly positive point")
    if not feasible_set.contains(x, tol=MEMBERSHIP_TOL * (1.0 + float(np.max(np.abs(x), initial=0.0)))):
        raise RejectedInputError("Prox-step called at a point outside the feasible set")


def prox_step(geometry, feasible_set, h, x, g, gamma):
    """
    Solve x+ = argmin_{u in X} <g, u> + V(u, x)/gamma + h(u) in closed form.
    Raises UnsupportedCombinationError when no closed form is implemented.
    """
    x = np.asarray(x, dtype=float)
    g = np.asarray(g, dtype=float)
    if x.shape != g.shape:
        raise RejectedInputError(f"Point and gradient shapes differ: {x.shape} vs {g.shape}")
    if not (gamma > 0 and np.isfinite(gamma)):
        raise RejectedInputError(f"Stepsize must be positive and finite, got {gamma}")

    if geometry.kind is GeometryKind.EUCLIDEAN:
        if feasible_set.kind in (SetKind.ALL_SPACE, SetKind.BOX, SetKind.PRODUCT):
            _check_point(geometry, feasible_set, x)
            lo, hi = feasible_set.dimension_bounds(x.size)
            weight = h.weight if h.kind is TermKind.L1 else 0.0
            step = x - gamma * g
            if weight > 0:
                step = soft_threshold(step, gamma * weight)
            x_plus = np.clip(step, lo, hi)
            residual = _separable_residual(x, x_plus, g, gamma, lo, hi, weight)
        elif feasible_set.kind is SetKind.SIMPLEX and h.kind is TermKind.ZERO:
            _check_point(geometry, feasible_set, x)
            x_plus = project_simplex(x - gamma * g)
            v = g + (x_plus - x) / gamma
            residual = _simplex_residual(v, x_plus, x_plus > 0)
        else:
            raise UnsupportedCombinationError(geometry.kind.value, feasible_set.kind.value, h.kind.value)
    elif geometry.kind is GeometryKind.ENTROPY_SIMPLEX:
        if feasible_set.kind is not SetKind.SIMPLEX or h.kind is not TermKind.ZERO:
            raise UnsupportedCombinationError(geometry.kind.value, feasible_set.kind.value, h.kind.value)
        _check_point(geometry, feasible_set, x)
        x_plus = _entropy_update(x, g, gamma)
        v = g + (np.log(x_plus) - np.log(x)) / gamma
        residual = _simplex_residual(v, x_plus, x_plus > ENTROPY_FLOOR)
    else:
        raise UnsupportedCombinationError(str(geometry.kind), feasible_set.kind.value, h.kind.value)

    mapping = (x - x_plus) / gamma
    return ProxResult(x_plus=x_plus, mapping=mapping, objective_residual=residual)


def gradient_mapping(geometry, feasible_set, h, x, g, gamma):
    return prox_step(geometry, feasible_set, h, x, g, gamma).mapping
