import numpy as np
import pytest

from errors import RejectedInputError, UnsupportedCombinationError
from prox_geometry import (
    FeasibleSet,
    Geometry,
    SimpleTerm,
    bregman_divergence,
    gradient_mapping,
    project_simplex,
    prox_step,
)


def _cases(rng, count=200):
    """Random (geometry, set, h, x, g, gamma) instances over the supported combinations."""
    out = []
    for _ in range(count):
        n = int(rng.integers(1, 6))
        kind = rng.integers(0, 4)
        if kind == 0:
            geometry, fs, h = Geometry.euclidean(), FeasibleSet.all_space(), SimpleTerm.l1(rng.uniform(0, 1))
            x = rng.standard_normal(n)
        elif kind == 1:
            geometry, fs, h = Geometry.euclidean(), FeasibleSet.box(-np.ones(n), 2 * np.ones(n)), SimpleTerm.l1(0.3)
            x = rng.uniform(-1, 2, n)
        elif kind == 2:
            geometry, fs, h = Geometry.euclidean(), FeasibleSet.simplex(), SimpleTerm.zero()
            x = rng.dirichlet(np.ones(n))
        else:
            geometry, fs, h = Geometry.entropy_simplex(), FeasibleSet.simplex(), SimpleTerm.zero()
            x = rng.dirichlet(np.ones(n))
        out.append((geometry, fs, h, x, 2 * rng.standard_normal(n), float(rng.uniform(0.05, 2.0))))
    return out


def _random_member(rng, fs, n):
    if fs.kind.value == "simplex":
        return rng.dirichlet(np.ones(n))
    lo, hi = fs.dimension_bounds(n)
    lo = np.where(np.isfinite(lo), lo, -3.0)
    hi = np.where(np.isfinite(hi), hi, 3.0)
    return rng.uniform(lo, hi)


class TestBregmanDivergence:

    def test_euclidean_is_half_squared_distance(self, euclidean):
        x = np.array([1.0, -2.0, 0.5])
        z = np.array([0.0, 1.0, 0.5])
        assert bregman_divergence(euclidean, x, z) == pytest.approx(0.5 * 10.0)

    def test_entropy_is_kl_on_simplex(self, entropy):
        x = np.array([0.2, 0.3, 0.5])
        z = np.array([0.4, 0.4, 0.2])
        expected = float(np.sum(x * np.log(x / z)))
        assert bregman_divergence(entropy, x, z) == pytest.approx(expected, abs=1e-14)

    def test_entropy_allows_zero_in_first_argument(self, entropy):
        x = np.array([0.0, 1.0])
        z = np.array([0.5, 0.5])
        assert bregman_divergence(entropy, x, z) == pytest.approx(np.log(2.0))

    def test_rejects_boundary_second_argument(self, entropy):
        with pytest.raises(RejectedInputError):
            bregman_divergence(entropy, np.array([0.5, 0.5]), np.array([1.0, 0.0]))

    def test_nonnegative_and_zero_on_diagonal(self, euclidean, entropy):
        rng = np.random.default_rng(0)
        for _ in range(100):
            x, z = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
            assert bregman_divergence(euclidean, x, z) >= 0
            assert bregman_divergence(entropy, x, z) >= 0
            assert bregman_divergence(entropy, x, x) == pytest.approx(0.0, abs=1e-15)

    def test_strong_convexity_lower_bound(self, entropy):
        """V(x, z) >= alpha/2 |x - z|_1^2 (Pinsker)."""
        rng = np.random.default_rng(1)
        for _ in range(200):
            x, z = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5))
            assert bregman_divergence(entropy, x, z) >= 0.5 * entropy.norm(x - z) ** 2 - 1e-12

    def test_omega_gradient_is_strongly_monotone(self, euclidean, entropy):
        """<x - z, grad omega(x) - grad omega(z)> >= alpha |x - z|^2."""
        rng = np.random.default_rng(2)
        for geometry in (euclidean, entropy):
            for _ in range(200):
                x, z = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5))
                inner = float((x - z) @ (geometry.omega_gradient(x) - geometry.omega_gradient(z)))
                assert inner >= geometry.modulus_alpha * geometry.norm(x - z) ** 2 - 1e-12

    def test_divergence_from_omega(self, euclidean, entropy):
        rng = np.random.default_rng(3)
        for geometry in (euclidean, entropy):
            for _ in range(50):
                x, z = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
                expected = (geometry.omega_value(x) - geometry.omega_value(z)
                            - float(geometry.omega_gradient(z) @ (x - z)))
                assert bregman_divergence(geometry, x, z) == pytest.approx(expected, abs=1e-12)

    def test_entropy_gradient_rejects_boundary(self, entropy):
        with pytest.raises(RejectedInputError):
            entropy.omega_gradient(np.array([0.0, 1.0]))


class TestProxStepClosedForms:

    def test_unconstrained_smooth_step_is_gradient_step(self, euclidean):
        x = np.array([1.0, 2.0])
        g = np.array([0.5, -1.0])
        result = prox_step(euclidean, FeasibleSet.all_space(), SimpleTerm.zero(), x, g, 0.1)
        np.testing.assert_allclose(result.x_plus, x - 0.1 * g)
        np.testing.assert_allclose(gradient_mapping(euclidean, FeasibleSet.all_space(), SimpleTerm.zero(),
                                                    x, g, 0.1), g, rtol=1e-12)

    def test_l1_matches_grid_minimization(self, euclidean):
        rng = np.random.default_rng(2)
        grid = np.linspace(-15, 15, 300_001)
        for _ in range(30):
            x, g = rng.standard_normal(1), rng.standard_normal(1)
            gamma, w = rng.uniform(0.1, 2.0), rng.uniform(0.0, 1.5)
            result = prox_step(euclidean, FeasibleSet.all_space(), SimpleTerm.l1(w), x, g, gamma)
            objective = g[0] * grid + (grid - x[0]) ** 2 / (2 * gamma) + w * np.abs(grid)
            assert result.x_plus[0] == pytest.approx(grid[np.argmin(objective)], abs=2e-4)

    def test_entropy_matches_grid_minimization(self, entropy):
        rng = np.random.default_rng(3)
        t = np.linspace(1e-6, 1 - 1e-6, 200_001)
        for _ in range(20):
            p = rng.uniform(0.05, 0.95)
            x = np.array([p, 1 - p])
            g = rng.standard_normal(2)
            gamma = rng.uniform(0.1, 2.0)
            result = prox_step(entropy, FeasibleSet.simplex(), SimpleTerm.zero(), x, g, gamma)
            u = np.column_stack([t, 1 - t])
            kl = np.sum(u * np.log(u / x), axis=1)
            objective = u @ g + kl / gamma
            assert result.x_plus[0] == pytest.approx(t[np.argmin(objective)], abs=1e-4)

    def test_entropy_update_is_multiplicative(self, entropy):
        x = np.array([0.1, 0.3, 0.6])
        g = np.array([1.0, -2.0, 0.5])
        result = prox_step(entropy, FeasibleSet.simplex(), SimpleTerm.zero(), x, g, 0.7)
        expected = x * np.exp(-0.7 * g)
        np.testing.assert_allclose(result.x_plus, expected / expected.sum(), rtol=1e-12)
        assert result.x_plus.sum() == pytest.approx(1.0, abs=1e-15)

    def test_euclidean_simplex_projection(self):
        np.testing.assert_allclose(project_simplex(np.array([2.0, 0.0])), [1.0, 0.0])
        np.testing.assert_allclose(project_simplex(np.array([0.5, 0.5, 0.5])), [1 / 3] * 3)

    def test_box_clips_bias_coordinate(self, euclidean):
        fs = FeasibleSet.product(2, -0.1, 0.1)
        x = np.array([1.0, -1.0, 0.05])
        result = prox_step(euclidean, fs, SimpleTerm.zero(), x, np.array([0.0, 0.0, -1.0]), 1.0)
        assert result.x_plus[2] == 0.1
        np.testing.assert_allclose(result.x_plus[:2], x[:2])

    def test_residual_certifies_optimality(self, euclidean):
        rng = np.random.default_rng(4)
        for geometry, fs, h, x, g, gamma in _cases(rng):
            assert prox_step(geometry, fs, h, x, g, gamma).objective_residual <= 1e-8


class TestProxProperties:

    def test_descent_inequality(self):
        """<g, P> >= alpha |P|^2 + (h(x+) - h(x))/gamma."""
        rng = np.random.default_rng(5)
        for geometry, fs, h, x, g, gamma in _cases(rng, 1000):
            result = prox_step(geometry, fs, h, x, g, gamma)
            lhs = float(g @ result.mapping)
            rhs = geometry.modulus_alpha * geometry.norm(result.mapping) ** 2 \
                + (h.value(result.x_plus) - h.value(x)) / gamma
            assert lhs >= rhs - 1e-8

    def test_mapping_lipschitz_in_gradient(self):
        rng = np.random.default_rng(6)
        for geometry, fs, h, x, g, gamma in _cases(rng, 1000):
            g2 = g + rng.standard_normal(g.size)
            p1 = prox_step(geometry, fs, h, x, g, gamma).mapping
            p2 = prox_step(geometry, fs, h, x, g2, gamma).mapping
            assert geometry.norm(p1 - p2) <= geometry.dual_norm(g - g2) / geometry.modulus_alpha + 1e-8

    def test_three_point_inequality(self):
        """For every u in X the prox point beats u by V(u, x+)/gamma."""
        rng = np.random.default_rng(7)
        for geometry, fs, h, x, g, gamma in _cases(rng, 500):
            result = prox_step(geometry, fs, h, x, g, gamma)
            xp = result.x_plus
            u = _random_member(rng, fs, x.size)
            left = g @ xp + h.value(xp) + bregman_divergence(geometry, xp, x) / gamma
            right = (g @ u + h.value(u) + bregman_divergence(geometry, u, x) / gamma
                     - bregman_divergence(geometry, u, xp) / gamma)
            assert left <= right + 1e-8 * (1 + abs(right))


class TestProxStepErrors:

    def test_unsupported_combination(self, entropy, euclidean):
        with pytest.raises(UnsupportedCombinationError):
            prox_step(entropy, FeasibleSet.box(np.zeros(2), np.ones(2)), SimpleTerm.zero(),
                      np.array([0.5, 0.5]), np.zeros(2), 1.0)
        with pytest.raises(UnsupportedCombinationError):
            prox_step(euclidean, FeasibleSet.simplex(), SimpleTerm.l1(0.1),
                      np.array([0.5, 0.5]), np.zeros(2), 1.0)

    def test_rejects_point_outside_set(self, euclidean):
        with pytest.raises(RejectedInputError):
            prox_step(euclidean, FeasibleSet.box(np.zeros(2), np.ones(2)), SimpleTerm.zero(),
                      np.array([2.0, 0.5]), np.zeros(2), 1.0)

    def test_rejects_nonpositive_stepsize(self, euclidean):
        with pytest.raises(RejectedInputError):
            prox_step(euclidean, FeasibleSet.all_space(), SimpleTerm.zero(), np.zeros(2), np.zeros(2), 0.0)

    def test_entropy_rejects_boundary_point(self, entropy):
        with pytest.raises(RejectedInputError):
            prox_step(entropy, FeasibleSet.simplex(), SimpleTerm.zero(), np.array([1.0, 0.0]), np.zeros(2), 1.0)
