import math

import numpy as np
import pytest

from bounds import (
    BoundInputs,
    compute_theory_bounds,
    large_budget_first_order,
    large_budget_zeroth_order,
    light_tail_sample_size,
    sigma_tilde_squared,
    theta_factors,
    two_phase_budget,
    two_phase_parameters,
    two_phase_runs,
    two_phase_sample_size,
)
from errors import RejectedInputError


def reference_b(L, D, Dt, sigma, Nbar):
    clamp = max(1.0, math.sqrt(6) * sigma / (4 * L * Dt * math.sqrt(Nbar)))
    return 16 * L * D * D / Nbar + 4 * math.sqrt(6) * sigma / math.sqrt(Nbar) * (D * D / Dt + Dt * clamp)


def reference_b_zeroth(L, D, Dt, sigma, M, n, Nbar):
    spread = math.sqrt((n + 4) * (M * M + sigma * sigma))
    theta1 = max(1.0, spread / (L * Dt * math.sqrt(Nbar)))
    theta2 = max(1.0, (n + 4) / Nbar)
    return ((24 * theta2 + 41) * L * D * D * (n + 4) / Nbar
            + 32 * spread / math.sqrt(Nbar) * (D * D / Dt + Dt * theta1))


def _random_inputs(rng):
    return BoundInputs(
        lipschitz=float(rng.uniform(0.1, 10)),
        alpha=float(rng.uniform(0.5, 2)),
        sigma=float(rng.uniform(0, 5)),
        d_psi=float(rng.uniform(0.1, 5)),
        d_tilde=float(rng.uniform(0.1, 5)),
        total_budget=int(rng.integers(1, 100_000)),
        iterations=int(rng.integers(1, 500)),
        batch_size=int(rng.integers(1, 50)),
        v_star_x1=float(rng.uniform(0.1, 5)),
        dim=int(rng.integers(1, 200)),
        gradient_bound=float(rng.uniform(0, 5)),
        mu=float(rng.uniform(0, 0.1)),
    )


class TestTheoryBounds:

    def test_first_order_budget_example(self):
        bounds = compute_theory_bounds(BoundInputs(lipschitz=1.0, sigma=0.0, d_psi=1.0, d_tilde=1.0,
                                                   total_budget=16))
        assert bounds.rspg_nonconvex == 1.0

    def test_missing_constants_are_absent(self):
        bounds = compute_theory_bounds(BoundInputs(lipschitz=1.0))
        assert all(value is None for value in bounds.as_dict().values())

    def test_partial_inputs(self):
        bounds = compute_theory_bounds(BoundInputs(lipschitz=2.0, d_psi=1.0, iterations=10))
        assert bounds.pg_bound == pytest.approx(0.8)
        assert bounds.rspg_stochastic_mapping is None
        assert bounds.rspgf_nonconvex is None

    def test_rejects_nonpositive_lipschitz(self):
        with pytest.raises(RejectedInputError):
            compute_theory_bounds(BoundInputs(lipschitz=0.0))

    def test_general_pg_matches_constant_step(self):
        L, D, N = 3.0, 2.0, 25
        bounds = compute_theory_bounds(BoundInputs(lipschitz=L, d_psi=D, iterations=N,
                                                   stepsizes=tuple([1.0 / L] * N)))
        assert bounds.pg_general == pytest.approx(bounds.pg_bound, rel=1e-12)

    def test_matches_reference_formulas(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            inputs = _random_inputs(rng)
            bounds = compute_theory_bounds(inputs)
            assert bounds.rspg_nonconvex == pytest.approx(
                reference_b(inputs.lipschitz, inputs.d_psi, inputs.d_tilde, inputs.sigma, inputs.total_budget),
                rel=1e-12)
            assert bounds.rspgf_nonconvex == pytest.approx(
                reference_b_zeroth(inputs.lipschitz, inputs.d_psi, inputs.d_tilde, inputs.sigma,
                                   inputs.gradient_bound, inputs.dim, inputs.total_budget), rel=1e-12)

    def test_general_rspg_matches_half_step(self):
        """gamma = alpha/(2L) turns the general bound into the constant-step one."""
        rng = np.random.default_rng(1)
        for _ in range(50):
            inputs = _random_inputs(rng)
            gamma = inputs.alpha / (2 * inputs.lipschitz)
            bounds = compute_theory_bounds(BoundInputs(
                lipschitz=inputs.lipschitz, alpha=inputs.alpha, sigma=inputs.sigma, d_psi=inputs.d_psi,
                iterations=inputs.iterations, batch_size=inputs.batch_size,
                stepsizes=tuple([gamma] * inputs.iterations)))
            assert bounds.rspg_general == pytest.approx(bounds.rspg_stochastic_mapping, rel=1e-10)

    def test_convex_schedule_bound_matches_constant_gap(self):
        bounds = compute_theory_bounds(BoundInputs(lipschitz=1.0, sigma=0.0, iterations=4, batch_size=1,
                                                   v_star_x1=1.0, v_bar=1.0, stepsizes=(0.5,) * 4))
        assert bounds.convex_nondecreasing == pytest.approx(0.5)
        assert bounds.rspg_convex_gap == pytest.approx(0.5)
        assert bounds.convex_nonincreasing == pytest.approx(0.5)

    def test_large_budget_forms(self):
        """With the clamps at 1 the tuned D_tilde reproduces the large-budget bounds."""
        L, D, V, sigma, M, n, a = 2.0, 1.5, 0.7, 0.3, 0.2, 6, 1.0
        Nbar = 10 ** 7
        first = compute_theory_bounds(BoundInputs(lipschitz=L, alpha=a, sigma=sigma, d_psi=D, d_tilde=D,
                                                  total_budget=Nbar))
        assert large_budget_first_order(Nbar, sigma, L, D)
        assert first.rspg_nonconvex == pytest.approx(first.rspg_nonconvex_large_budget, rel=1e-12)
        convex = compute_theory_bounds(BoundInputs(lipschitz=L, alpha=a, sigma=sigma, v_star_x1=V,
                                                   d_tilde=math.sqrt(3 * V / a), total_budget=Nbar))
        assert convex.rspg_convex == pytest.approx(convex.rspg_convex_large_budget, rel=1e-12)

        zeroth = compute_theory_bounds(BoundInputs(lipschitz=L, alpha=a, sigma=sigma, d_psi=D, d_tilde=D,
                                                   total_budget=Nbar, dim=n, gradient_bound=M, mu=0.0))
        assert large_budget_zeroth_order(Nbar, n, M, sigma, L, D)
        assert (zeroth.theta1, zeroth.theta2) == (1.0, 1.0)
        assert zeroth.rspgf_nonconvex == pytest.approx(zeroth.rspgf_nonconvex_large_budget, rel=1e-12)
        zeroth_convex = compute_theory_bounds(BoundInputs(
            lipschitz=L, alpha=a, sigma=sigma, v_star_x1=V, d_tilde=2 * math.sqrt(V / a), total_budget=Nbar,
            dim=n, gradient_bound=M, mu=0.0))
        assert zeroth_convex.rspgf_convex == pytest.approx(zeroth_convex.rspgf_convex_large_budget, rel=1e-12)

    def test_theta_and_sigma_tilde(self):
        theta1, theta2 = theta_factors(4, 1.0, 0.0, 1.0, 1.0, 4)
        assert theta1 == pytest.approx(math.sqrt(8) / 2)
        assert theta2 == 2.0
        assert sigma_tilde_squared(1, 1.0, 0.0, 0.0, 1.0) == 10.0


class TestTwoPhaseParameters:

    def test_runs(self):
        assert two_phase_runs(0.5) == 2
        assert two_phase_runs(0.1) == 5
        with pytest.raises(RejectedInputError):
            two_phase_runs(1.0)

    def test_budget_without_noise(self):
        assert two_phase_budget(64.0, 1.0, 1.0, 1.0, 0.0) == 8

    def test_sample_sizes(self):
        assert two_phase_sample_size(1.0, 0.5, 0.0) == 1
        assert two_phase_sample_size(1.0, 0.5, 1.0) == 96
        assert light_tail_sample_size(1.0, 0.5, 1.0) == 384

    def test_parameters_and_total_calls(self):
        params = two_phase_parameters(64.0, 0.5, 1.0, 1.0, 1.0, 0.0)
        assert (params.runs, params.total_budget, params.post_samples) == (2, 8, 1)
        assert params.total_calls == 18
        assert two_phase_parameters(1.0, 0.5, 1.0, 1.0, 1.0, 1.0, light_tail=True).post_samples == 384

    def test_rejects_bad_accuracy(self):
        with pytest.raises(RejectedInputError):
            two_phase_sample_size(0.0, 0.5, 1.0)
        with pytest.raises(RejectedInputError):
            two_phase_sample_size(1.0, 0.0, 1.0)
