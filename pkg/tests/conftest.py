import numpy as np
import pytest

from problems import build_problem, gen_quadratic, make_deterministic_problem
from prox_geometry import Geometry


@pytest.fixture
def euclidean():
    return Geometry.euclidean()


@pytest.fixture
def entropy():
    return Geometry.entropy_simplex()


@pytest.fixture
def noiseless_quadratic():
    """f(x) = 0.5 (x - x*)' A (x - x*) on R^10, L = 1, started at 0."""
    return gen_quadratic(10, diag=np.linspace(0.5, 1.0, 10), x1=np.zeros(10), rng=np.random.default_rng(7))


@pytest.fixture
def noisy_quadratic():
    return gen_quadratic(10, noise_std=0.3, diag=np.linspace(0.5, 1.0, 10), x1=np.zeros(10),
                         rng=np.random.default_rng(7))


@pytest.fixture
def quartic():
    """Scalar nonconvex f(x) = x^4 - x^2 started at x = 2."""
    return make_deterministic_problem(
        objective=lambda x: float(x[0] ** 4 - x[0] ** 2),
        gradient=lambda x: np.array([4 * x[0] ** 3 - 2 * x[0]]),
        x1=np.array([2.0]),
        lipschitz=46.0,
    )


@pytest.fixture
def small_lsq():
    return build_problem("least_squares", 20, noise=0.1, seed=3, sparsity=0.2)


@pytest.fixture
def small_s3vm():
    return build_problem("s3vm", 8, seed=5, sparsity=0.5)


QUADRATIC_CONFIG = """
[experiment]
algorithms = PG, RSPG, 2-RSPG, 2-RSPG-V, RSPGF
budgets = 60, 200
replications = 2
eval_samples = 200
pilot_samples = 20
seed = 11

[problem quad]
kind = quadratic
n = 5
noise = {noise}
seed = 2
"""


@pytest.fixture
def quadratic_config_text():
    return QUADRATIC_CONFIG.format(noise=0.1)


@pytest.fixture
def quadratic_config_file(tmp_path):
    def write(noise=0.1, extra=""):
        path = tmp_path / f"quad_{noise}.cfg"
        path.write_text(QUADRATIC_CONFIG.format(noise=noise) + extra)
        return path
    return write
