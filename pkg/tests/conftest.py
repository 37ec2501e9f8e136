import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bsumm.instances import InstanceSpec, gen_basis_pursuit, gen_counterexample, gen_lasso
from bsumm.problem import make_problem

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def counterexample():
    return gen_counterexample()


@pytest.fixture
def small_bp():
    return gen_basis_pursuit(InstanceSpec("basis_pursuit", {"n": 60, "m": 20, "p_nonzero": 0.1}, 3))


@pytest.fixture
def small_lasso():
    return gen_lasso(InstanceSpec("lasso", {"n": 80, "m": 60, "p_A": 0.3, "p_b": 0.5, "lam": 1.0, "nnz": 8}, 2))


def random_quadratic(seed, sizes=(2, 3, 2), m=4, rows=12, rho=1.3, lam=0.0, **kw):
    """Strongly convex block quadratic with a coupling constraint."""
    rng = np.random.default_rng(seed)
    n = sum(sizes)
    return make_problem(
        sizes,
        loss="quadratic",
        A=rng.standard_normal((rows, n)),
        target=rng.standard_normal(rows),
        b=0.1 * rng.standard_normal(n),
        lam=lam,
        E=rng.standard_normal((m, n)) if m else None,
        q=rng.standard_normal(m) if m else None,
        rho=rho,
        **kw,
    )


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: (int(s.split()[1].rstrip(":")), s)):
            terminalreporter.write_line(line)
