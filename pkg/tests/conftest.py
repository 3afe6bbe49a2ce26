import numpy as np
import pytest

from dftinfer.ensemble import generate_design, generate_teacher
from dftinfer.likelihood import LikelihoodModel
from dftinfer.quadrature import QuadratureSpec
from dftinfer.replica import solve_replica
from dftinfer.spectral import build_A, spectrum

# lines reported by tests/test_acceptance.py, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


PROBIT = LikelihoodModel("probit", 1e-2)


@pytest.fixture(scope="session")
def probit():
    return PROBIT


def small_problem(kind="gaussian", N=256, seed=0, model=PROBIT):
    design = generate_design(kind, N, N // 2, seed)
    teacher = generate_teacher(design, model.noise_var, seed, model.kind)
    S = spectrum(design)
    rep = solve_replica(S, model, QuadratureSpec(61))
    A = build_A(S, rep.chi, rep.lam)
    return design, teacher, S, rep, A


@pytest.fixture(scope="session", params=["gaussian", "hadamard"])
def problem(request):
    return small_problem(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
