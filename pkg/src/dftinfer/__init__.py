"""Fixed-matrix TAP inference for probit regression with rotation-invariant designs,
together with the dynamical theory that predicts its two-time statistics."""
from .dft import TheoryTrace, convergence_rate, delta_rho, dft_recursion, single_node_mc
from .dynamics import run_algorithm, run_vamp, tap_residual
from .ensemble import generate_design, generate_teacher
from .estimator import TAPProbitClassifier
from .harness import ComparisonReport, ExperimentConfig, rate_fit, rse, rse_db, run_experiment
from .likelihood import LikelihoodModel, moments
from .quadrature import QuadratureSpec
from .replica import ReplicaSolution, solve_replica
from .spectral import build_A, spectrum

__version__ = "0.1.0"

__all__ = [
    "ComparisonReport",
    "ExperimentConfig",
    "LikelihoodModel",
    "QuadratureSpec",
    "ReplicaSolution",
    "TAPProbitClassifier",
    "TheoryTrace",
    "build_A",
    "convergence_rate",
    "delta_rho",
    "dft_recursion",
    "generate_design",
    "generate_teacher",
    "moments",
    "rate_fit",
    "rse",
    "rse_db",
    "run_algorithm",
    "run_experiment",
    "run_vamp",
    "single_node_mc",
    "solve_replica",
    "spectrum",
    "tap_residual",
]
