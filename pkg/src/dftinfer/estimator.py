"""scikit-learn style classifier around the fixed-matrix TAP iteration."""
import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets, type_of_target
from sklearn.utils.validation import check_is_fitted, validate_data

from . import dynamics
from .likelihood import LikelihoodModel, moments
from .quadrature import QuadratureSpec
from .replica import solve_replica
from .spectral import build_A, spectrum_from_matrix


class TAPProbitClassifier(ClassifierMixin, BaseEstimator):
    """Approximate posterior mean for probit regression with a ``N(0, I)`` weight prior.

    ``fit`` runs VAMP on ``K = X X^T`` started from the replica-symmetric fixed
    point of the sample spectrum. ``algorithm="simplified"`` instead freezes
    ``(chi, lam, nu)`` at that fixed point; it is only reliable when ``X`` looks
    like a draw from a rotation-invariant ensemble (it diverges on, e.g.,
    uncentered low-dimensional data). ``coef_`` is the posterior mean of the weights.

    Parameters
    ----------
    noise_var : float
        Probit noise variance ``sigma_0^2``.
    algorithm : {"simplified", "vamp"}
    max_iter : int
        Iterations of the chosen algorithm.
    tol : float
        Stop once the mean squared step falls below this.
    quad_nodes : int
        Gauss-Hermite nodes for the replica solve.
    """

    def __init__(self, noise_var=1e-2, algorithm="vamp", max_iter=100, tol=1e-24,
                 quad_nodes=61):
        self.noise_var = noise_var
        self.algorithm = algorithm
        self.max_iter = max_iter
        self.tol = tol
        self.quad_nodes = quad_nodes

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.classifier_tags.multi_class = False
        return tags

    def _check_params(self):
        if self.algorithm not in ("simplified", "vamp"):
            raise ValueError(f"algorithm must be 'simplified' or 'vamp', got {self.algorithm!r}")
        if not (isinstance(self.max_iter, (int, np.integer)) and self.max_iter >= 1):
            raise ValueError(f"max_iter must be a positive integer, got {self.max_iter!r}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol!r}")
        return LikelihoodModel("probit", float(self.noise_var)), QuadratureSpec(int(self.quad_nodes))

    def fit(self, X, y):
        model, quad = self._check_params()
        X, y = validate_data(self, X, y, dtype=np.float64)
        check_classification_targets(y)
        if type_of_target(y) != "binary":
            raise ValueError("Only binary classification is supported; got "
                             f"{np.unique(y).size} classes")
        self.classes_, idx = np.unique(y, return_inverse=True)
        labels = np.where(idx == 1, 1.0, -1.0)

        S = spectrum_from_matrix(X)
        rep = solve_replica(S, model, quad)
        teacher = _Labels(labels)
        if self.algorithm == "vamp":
            tr = dynamics.run_vamp(S, teacher, model, self.max_iter, nu0=rep.nu)
            nu = float(tr.vamp.nu[-1])
        else:
            A = build_A(S, rep.chi, rep.lam)
            tr = dynamics.run_algorithm(A, teacher, rep, model, self.max_iter)
            nu = rep.nu
        steps = tr.step_deltas()
        hit = np.flatnonzero(steps < self.tol)
        self.n_iter_ = int(hit[0]) + 1 if hit.size else self.max_iter
        rho = tr.rho[self.n_iter_]
        m, mp = moments(model, rho, labels, nu)

        # w_hat = X^T K^+ m, with K^+ applied in the eigenbasis
        b, d = S.basis, S.d
        inv = np.where(d > 0, 1.0 / np.where(d > 0, d, 1.0), 0.0)
        self.coef_ = X.T @ b.backward(b.forward(m) * inv)
        self.replica_ = rep
        self.field_ = rho
        self.posterior_mean_ = m
        self.posterior_var_ = mp
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return X @ self.coef_

    def predict(self, X):
        score = self.decision_function(X)
        return self.classes_[(score >= 0).astype(int)]


class _Labels:
    """Minimal teacher stand-in: the iterations only read ``y``."""

    def __init__(self, y):
        self.y = y
