"""Single-site moment functions for the probit and Gaussian likelihoods.

For a likelihood ``p(y|theta)`` and a Gaussian tilt ``exp(-nu*theta**2/2 + rho*theta)``
the functions here return the tilted mean ``m_nu(rho, y)`` and its
``rho``-derivative ``m'_nu(rho, y)`` (the tilted variance).
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)

# Below this argument the truncated-normal variance is evaluated with a
# continued fraction; 1 - R*(u + R) cancels catastrophically there.
_CF_SWITCH = -6.0
_CF_TERMS = 160

KINDS = ("probit", "gaussian")


@dataclass(frozen=True)
class LikelihoodModel:
    """Closed set of likelihoods: ``probit`` (noise_var = sigma_0^2) or
    ``gaussian`` (noise_var = observation variance)."""

    kind: str = "probit"
    noise_var: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown likelihood kind {self.kind!r}; expected one of {KINDS}")
        if not np.isfinite(self.noise_var) or self.noise_var < 0:
            raise ValueError(f"noise_var must be >= 0, got {self.noise_var}")
        if self.kind == "gaussian" and self.noise_var == 0:
            raise ValueError("gaussian likelihood needs noise_var > 0")


def _mills_log(u):
    return np.exp(-0.5 * u * u - _LOG_SQRT_2PI - log_ndtr(u))


def mills_ratio(u):
    """``phi(u) / Phi(u)``: log domain in the body, continued fraction deep in the left tail."""
    return _mills_and_gap(u)[0]


def _mills_and_gap(u):
    """``(R(u), u + R(u))``; the gap is taken from the continued fraction for
    ``u < -6`` where ``u`` and ``R`` nearly cancel."""
    u = np.asarray(u, dtype=float)
    r = np.empty_like(u)
    gap = np.empty_like(u)
    tail = u < _CF_SWITCH
    body = ~tail
    r[body] = _mills_log(u[body])
    gap[body] = u[body] + r[body]
    if np.any(tail):
        c, _ = _upper_tail_cf(-u[tail])
        gap[tail] = c
        r[tail] = c - u[tail]
    return r, gap


def _upper_tail_cf(x):
    """Pieces of the Laplace continued fraction of the upper-tail Mills ratio.

    Returns ``(c, d)`` with ``1/M(x) = x + c``, ``c = 1/(x + d)`` and
    ``d = 2/(x + 3/(x + ...))``. Valid for ``x`` well inside the tail.
    """
    t = np.zeros_like(x)
    for k in range(_CF_TERMS, 1, -1):
        t = k / (x + t)
    d = t
    c = 1.0 / (x + d)
    return c, d


def truncated_variance(u):
    """Variance of a standard normal conditioned on ``Z > -u``.

    Equals ``1 - R(u) (u + R(u))`` with ``R`` the Mills ratio ``phi/Phi``.
    """
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    tail = u < _CF_SWITCH
    body = ~tail
    ub = u[body]
    r = _mills_log(ub)
    out[body] = 1.0 - r * (ub + r)
    if np.any(tail):
        c, d = _upper_tail_cf(-u[tail])
        out[tail] = c * (d - c)
    return out


def _check_nu(nu):
    nu = np.asarray(nu, dtype=float)
    if np.any(~(nu > 0)):
        raise ValueError("precision nu must be > 0")
    return nu


def moments(model, rho, y, nu):
    """Return ``(m, m_prime)`` for the tilted single-site measure.

    Broadcasts over ``rho``, ``y`` and ``nu``. Probit labels must be +-1.
    """
    nu = _check_nu(nu)
    rho = np.asarray(rho, dtype=float)
    y = np.asarray(y, dtype=float)
    if model.kind == "gaussian":
        prec = nu + 1.0 / model.noise_var
        m = (rho + y / model.noise_var) / prec
        return m, np.broadcast_to(1.0 / prec, m.shape).copy()

    if np.any(np.abs(y) != 1.0):
        raise ValueError("probit labels must be in {-1, +1}")
    v = 1.0 / nu
    s2 = model.noise_var + v
    s = np.sqrt(s2)
    u = y * rho * v / s
    _, gap = _mills_and_gap(u)
    shrink = v / s2  # in (0, 1]; equals 1 in the hard-step limit
    # rho v + y R v / s, regrouped so the large terms rho v and y R v/s never cancel
    m = rho * v * (1.0 - shrink) + y * (v / s) * gap
    mp = v * ((1.0 - shrink) + shrink * truncated_variance(u))
    return m, mp


def f_eta(model, rho, y, eta, nu):
    """Update nonlinearity ``m_nu(rho, y)/eta - rho``."""
    eta = np.asarray(eta, dtype=float)
    if np.any(~(eta > 0)):
        raise ValueError("eta must be > 0")
    m, _ = moments(model, rho, y, nu)
    return m / eta - rho


def f_eta_prime(model, rho, y, eta, nu):
    """``d f_eta / d rho = m'_nu/eta - 1``."""
    eta = np.asarray(eta, dtype=float)
    if np.any(~(eta > 0)):
        raise ValueError("eta must be > 0")
    _, mp = moments(model, rho, y, nu)
    return mp / eta - 1.0


def label_probability(model, mean, var, y):
    """``P(y | theta ~ N(mean, var))`` for the probit model.

    ``var + noise_var == 0`` falls back to the hard step with ``sign(0) = +1``.
    """
    s2 = model.noise_var + np.asarray(var, dtype=float)
    a = np.asarray(y, dtype=float) * np.asarray(mean, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = ndtr(a / np.sqrt(s2))
    hard = np.broadcast_to(s2 <= 0, p.shape)
    if np.any(hard):
        step = np.where(a > 0, 1.0, np.where(a < 0, 0.0, (np.asarray(y) > 0) * 1.0))
        p = np.where(hard, np.broadcast_to(step, p.shape), p)
    return p
