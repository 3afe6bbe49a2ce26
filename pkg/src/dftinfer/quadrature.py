"""Tensor Gauss-Hermite rules for expectations over the teacher/field law.

The fields ``z`` (one or two scalar Gaussians, e.g. ``rho`` or a pair of
``rho`` at two times) are jointly Gaussian with the teacher latent ``theta``;
the label enters through ``p(y|theta)``. ``theta`` is integrated out
analytically given ``z`` and ``y`` so the remaining integrand is smooth.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .likelihood import label_probability, mills_ratio

# relative eigenvalue floor for dropping degenerate field directions
_RANK_TOL = 1e-14


@dataclass(frozen=True)
class QuadratureSpec:
    nodes_per_dim: int = 61
    scheme: str = "gauss-hermite"

    def __post_init__(self):
        if self.scheme != "gauss-hermite":
            raise ValueError(f"unsupported quadrature scheme {self.scheme!r}")
        if self.nodes_per_dim < 21:
            raise ValueError("nodes_per_dim must be >= 21")


@lru_cache(maxsize=16)
def standard_normal_rule(n):
    """Nodes/weights for E[g(Z)], Z ~ N(0, 1); weights sum to one."""
    x, w = hermegauss(n)
    w = w / w.sum()
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@dataclass
class NodeSet:
    """Discrete measure over ``(z, y)`` with ``E[theta | z, y]`` attached.

    ``E[g(z, y)] = sum(w * g)`` and ``E[theta g(z, y)] = sum(w * theta_mean * g)``.
    """

    z: np.ndarray  # (k, M)
    y: np.ndarray  # (M,)
    w: np.ndarray  # (M,)
    theta_mean: np.ndarray  # (M,)

    def expect(self, values):
        return float(np.sum(self.w * values))

    def expect_theta(self, values):
        return float(np.sum(self.w * self.theta_mean * values))


def _tensor_rule(rank, n):
    x, w = standard_normal_rule(n)
    if rank == 0:
        return np.zeros((0, 1)), np.ones(1)
    grids = np.meshgrid(*([x] * rank), indexing="ij")
    wgrids = np.meshgrid(*([w] * rank), indexing="ij")
    xi = np.stack([g.ravel() for g in grids])
    wt = np.prod(np.stack([g.ravel() for g in wgrids]), axis=0)
    return xi, wt


def field_nodes(cov_z, cross, q, model, quad):
    """Build a :class:`NodeSet` for fields ``z`` jointly Gaussian with ``theta``.

    ``cov_z`` is the (k, k) covariance of ``z``, ``cross`` the (k,) vector
    ``Cov(z, theta)`` and ``q = Var(theta)``. Directions of ``cov_z`` with
    eigenvalue below ``1e-14 * max`` are treated as exactly degenerate.
    """
    cov_z = np.atleast_2d(np.asarray(cov_z, dtype=float))
    cross = np.atleast_1d(np.asarray(cross, dtype=float))
    k = cov_z.shape[0]
    n = quad.nodes_per_dim

    evals, evecs = np.linalg.eigh(0.5 * (cov_z + cov_z.T))
    scale = max(float(evals.max(initial=0.0)), 0.0)
    keep = evals > _RANK_TOL * scale if scale > 0 else np.zeros(k, dtype=bool)
    if np.any(evals < -1e-10 * max(scale, 1.0)):
        raise np.linalg.LinAlgError(f"field covariance not PSD: eigenvalues {evals}")
    root = evecs[:, keep] * np.sqrt(evals[keep])  # z = root @ xi
    rank = root.shape[1]

    # theta | xi ~ N(b . xi, v)
    if rank:
        b = (evecs[:, keep].T @ cross) / np.sqrt(evals[keep])
    else:
        b = np.zeros(0)
    v = max(q - float(b @ b), 0.0)

    xi, wt = _tensor_rule(rank, n)
    z = root @ xi if rank else np.zeros((k, 1))
    mu = b @ xi if rank else np.zeros(1)

    if model.kind == "probit":
        ys = np.concatenate([np.ones_like(mu), -np.ones_like(mu)])
        mus = np.concatenate([mu, mu])
        p = label_probability(model, mus, v, ys)
        s2 = model.noise_var + v
        if s2 > 0:
            a = ys * mus / np.sqrt(s2)
            tm = mus + ys * (v / np.sqrt(s2)) * mills_ratio(a)
        else:
            tm = mus
        w = np.concatenate([wt, wt]) * p
        return NodeSet(np.concatenate([z, z], axis=1), ys, w, tm)

    # gaussian likelihood: y | xi ~ N(mu, v + noise_var), one more rule dimension
    x, wy = standard_normal_rule(n)
    sy = np.sqrt(v + model.noise_var)
    ys = (mu[:, None] + sy * x[None, :]).ravel()
    mus = np.repeat(mu, n)
    gain = v / (v + model.noise_var)
    tm = mus + gain * (ys - mus)
    w = (wt[:, None] * wy[None, :]).ravel()
    return NodeSet(np.repeat(z, n, axis=1), ys, w, tm)
