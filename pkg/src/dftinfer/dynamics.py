"""Simulation of the fixed-matrix algorithm and the VAMP baseline.

The fixed-matrix iteration is ``eta(t) = <m'_nu(rho(t-1), y)>`` followed by
``rho(t) = A f_eta(t)(rho(t-1), y)``; VAMP recomputes ``nu``, ``lam`` and the
coupling operator at every step.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from .likelihood import moments
from .spectral import tau

log = logging.getLogger(__name__)

CONVERGED_DELTA = 1e-24
DIVERGENCE_FACTOR = 1e6


class DivergenceError(FloatingPointError):
    pass


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Iterates ``rho(0..T)`` (shape ``(T+1, N)``) and ``eta(1..T)``."""

    rho: np.ndarray = field(repr=False)
    eta: np.ndarray = field(repr=False)
    algo: str
    converged_at: int = None
    vamp: object = field(default=None, repr=False)

    @property
    def T(self):
        return self.eta.shape[0]

    @property
    def final(self):
        return self.rho[-1]

    def step_deltas(self):
        """``(1/N) ||rho(t) - rho(t-1)||^2`` for ``t = 1..T``."""
        return np.mean(np.diff(self.rho, axis=0) ** 2, axis=1)

    def deltas_to_final(self):
        """``(1/N) ||rho(t) - rho(T)||^2`` for ``t = 0..T``."""
        return np.mean((self.rho - self.rho[-1]) ** 2, axis=1)


@dataclass(frozen=True, eq=False)
class VampState:
    nu: np.ndarray  # nu(0..T)
    lam: np.ndarray  # lam(1..T)
    tau: np.ndarray  # tau(1..T)
    eta: np.ndarray  # eta(1..T)


def _check_finite(rho, t, ref_power):
    if not np.all(np.isfinite(rho)):
        raise DivergenceError(f"non-finite iterate at step {t}")
    power = float(np.mean(rho * rho))
    if ref_power is not None and ref_power > 0 and power > DIVERGENCE_FACTOR * ref_power:
        raise DivergenceError(f"iterate power {power:.3e} exploded at step {t}")
    return power


def _first_converged(deltas):
    idx = np.flatnonzero(deltas < CONVERGED_DELTA)
    return int(idx[0]) + 1 if idx.size else None


def run_algorithm(A, teacher, replica, model, T, rho0=None, eta_mode="empirical"):
    """Iterate the fixed-matrix algorithm for ``T`` steps from ``rho0`` (zero by default).

    ``eta_mode="replica"`` replaces the empirical ``eta(t)`` by the RS value ``chi``.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if eta_mode not in ("empirical", "replica"):
        raise ValueError(f"unknown eta_mode {eta_mode!r}")
    y = np.asarray(teacher.y)
    N = y.shape[0]
    nu = replica.nu
    rho = np.zeros((T + 1, N))
    if rho0 is not None:
        rho[0] = rho0
    eta = np.empty(T)
    ref_power = None
    for t in range(1, T + 1):
        m, mp = moments(model, rho[t - 1], y, nu)
        eta[t - 1] = float(np.mean(mp)) if eta_mode == "empirical" else replica.chi
        if not eta[t - 1] > 0:
            raise DivergenceError(f"eta({t}) = {eta[t - 1]} is not positive")
        rho[t] = A.apply(m / eta[t - 1] - rho[t - 1])
        power = _check_finite(rho[t], t, ref_power)
        if t == 1:
            ref_power = power
    deltas = np.mean(np.diff(rho, axis=0) ** 2, axis=1)
    return Trajectory(rho, eta, "simplified", _first_converged(deltas))


def run_vamp(spectral, teacher, model, T, nu0, rho0=None):
    """VAMP with the coupling operator ``A(t)`` applied as ``O^T diag O``."""
    if T < 1:
        raise ValueError("T must be >= 1")
    basis = spectral.basis
    if basis is None:
        raise ValueError("VAMP needs a spectral basis")
    d = np.asarray(spectral.d)
    y = np.asarray(teacher.y)
    N = y.shape[0]
    rho = np.zeros((T + 1, N))
    if rho0 is not None:
        rho[0] = rho0
    nus = np.empty(T + 1)
    nus[0] = nu0
    lams = np.empty(T)
    taus = np.empty(T)
    eta = np.empty(T)
    ref_power = None
    for t in range(1, T + 1):
        m, mp = moments(model, rho[t - 1], y, nus[t - 1])
        eta[t - 1] = float(np.mean(mp))
        lams[t - 1] = 1.0 / eta[t - 1] - nus[t - 1]
        den = lams[t - 1] * d + 1.0
        if np.any(den <= 0):
            raise DivergenceError(f"lam({t}) d_i + 1 <= 0")
        taus[t - 1] = tau(d, lams[t - 1])
        if not taus[t - 1] > 0:
            raise DivergenceError(f"tau({t}) = {taus[t - 1]} is not positive")
        nus[t] = 1.0 / taus[t - 1] - lams[t - 1]
        a = d / (taus[t - 1] * den) - 1.0
        g = m / eta[t - 1] - rho[t - 1]
        rho[t] = basis.backward(basis.forward(g) * a)
        power = _check_finite(rho[t], t, ref_power)
        if t == 1:
            ref_power = power
    deltas = np.mean(np.diff(rho, axis=0) ** 2, axis=1)
    state = VampState(nus, lams, taus, eta)
    return Trajectory(rho, eta, "vamp", _first_converged(deltas), vamp=state)


def tap_residual(rho, m, spectral, nu):
    """RMS of ``rho - (nu m - K^+ m)`` over the nonzero eigenspace of ``K``."""
    b = spectral.basis
    nz = spectral.nonzero
    r = b.forward(np.asarray(rho) - nu * np.asarray(m))[nz]
    mt = b.forward(np.asarray(m))[nz]
    res = r + mt / spectral.d[nz]
    return float(np.sqrt(np.mean(res * res)))


def _derivative_diagonals(traj, teacher, model, nu, t, s):
    y = np.asarray(teacher.y)
    return [
        moments(model, traj.rho[r - 1], y, nu)[1] / traj.eta[r - 1] - 1.0
        for r in range(s + 1, t + 1)
    ]


def susceptibility_trace(A, traj, teacher, model, nu, t, s, max_n=1024):
    """Diagnostics of the two-time susceptibility at small ``N``.

    Returns ``(trace, diag_sq)``: ``(1/N) tr[A E(s+1) ... A E(t)]`` and
    ``(1/N) sum_i (d rho_i(t)/d rho_i(s))^2`` with the Jacobian
    ``A E(t) A E(t-1) ... A E(s+1)``.
    """
    if not 0 <= s < t <= traj.T:
        raise ValueError(f"need 0 <= s < t <= T, got s={s}, t={t}")
    N = A.n
    if N > max_n:
        raise ValueError(f"susceptibility diagnostic limited to N <= {max_n}")
    M = A.to_dense()
    E = _derivative_diagonals(traj, teacher, model, nu, t, s)
    prod = np.eye(N)
    for e in E:  # A E(s+1) A E(s+2) ... A E(t)
        prod = (prod @ M) * e[None, :]
    trace = float(np.trace(prod)) / N
    jac = np.eye(N)
    for e in E:  # builds A E(t) ... A E(s+1) from the right
        jac = M @ (e[:, None] * jac)
    diag_sq = float(np.mean(np.diag(jac) ** 2))
    return trace, diag_sq


@dataclass(frozen=True, eq=False)
class EmpiricalStats:
    C_rho: np.ndarray  # (T+1, T+1), index t
    kappa: np.ndarray  # (T+1,)
    delta: np.ndarray  # (T+1, T+1)


def empirical_stats(traj, teacher, q):
    """Sample two-time statistics of a trajectory."""
    rho = traj.rho
    N = rho.shape[1]
    c = rho @ rho.T / N
    c = 0.5 * (c + c.T)
    kappa = rho @ np.asarray(teacher.theta) / (N * q)
    delta = np.empty_like(c)
    for t in range(rho.shape[0]):
        delta[t] = np.sum((rho - rho[t]) ** 2, axis=1) / N
    delta = 0.5 * (delta + delta.T)
    return EmpiricalStats(c, kappa, delta)


def save_trajectory_csv(path, traj, teacher, q):
    """Columns ``t, eta_t, delta_to_final, kappa_hat_t`` (``eta_0`` left blank)."""
    kappa = traj.rho @ np.asarray(teacher.theta) / (traj.rho.shape[1] * q)
    dfin = traj.deltas_to_final()
    with open(path, "w") as fh:
        fh.write("t,eta_t,delta_to_final,kappa_hat_t\n")
        for t in range(traj.T + 1):
            eta = "" if t == 0 else f"{traj.eta[t - 1]:.17g}"
            fh.write(f"{t},{eta},{dfin[t]:.17g},{kappa[t]:.17g}\n")


def save_iterates(path, traj):
    """Raw dump: 16-byte header ``b'RHO1'``, uint32 T+1, uint64 N, then
    ``(T+1) * N`` little-endian float64 values, step-major."""
    rho = np.ascontiguousarray(traj.rho, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(b"RHO1")
        fh.write(np.array([rho.shape[0]], dtype="<u4").tobytes())
        fh.write(np.array([rho.shape[1]], dtype="<u8").tobytes())
        fh.write(rho.tobytes())


def load_iterates(path):
    with open(path, "rb") as fh:
        if fh.read(4) != b"RHO1":
            raise ValueError("not an iterate dump")
        steps = int(np.frombuffer(fh.read(4), dtype="<u4")[0])
        n = int(np.frombuffer(fh.read(8), dtype="<u8")[0])
        data = np.frombuffer(fh.read(), dtype="<f8")
    return data.reshape(steps, n)
