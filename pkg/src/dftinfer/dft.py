"""Order-parameter recursions for the effective single-node process.

A node evolves as ``rho(t) = phi(t) + kappa(t) theta`` with ``{phi}`` a
zero-mean Gaussian path of covariance ``C_phi``; the recursions below give
``kappa(t)`` and ``C_phi`` from expectations of ``gamma(t) = f_{chi(t)}(rho(t-1), y)``.
The start is the deterministic ``rho(0) = 0``.
"""
from dataclasses import dataclass, field

import numpy as np

from .likelihood import moments
from .quadrature import QuadratureSpec, field_nodes
from .replica import rs_nodes

MAX_HORIZON = 64
# the first steps have a wide rho(1) law; 61 nodes leave ~1e-5 errors there
THEORY_QUAD = QuadratureSpec(121)


class DFTError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class TheoryTrace:
    """Theory predictions for ``t = 1..T`` (arrays are indexed ``t - 1``)."""

    T: int
    chi_t: np.ndarray = field(repr=False)
    kappa_t: np.ndarray = field(repr=False)
    C_phi: np.ndarray = field(repr=False)
    C_rho: np.ndarray = field(repr=False)
    mu_rho: float = float("nan")
    at_margin: float = float("nan")
    replica: object = field(default=None, repr=False)

    def delta(self, t, s):
        return delta_rho(self, t, s)

    def delta_matrix(self):
        c = self.C_rho
        dg = np.diag(c)
        return dg[:, None] + dg[None, :] - 2.0 * c


def _coefficients(replica):
    kap, q, lam, sa = replica.kappa, replica.q, replica.lam, replica.sigma_A_sq
    # kappa at rounding level is the degenerate point-mass case (e.g. K = I)
    if not kap > 1e-12 * max(1.0, replica.nu):
        raise DFTError(f"kappa={kap} must be > 0 for the dynamical recursion")
    theta_gain = kap / (q * lam)
    offset = (kap - sa * (lam + q * lam * lam)) / (kap * kap)
    return theta_gain, offset


def dft_recursion(replica, model, T, quad=THEORY_QUAD):
    """Run the forward recursion for ``chi(t)``, ``kappa(t)``, ``C_phi`` and ``C_rho``."""
    if not 1 <= T <= MAX_HORIZON:
        raise ValueError(f"horizon T must be in [1, {MAX_HORIZON}], got {T}")
    q, nu, sa = replica.q, replica.nu, replica.sigma_A_sq
    theta_gain, offset = _coefficients(replica)

    # index 0 holds the deterministic start rho(0) = 0
    chi = np.zeros(T + 1)
    kap = np.zeros(T + 1)
    c_phi = np.zeros((T + 1, T + 1))
    c_rho = np.zeros((T + 1, T + 1))

    def gamma(z, y, t):
        m, _ = moments(model, z, y, nu)
        return m / chi[t] - z

    for t in range(1, T + 1):
        p = t - 1
        try:
            nodes = field_nodes([[c_rho[p, p]]], [q * kap[p]], q, model, quad)
        except np.linalg.LinAlgError as exc:
            raise DFTError(f"C_rho({p},{p}) invalid: {exc}") from exc
        rho = nodes.z[0]
        m, mp = moments(model, rho, nodes.y, nu)
        chi[t] = nodes.expect(mp)
        g = m / chi[t] - rho
        kap[t] = theta_gain * nodes.expect_theta(g)
        egg = np.empty(t + 1)
        egg[t] = nodes.expect(g * g)
        for s in range(1, t):
            ps = s - 1
            cov = [[c_rho[p, p], c_rho[p, ps]], [c_rho[ps, p], c_rho[ps, ps]]]
            try:
                pair = field_nodes(cov, [q * kap[p], q * kap[ps]], q, model, quad)
            except np.linalg.LinAlgError as exc:
                raise DFTError(f"C_rho block at (t, s) = ({t}, {s}) not PSD: {exc}") from exc
            egg[s] = pair.expect(gamma(pair.z[0], pair.y, t) * gamma(pair.z[1], pair.y, s))
        for s in range(1, t + 1):
            val = sa * egg[s] + kap[t] * kap[s] * offset
            c_phi[t, s] = c_phi[s, t] = val
            c_rho[t, s] = c_rho[s, t] = val + q * kap[t] * kap[s]
        if not np.all(np.isfinite(c_rho[t, : t + 1])):
            raise DFTError(f"non-finite covariance at t={t}")

    mu, at = convergence_rate(replica, model, quad)
    return TheoryTrace(
        T=T,
        chi_t=chi[1:].copy(),
        kappa_t=kap[1:].copy(),
        C_phi=c_phi[1:, 1:].copy(),
        C_rho=c_rho[1:, 1:].copy(),
        mu_rho=mu,
        at_margin=at,
        replica=replica,
    )


def delta_rho(theory, t, s):
    """``E[(rho(t) - rho(s))^2]`` for ``1 <= t, s <= T``."""
    T = theory.T
    if not (1 <= t <= T and 1 <= s <= T):
        raise IndexError(f"times must lie in [1, {T}], got ({t}, {s})")
    c = theory.C_rho
    i, j = t - 1, s - 1
    if i == j:
        return 0.0
    return float(c[i, i] + c[j, j] - 2.0 * c[i, j])


def r_prime_from_sigma(replica):
    """``R'(-chi)`` recovered from ``sigma_A^2 = x/(1-x)``, ``x = chi^2 R'(-chi)``."""
    sa = replica.sigma_A_sq
    return sa / ((1.0 + sa) * replica.chi**2)


def convergence_rate(replica, model, quad=QuadratureSpec(), r_prime=None):
    """``(mu_rho, at_margin)`` at the RS fixed point.

    ``mu_rho = sigma_A^2/chi^2 (E[m'^2] - chi^2)``, checked against the form
    ``sigma_A^2 E[(m'/chi - 1)^2]``; ``at_margin = 1 - E[m'^2] R'(-chi)``.
    """
    if not replica.kappa > -1e-13:
        raise DFTError(f"kappa={replica.kappa} <= 0")
    if not 0 < replica.chi < replica.q:
        raise DFTError(f"chi={replica.chi} outside (0, q)")
    nodes = rs_nodes(replica.kappa, replica.q, model, quad)
    _, mp = moments(model, nodes.z[0], nodes.y, replica.nu)
    chi = replica.chi
    em2 = nodes.expect(mp * mp)
    mu = replica.sigma_A_sq / chi**2 * (em2 - chi**2)
    mu_alt = replica.sigma_A_sq * nodes.expect((mp / chi - 1.0) ** 2)
    if abs(mu - mu_alt) > 1e-10 * max(1.0, abs(mu)):
        raise DFTError(f"rate forms disagree: {mu!r} vs {mu_alt!r}")
    if r_prime is None:
        r_prime = r_prime_from_sigma(replica)
    return float(mu), float(1.0 - em2 * r_prime)


def stationarity_moments(replica, model, quad=QuadratureSpec()):
    """``(E[theta gamma], E[gamma^2])`` with ``gamma = f_chi(rho, y)`` under the RS law;
    the fixed-point identities predict ``(q lam, lam + q lam^2)``."""
    nodes = rs_nodes(replica.kappa, replica.q, model, quad)
    rho = nodes.z[0]
    m, _ = moments(model, rho, nodes.y, replica.nu)
    g = m / replica.chi - rho
    return nodes.expect_theta(g), nodes.expect(g * g)


@dataclass(frozen=True, eq=False)
class MCEstimates:
    """Monte Carlo moments of the effective process for ``t = 1..T``.

    ``C_rho_direct``/``kappa_direct`` are sample moments of the assembled
    ``rho(t)``; ``C_rho_next``/``kappa_next`` push the sampled ``gamma(t)``
    through the covariance recursion instead of quadrature. ``*_se`` are
    standard errors.
    """

    samples: int
    mean_rho: np.ndarray
    mean_rho_se: np.ndarray
    rho_theta: np.ndarray
    rho_theta_se: np.ndarray
    C_rho_direct: np.ndarray
    C_rho_direct_se: np.ndarray
    kappa_next: np.ndarray
    kappa_next_se: np.ndarray
    C_rho_next: np.ndarray
    C_rho_next_se: np.ndarray


def _psd_root(c):
    c = 0.5 * (c + c.T)
    evals, evecs = np.linalg.eigh(c)
    if evals.min(initial=0.0) < -1e-10 * max(1.0, evals.max(initial=0.0)):
        raise DFTError(f"C_phi not PSD (min eigenvalue {evals.min():.3e})")
    return evecs * np.sqrt(np.clip(evals, 0.0, None))


def single_node_mc(theory, model, samples=1_000_000, seed=0, T=None, block=100_000):
    """Sample the effective process directly and estimate its two-time moments.

    Block ``b`` draws from ``SeedSequence(seed, spawn_key=(2, b))``.
    """
    rep = theory.replica
    T = theory.T if T is None else min(T, theory.T)
    q, nu, sa = rep.q, rep.nu, rep.sigma_A_sq
    theta_gain, offset = _coefficients(rep)
    root = _psd_root(theory.C_phi[:T, :T])
    kappa_t = theory.kappa_t[:T]
    chi_t = theory.chi_t[:T]

    rho = np.empty((T, samples))
    gam = np.empty((T, samples))
    theta = np.empty(samples)
    for b, start in enumerate(range(0, samples, block)):
        n = min(block, samples - start)
        ss = np.random.SeedSequence(int(seed), spawn_key=(2, b))
        rng = np.random.Generator(np.random.Philox(ss))
        th = np.sqrt(q) * rng.standard_normal(n)
        noise = rng.standard_normal(n)
        if model.kind == "probit":
            y = np.where(th + np.sqrt(model.noise_var) * noise >= 0, 1.0, -1.0)
        else:
            y = th + np.sqrt(model.noise_var) * noise
        phi = root @ rng.standard_normal((T, n))
        r = phi + kappa_t[:, None] * th[None, :]
        prev = np.vstack([np.zeros((1, n)), r[:-1]])
        m, _ = moments(model, prev, y[None, :], nu)
        sl = slice(start, start + n)
        rho[:, sl] = r
        gam[:, sl] = m / chi_t[:, None] - prev
        theta[sl] = th

    def mean_se(x):
        return x.mean(axis=-1), x.std(axis=-1, ddof=1) / np.sqrt(x.shape[-1])

    mean_rho, mean_rho_se = mean_se(rho)
    rho_theta, rho_theta_se = mean_se(rho * theta)
    c_dir = np.empty((T, T))
    c_dir_se = np.empty((T, T))
    tg = gam * theta
    k_next, k_next_se = mean_se(tg)
    k_next = theta_gain * k_next
    k_next_se = theta_gain * k_next_se
    c_next = np.empty((T, T))
    c_next_se = np.empty((T, T))
    w = offset + q
    for i in range(T):
        for j in range(i, T):
            c_dir[i, j], c_dir_se[i, j] = mean_se(rho[i] * rho[j])
            gg = gam[i] * gam[j]
            c_next[i, j] = sa * gg.mean() + w * k_next[i] * k_next[j]
            # delta-method influence of the nonlinear estimator
            infl = sa * gg + w * theta_gain * (k_next[j] * tg[i] + k_next[i] * tg[j])
            c_next_se[i, j] = infl.std(ddof=1) / np.sqrt(samples)
            for a in (c_dir, c_dir_se, c_next, c_next_se):
                a[j, i] = a[i, j]
    return MCEstimates(
        samples, mean_rho, mean_rho_se, rho_theta, rho_theta_se, c_dir, c_dir_se,
        k_next, k_next_se, c_next, c_next_se,
    )


def mc_zscores(theory, mc, rtol=1e-12):
    """``(z_next, z_direct)``: MC minus theory ``C_rho`` in units of standard error.

    The denominator adds ``rtol * |C_rho|`` in quadrature so that entries whose
    sampling variance vanishes (e.g. ``C_rho(1,1)`` when the ``kappa kappa``
    coefficient is zero) are judged against floating-point accuracy, not zero.
    """
    h = mc.C_rho_next.shape[0]
    c = theory.C_rho[:h, :h]
    floor = rtol * np.abs(c)
    z_next = (mc.C_rho_next - c) / np.hypot(mc.C_rho_next_se, floor)
    z_direct = (mc.C_rho_direct - c) / np.hypot(mc.C_rho_direct_se, floor)
    return z_next, z_direct


def rate_from_recursion(theory, window=None, floor=1e-26):
    """Least-squares log-slope of ``Delta_rho(t, T)`` over ``t`` in ``window``."""
    T = theory.T
    if window is None:
        window = (3, max(4, T // 2))
    ts = np.arange(window[0], window[1] + 1)
    dl = np.array([delta_rho(theory, int(t), T) for t in ts])
    ok = dl > floor
    if ok.sum() < 2:
        raise DFTError("not enough points above the floor to fit a rate")
    slope = np.polyfit(ts[ok], np.log(dl[ok]), 1)[0]
    return float(slope)


def save_theory(dirpath, theory):
    """Write ``C_phi.csv``, ``C_rho.csv`` (rows ``t,s,value``) and ``theory_scalars.txt``."""
    import os

    os.makedirs(dirpath, exist_ok=True)
    for name, mat in (("C_phi.csv", theory.C_phi), ("C_rho.csv", theory.C_rho)):
        with open(os.path.join(dirpath, name), "w") as fh:
            fh.write("t,s,value\n")
            for i in range(theory.T):
                for j in range(theory.T):
                    fh.write(f"{i + 1},{j + 1},{mat[i, j]:.17g}\n")
    with open(os.path.join(dirpath, "theory_scalars.txt"), "w") as fh:
        fh.write(f"T={theory.T}\n")
        fh.write(f"mu_rho={theory.mu_rho:.17g}\n")
        fh.write(f"at_margin={theory.at_margin:.17g}\n")
        for i in range(theory.T):
            fh.write(f"kappa_t[{i + 1}]={theory.kappa_t[i]:.17g}\n")
        for i in range(theory.T):
            fh.write(f"chi_t[{i + 1}]={theory.chi_t[i]:.17g}\n")


def load_theory(dirpath, replica=None):
    """Inverse of :func:`save_theory`."""
    import os

    scal = {}
    with open(os.path.join(dirpath, "theory_scalars.txt")) as fh:
        for line in fh:
            k, _, v = line.strip().partition("=")
            if k:
                scal[k] = v
    T = int(scal["T"])
    mats = {}
    for name in ("C_phi.csv", "C_rho.csv"):
        m = np.empty((T, T))
        raw = np.loadtxt(os.path.join(dirpath, name), delimiter=",", skiprows=1, ndmin=2)
        m[raw[:, 0].astype(int) - 1, raw[:, 1].astype(int) - 1] = raw[:, 2]
        mats[name] = m
    kap = np.array([float(scal[f"kappa_t[{i}]"]) for i in range(1, T + 1)])
    chi = np.array([float(scal[f"chi_t[{i}]"]) for i in range(1, T + 1)])
    return TheoryTrace(
        T=T,
        chi_t=chi,
        kappa_t=kap,
        C_phi=mats["C_phi.csv"],
        C_rho=mats["C_rho.csv"],
        mu_rho=float(scal["mu_rho"]),
        at_margin=float(scal["at_margin"]),
        replica=replica,
    )
