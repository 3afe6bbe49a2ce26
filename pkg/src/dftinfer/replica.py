"""Replica-symmetric fixed point ``(chi, lam, nu)`` of the static theory."""
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .likelihood import moments
from .quadrature import QuadratureSpec, field_nodes
from .spectral import AOperator, SpectralError, tau

log = logging.getLogger(__name__)

# kappa this close to zero is the degenerate point-mass limit (e.g. K = I)
_KAPPA_FLOOR = 1e-13


class ReplicaError(RuntimeError):
    pass


@dataclass(frozen=True)
class ReplicaSolution:
    chi: float
    lam: float
    nu: float
    kappa: float
    q: float
    sigma_A_sq: float
    residual: float
    iterations: int

    def to_text(self):
        keys = ("chi", "lam", "nu", "kappa", "q", "sigma_A_sq", "residual", "iterations")
        names = {"lam": "lambda"}
        vals = {k: float(getattr(self, k)) for k in keys}
        vals["iterations"] = int(self.iterations)
        return "".join(f"{names.get(k, k)}={vals[k]!r}\n" for k in keys)

    @classmethod
    def from_text(cls, text):
        vals = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, _, v = line.partition("=")
            vals[k.strip()] = v.strip()
        return cls(
            chi=float(vals["chi"]),
            lam=float(vals["lambda"]),
            nu=float(vals["nu"]),
            kappa=float(vals["kappa"]),
            q=float(vals["q"]),
            sigma_A_sq=float(vals["sigma_A_sq"]),
            residual=float(vals["residual"]),
            iterations=int(vals["iterations"]),
        )

    def asdict(self):
        return asdict(self)


def rs_nodes(kappa, q, model, quad):
    """Nodes for the law ``N(theta|0,q) p(y|theta) N(rho|kappa theta, kappa)``."""
    if kappa < -_KAPPA_FLOOR:
        raise ReplicaError(f"kappa={kappa} <= 0: RS measure undefined")
    if q <= 0:
        raise ReplicaError(f"q={q} must be > 0")
    kappa = max(kappa, 0.0)
    return field_nodes([[kappa * kappa * q + kappa]], [kappa * q], q, model, quad)


def rs_expectation(g, params, model, quad=QuadratureSpec(), with_theta=False):
    """``E[g(rho, y)]`` (or ``E[theta g]``) under the RS law.

    ``params`` needs ``kappa`` and ``q``. ``g`` receives arrays ``(rho, y)``.
    """
    nodes = rs_nodes(params["kappa"], params["q"], model, quad)
    vals = g(nodes.z[0], nodes.y)
    return nodes.expect_theta(vals) if with_theta else nodes.expect(vals)


def rs_moments(nu, q, model, quad):
    """``(E[m'], E[m'^2])`` under the RS law with ``kappa = nu - 1/q``."""
    nodes = rs_nodes(nu - 1.0 / q, q, model, quad)
    _, mp = moments(model, nodes.z[0], nodes.y, nu)
    return nodes.expect(mp), nodes.expect(mp * mp)


def _nu_map(d, chi, nu):
    lam = 1.0 / chi - nu
    return 1.0 / tau(d, lam) - lam, lam


def _iterate(d, q, model, quad, nu0, damping, tol, max_iter, order="chi-first"):
    nu = float(nu0)
    chi = None
    best = np.inf
    stall = 0
    relaxed = False
    residual = np.inf
    for it in range(1, max_iter + 1):
        if nu - 1.0 / q < -_KAPPA_FLOOR:
            raise ReplicaError(
                f"kappa <= 0 at iterate {it}: nu={nu!r}, chi={chi!r}, q={q!r}"
            )
        chi_new, _ = rs_moments(nu, q, model, quad)
        if not 0 < chi_new < q:
            raise ReplicaError(f"chi={chi_new!r} escaped (0, q={q}) at iterate {it}")
        try:
            nu_new, lam = _nu_map(d, chi_new, nu)
        except SpectralError as exc:
            raise ReplicaError(f"iterate {it}: {exc} (nu={nu!r}, chi={chi_new!r})") from exc
        nu_next = damping * nu + (1.0 - damping) * nu_new
        changes = [abs(nu_next - nu) / max(abs(nu), 1e-300)]
        if chi is not None:
            changes.append(abs(chi_new - chi) / chi)
        residual = max(changes)
        chi, nu = chi_new, nu_next
        if residual < tol:
            return chi, nu, residual, it
        if residual < best:
            best = residual
            stall = 0
        else:
            stall += 1
        if stall >= 100:
            if relaxed:
                raise ReplicaError(
                    f"fixed-point iteration stalled at residual {residual:.3e} "
                    f"(chi={chi!r}, nu={nu!r}, iterate {it})"
                )
            damping = 0.5 * (1.0 + damping)  # halve the step length once
            relaxed = True
            stall = 0
            log.warning("replica iteration stalled; step length halved (damping=%.3f)", damping)
    raise ReplicaError(f"no convergence in {max_iter} iterations (residual {residual:.3e})")


def _finish(spectral, model, quad, chi, nu, residual, iterations):
    q = spectral.q
    chi, _ = rs_moments(nu, q, model, quad)
    lam = 1.0 / chi - nu
    A = AOperator(spectral, chi, lam, materialize=False)
    return ReplicaSolution(
        chi=chi,
        lam=lam,
        nu=nu,
        kappa=nu - 1.0 / q,
        q=q,
        sigma_A_sq=A.sigma_a_sq,
        residual=residual,
        iterations=iterations,
    )


def solve_replica(
    spectral, model, quad=QuadratureSpec(), damping=0.5, tol=1e-12, max_iter=10000, nu0=None
):
    """Damped fixed-point iteration of ``chi = E[m'_nu]``, ``lam = 1/chi - nu``,
    ``nu = 1/tau(lam) - lam``."""
    if not 0 <= damping < 1:
        raise ValueError("damping must lie in [0, 1)")
    q = spectral.q
    if not q > 0:
        raise ReplicaError("spectrum is trivial (q = 0)")
    d = np.asarray(spectral.d)
    if nu0 is None:
        nu0 = 1.0 / q + 1.0
    chi, nu, residual, it = _iterate(d, q, model, quad, nu0, damping, tol, max_iter)
    return _finish(spectral, model, quad, chi, nu, residual, it)


def solve_replica_nu_first(spectral, model, quad=QuadratureSpec(), tol=1e-12, max_iter=10000):
    """Alternative ordering: ``(chi, lam) -> nu -> chi``, starting from ``chi0 = q/2``.

    Used to check that the converged point does not depend on update order.
    """
    q = spectral.q
    d = np.asarray(spectral.d)
    chi = 0.5 * q
    nu = 1.0 / q + 1.0
    residual = np.inf
    for it in range(1, max_iter + 1):
        lam = 1.0 / chi - nu
        nu_new = 1.0 / tau(d, lam) - lam
        nu_next = 0.5 * nu + 0.5 * nu_new
        chi_new, _ = rs_moments(nu_next, q, model, quad)
        residual = max(abs(nu_next - nu) / abs(nu), abs(chi_new - chi) / chi)
        chi, nu = chi_new, nu_next
        if residual < tol:
            return _finish(spectral, model, quad, chi, nu, residual, it)
    raise ReplicaError(f"no convergence in {max_iter} iterations (residual {residual:.3e})")


def find_fixed_points(spectral, model, quad=QuadratureSpec(), n_starts=5, tol=1e-12, rel_gap=1e-6):
    """Run damped restarts from ``n_starts`` spread initial ``nu`` values.

    Returns the distinct converged solutions (distinct = relative gap in chi
    above ``rel_gap``); starts that fail are skipped.
    """
    q = spectral.q
    kappas = np.geomspace(1e-2, 1e2, n_starts)
    found = []
    for k0 in kappas:
        try:
            sol = solve_replica(spectral, model, quad, tol=tol, nu0=1.0 / q + k0)
        except ReplicaError as exc:
            log.info("restart from kappa0=%g failed: %s", k0, exc)
            continue
        if all(abs(sol.chi - s.chi) > rel_gap * s.chi for s in found):
            found.append(sol)
    return found


def nu_equation_residual(spectral, sol):
    return abs(sol.nu - (1.0 / tau(spectral.d, sol.lam) - sol.lam))
