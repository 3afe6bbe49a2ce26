"""Eigendata of ``K = X X^T``, the R-transform of its pseudo-inverse, and the
fixed coupling operator ``A``."""
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .ensemble import fwht

EIG_CLAMP = 1e-10
DENSE_CAP = 8192


class SpectralError(ValueError):
    pass


class DenseBasis:
    """Orthogonal ``O`` with ``K = O^T diag(d) O``, stored as the matrix ``O``."""

    def __init__(self, O):
        self.O = O

    @property
    def n(self):
        return self.O.shape[0]

    def forward(self, v):
        return v @ self.O.T

    def backward(self, v):
        return v @ self.O

    def to_dense(self):
        return self.O.copy()


class HadamardBasis:
    """``O = Pi H~^T`` for the signed-Hadamard design, applied through the FWHT.

    ``Pi`` reorders the Walsh modes so the ``K`` selected columns come first,
    matching the descending spectrum ``(1, ..., 1, 0, ..., 0)``.
    """

    def __init__(self, signs, perm, cols):
        self.signs = signs
        self.perm = perm
        self.cols = cols

    @property
    def n(self):
        return self.signs.shape[0]

    def forward(self, v):
        # O v = Pi (1/sqrt N) H_N Z^T v
        zt = (np.asarray(v, dtype=float) * self.signs)[..., self.perm]
        return (fwht(zt) / np.sqrt(self.n))[..., self.cols]

    def backward(self, v):
        # O^T v = (1/sqrt N) Z H_N Pi^T v
        v = np.asarray(v, dtype=float)
        w = np.empty_like(v)
        w[..., self.cols] = v
        h = fwht(w) / np.sqrt(self.n)
        out = np.empty_like(h)
        out[..., self.perm] = h
        return out * self.signs

    def to_dense(self):
        return self.forward(np.eye(self.n)).T


class IdentityBasis:
    def __init__(self, n):
        self._n = n

    @property
    def n(self):
        return self._n

    def forward(self, v):
        return np.array(v, dtype=float)

    backward = forward

    def to_dense(self):
        return np.eye(self._n)


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Eigenvalues ``d`` of ``K`` (descending) and a basis handle, if any."""

    d: np.ndarray = field(repr=False)
    basis: object = field(default=None, repr=False)
    provenance: str = "computed"

    @property
    def n(self):
        return self.d.shape[0]

    @property
    def q(self):
        return float(np.mean(self.d))

    @property
    def nonzero(self):
        return self.d > 0


def _clamp(d):
    d = np.asarray(d, dtype=float)
    top = float(np.max(d)) if d.size else 0.0
    if top <= 0:
        raise SpectralError("spectrum has no positive eigenvalue")
    if np.any(d < -EIG_CLAMP * top):
        raise SpectralError(f"negative eigenvalue {d.min():.3e} below clamp tolerance")
    d = np.where(d < EIG_CLAMP * top, 0.0, d)
    return d


def from_eigenvalues(d, basis=None, provenance="computed"):
    """Wrap arbitrary eigendata (sorted descending, tiny values clamped to 0)."""
    d = _clamp(d)
    order = np.argsort(-d, kind="stable")
    d = d[order]
    if basis is not None and not np.array_equal(order, np.arange(d.size)):
        if isinstance(basis, DenseBasis):
            basis = DenseBasis(basis.O[order])
        else:
            raise SpectralError("cannot reorder a matrix-free basis")
    d.setflags(write=False)
    return SpectralData(d, basis, provenance)


def spectrum(design, dense_cap=DENSE_CAP):
    """Eigendecomposition of ``K = X X^T`` for a design."""
    N, K = design.shape
    if design.kind == "hadamard":
        d = np.concatenate([np.ones(K), np.zeros(N - K)])
        d.setflags(write=False)
        return SpectralData(d, HadamardBasis(design.signs, design.perm, design.cols), "analytic")
    if N > dense_cap:
        raise SpectralError(f"dense eigendecomposition capped at N={dense_cap}, got N={N}")
    return spectrum_from_matrix(design.dense)


def spectrum_from_matrix(X):
    """Eigendecomposition of ``X X^T`` for an arbitrary dense ``X``."""
    X = np.asarray(X, dtype=float)
    try:
        evals, evecs = scipy.linalg.eigh(X @ X.T, driver="evd")
    except np.linalg.LinAlgError as exc:
        raise SpectralError(f"eigendecomposition failed: {exc}") from exc
    # eigh returns ascending order; K = V diag V^T, so O = V^T
    return from_eigenvalues(evals[::-1], DenseBasis(np.ascontiguousarray(evecs[:, ::-1].T)))


# ---------------------------------------------------------------------------
# Green function and R-transform of the (pseudo-)inverse spectrum.
#
# With the pseudo-inverse convention zero eigenvalues of K drop out of
#     G(z) = (1/N) sum_i d_i / (z d_i - 1).
# Writing z = -lam, G(-lam) = -tau(lam) with tau(lam) = mean(d/(lam d + 1)),
# which falls from q (lam = 0) to 0 (lam -> inf) on the admissible branch.
# ---------------------------------------------------------------------------


def tau(d, lam):
    """``(1/N) sum d_i / (lam d_i + 1)``."""
    den = lam * d + 1.0
    if np.any(den <= 0):
        raise SpectralError(f"lam={lam} makes lam*d_i + 1 non-positive")
    return float(np.mean(d / den))


def tau_prime(d, lam):
    return -float(np.mean((d / (lam * d + 1.0)) ** 2))


def green(spectral, z):
    d = spectral.d
    return float(np.mean(d / (z * d - 1.0)))


def green_prime(spectral, z):
    d = spectral.d
    return -float(np.mean((d / (z * d - 1.0)) ** 2))


def solve_lambda(d, target, tol=1e-12, max_iter=200):
    """Find ``lam >= 0`` with ``tau(lam) = target`` for ``0 < target < q``.

    Safeguarded Newton on the bracket ``[0, 1/target]`` (``tau(lam) < 1/lam``).
    """
    q = float(np.mean(d))
    if not 0 < target < q:
        raise SpectralError(f"target {target} outside (0, q={q})")
    lo, hi = 0.0, 1.0 / target
    lam = 0.5 * (lo + hi)
    for _ in range(max_iter):
        r = tau(d, lam) - target
        if r > 0:
            lo = lam
        else:
            hi = lam
        if abs(r) <= tol * target:
            return lam
        step = r / tau_prime(d, lam)
        cand = lam - step
        lam = cand if lo < cand < hi else 0.5 * (lo + hi)
        if hi - lo <= 1e-16 * max(hi, 1.0):
            return lam
    raise SpectralError(f"G^-1 inversion did not converge for target {target}")


def green_inverse_and_rprime(spectral, omega):
    """``(R(omega), R'(omega))`` for ``-q < omega < 0``."""
    q = spectral.q
    if not -q < omega < 0:
        raise SpectralError(f"omega={omega} outside the admissible interval (-{q}, 0)")
    lam = solve_lambda(spectral.d, -omega)
    z = -lam
    r = z - 1.0 / omega
    rp = 1.0 / green_prime(spectral, z) + 1.0 / omega**2
    return r, rp


def sigma_a_sq_from_rtransform(spectral, chi):
    _, rp = green_inverse_and_rprime(spectral, -chi)
    x = chi * chi * rp
    return x / (1.0 - x)


# ---------------------------------------------------------------------------


class AOperator:
    """``A = (1/chi) O^T diag(d/(lam d + 1)) O - I``.

    Dense bases materialize ``A`` once; matrix-free bases apply it as
    ``O^T diag(a) O``. ``n_applications`` counts calls to :meth:`apply`.
    """

    def __init__(self, spectral, chi, lam, materialize=None):
        if not chi > 0:
            raise SpectralError(f"chi must be > 0, got {chi}")
        d = spectral.d
        den = lam * d + 1.0
        if np.any(den <= 0):
            raise SpectralError("singular lam*d_i + 1")
        self.spectral = spectral
        self.chi = float(chi)
        self.lam = float(lam)
        self.eigenvalues = d / (chi * den) - 1.0
        self.sigma_a_sq = float(np.mean(self.eigenvalues**2))
        self.n_applications = 0
        basis = spectral.basis
        if materialize is None:
            materialize = isinstance(basis, DenseBasis)
        self.matrix = None
        if materialize:
            if basis is None:
                raise SpectralError("cannot build A without a basis")
            O = basis.to_dense()
            M = (O.T * self.eigenvalues) @ O
            self.matrix = 0.5 * (M + M.T)

    @property
    def n(self):
        return self.spectral.n

    @property
    def trace_mean(self):
        return float(np.mean(self.eigenvalues))

    @property
    def cost_per_apply(self):
        """Rough flop count of one application."""
        n = self.n
        if self.matrix is not None:
            return 2 * n * n
        if isinstance(self.spectral.basis, HadamardBasis):
            return 2 * n * int(np.log2(n)) + 3 * n
        return 4 * n * n

    def apply(self, v):
        self.n_applications += 1
        if self.matrix is not None:
            return v @ self.matrix
        if self.spectral.basis is None:
            raise SpectralError("A has no basis to apply")
        b = self.spectral.basis
        return b.backward(b.forward(v) * self.eigenvalues)

    def to_dense(self):
        if self.matrix is not None:
            return self.matrix.copy()
        return self.apply(np.eye(self.n))


def build_A(spectral, chi, lam, materialize=None):
    return AOperator(spectral, chi, lam, materialize)


def hadamard_operator_apply(design, chi, lam, v):
    """``v -> X (X^T v) / (chi (lam + 1)) - v`` for the signed-Hadamard design."""
    return design.matvec(design.rmatvec(v)) / (chi * (lam + 1.0)) - v


def save_eigenvalues_csv(path, spectral, N, K, kind):
    with open(path, "w") as fh:
        fh.write(f"# N={N} K={K} kind={kind}\n")
        for x in spectral.d:
            fh.write(f"{x:.17g}\n")


def load_eigenvalues_csv(path):
    header = {}
    vals = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                for tok in line[1:].split():
                    k, _, v = tok.partition("=")
                    header[k] = v
            elif line:
                vals.append(float(line))
    return np.array(vals), header
