"""Teacher problem instances for the two random design models.

Random streams
--------------
Every draw comes from a Philox generator seeded by
``SeedSequence(seed, spawn_key=(stage, stream))``:

=========  ======  =====================================
stage      stream  contents
=========  ======  =====================================
0 design   0       Gaussian design entries (row-major)
0 design   1       Hadamard row signs ``epsilon``
0 design   2       Hadamard row permutation ``sigma``
0 design   3       Hadamard column subset
1 teacher  0       teacher weights ``w``
1 teacher  1       label noise ``epsilon``
=========  ======  =====================================

so streams never overlap and a given ``(kind, N, K, seed)`` reproduces the
same design on every platform (up to floating-point rounding of the FWHT).
"""
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = 1


def rng_stream(seed, stage, stream):
    ss = np.random.SeedSequence(int(seed), spawn_key=(stage, stream))
    return np.random.Generator(np.random.Philox(ss))


def is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


def fwht(x):
    """Unnormalized Walsh-Hadamard transform along the last axis (Sylvester order).

    Works in place on a float copy; returns ``H_N @ x``.
    """
    x = np.array(x, dtype=float, copy=True)
    n = x.shape[-1]
    if not is_power_of_two(n):
        raise ValueError(f"FWHT length must be a power of two, got {n}")
    lead = x.shape[:-1]
    h = 1
    while h < n:
        v = x.reshape(*lead, n // (2 * h), 2, h)
        a = v[..., 0, :].copy()
        v[..., 0, :] += v[..., 1, :]
        v[..., 1, :] *= -1.0
        v[..., 1, :] += a
        h *= 2
    return x


def sylvester_hadamard(n):
    """Dense ``H_n`` from the block recursion; test helper for small ``n``."""
    if not is_power_of_two(n):
        raise ValueError(f"n must be a power of two, got {n}")
    h = np.ones((1, 1))
    while h.shape[0] < n:
        h = np.block([[h, h], [h, -h]])
    return h


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Design ``X`` (N x K). ``kind`` is ``"gaussian"`` or ``"hadamard"``.

    Dense designs keep the array; Hadamard designs keep the row signs and the
    permutation and are applied through the FWHT.
    """

    kind: str
    n_rows: int
    n_cols: int
    seed: int
    dense: np.ndarray = field(default=None, repr=False)
    signs: np.ndarray = field(default=None, repr=False)
    perm: np.ndarray = field(default=None, repr=False)
    # permutation of the N Walsh columns; the first K are the ones used
    cols: np.ndarray = field(default=None, repr=False)

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    def matvec(self, w):
        """``X @ w``; ``w`` may carry leading batch axes."""
        w = np.asarray(w, dtype=float)
        if w.shape[-1] != self.n_cols:
            raise ValueError(f"expected last dimension {self.n_cols}, got {w.shape[-1]}")
        if self.kind == "gaussian":
            return w @ self.dense.T
        n = self.n_rows
        pad = np.zeros(w.shape[:-1] + (n,))
        pad[..., self.cols[: self.n_cols]] = w
        h = fwht(pad) / np.sqrt(n)
        out = np.empty_like(h)
        out[..., self.perm] = h
        return out * self.signs

    def rmatvec(self, u):
        """``X.T @ u``."""
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.n_rows:
            raise ValueError(f"expected last dimension {self.n_rows}, got {u.shape[-1]}")
        if self.kind == "gaussian":
            return u @ self.dense
        n = self.n_rows
        zt = (u * self.signs)[..., self.perm]
        return (fwht(zt) / np.sqrt(n))[..., self.cols[: self.n_cols]]

    def to_dense(self):
        if self.kind == "gaussian":
            return self.dense.copy()
        return self.matvec(np.eye(self.n_cols)).T

    def gram_trace(self):
        """``tr(X X^T)``."""
        if self.kind == "hadamard":
            return float(self.n_cols)
        return float(np.sum(self.dense**2))


def _check_dims(N, K):
    if int(N) != N or int(K) != K or K < 1 or N < K:
        raise ValueError(f"need integers N >= K >= 1, got N={N}, K={K}")
    return int(N), int(K)


def generate_gaussian_design(N, K, seed):
    """i.i.d. N(0, 1/N) entries, stored row-major."""
    N, K = _check_dims(N, K)
    rng = rng_stream(seed, 0, 0)
    x = rng.standard_normal((N, K)) / np.sqrt(N)
    x.setflags(write=False)
    return DesignMatrix("gaussian", N, K, int(seed), dense=x)


def generate_hadamard_design(N, K, seed, columns="random"):
    """``X = (1/sqrt N) Z H_N P`` with a random signed permutation ``Z``.

    ``P`` keeps ``K`` of the ``N`` Walsh columns. ``columns="first"`` keeps the
    leading ``K``; in Sylvester order rows ``i`` and ``i + N/2`` of those
    columns coincide whenever ``K <= N/2``, so labels come in correlated pairs.
    The default ``"random"`` keeps a uniformly random subset instead.
    """
    N, K = _check_dims(N, K)
    if not is_power_of_two(N):
        raise ValueError(f"Hadamard design needs N a power of two, got {N}")
    signs = np.where(rng_stream(seed, 0, 1).integers(0, 2, size=N) == 1, 1.0, -1.0)
    perm = rng_stream(seed, 0, 2).permutation(N)
    if columns == "random":
        cols = rng_stream(seed, 0, 3).permutation(N)
    elif columns == "first":
        cols = np.arange(N)
    else:
        raise ValueError(f"columns must be 'random' or 'first', got {columns!r}")
    for a in (signs, perm, cols):
        a.setflags(write=False)
    return DesignMatrix("hadamard", N, K, int(seed), signs=signs, perm=perm, cols=cols)


def generate_design(kind, N, K, seed):
    if kind == "gaussian":
        return generate_gaussian_design(N, K, seed)
    if kind == "hadamard":
        return generate_hadamard_design(N, K, seed)
    raise ValueError(f"unknown design kind {kind!r}")


@dataclass(frozen=True, eq=False)
class TeacherInstance:
    design: DesignMatrix
    w: np.ndarray = field(repr=False)
    theta: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    noise_var: float
    seed: int
    likelihood: str = "probit"

    @property
    def N(self):
        return self.design.n_rows

    @property
    def K(self):
        return self.design.n_cols


def generate_teacher(design, noise_var, seed, likelihood="probit"):
    """Draw ``w ~ N(0, I)``, ``theta = X w`` and labels.

    Probit labels are ``sign(theta + eps)`` with ``sign(0) = +1``; the
    ``gaussian`` variant returns ``y = theta + eps``.
    """
    if not np.isfinite(noise_var) or noise_var < 0:
        raise ValueError(f"noise_var must be >= 0, got {noise_var}")
    w = rng_stream(seed, 1, 0).standard_normal(design.n_cols)
    eps = np.sqrt(noise_var) * rng_stream(seed, 1, 1).standard_normal(design.n_rows)
    theta = design.matvec(w)
    if likelihood == "probit":
        y = np.where(theta + eps >= 0, 1.0, -1.0)
    elif likelihood == "gaussian":
        y = theta + eps
    else:
        raise ValueError(f"unknown likelihood {likelihood!r}")
    for a in (w, theta, y):
        a.setflags(write=False)
    return TeacherInstance(design, w, theta, y, float(noise_var), int(seed), likelihood)


def save_instance(path, teacher, include_design=False):
    """Write a teacher instance to an ``.npz`` container.

    Header fields: ``format_version, kind, N, K, design_seed, seed, noise_var,
    likelihood``; payload ``w`` and ``y``. The design is regenerated from its
    seed on load unless ``include_design`` stores the dense matrix too.
    """
    d = teacher.design
    payload = dict(
        format_version=FORMAT_VERSION,
        kind=d.kind,
        N=d.n_rows,
        K=d.n_cols,
        design_seed=d.seed,
        seed=teacher.seed,
        noise_var=teacher.noise_var,
        likelihood=teacher.likelihood,
        w=np.asarray(teacher.w),
        y=np.asarray(teacher.y),
    )
    if include_design and d.kind == "gaussian":
        payload["X"] = np.asarray(d.dense)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_instance(path):
    with np.load(path, allow_pickle=False) as z:
        if int(z["format_version"]) != FORMAT_VERSION:
            raise ValueError(f"unsupported instance format {int(z['format_version'])}")
        kind = str(z["kind"])
        design = generate_design(kind, int(z["N"]), int(z["K"]), int(z["design_seed"]))
        if "X" in z.files and not np.array_equal(z["X"], design.dense):
            raise ValueError("stored design does not match its seed")
        w = np.array(z["w"])
        y = np.array(z["y"])
        theta = design.matvec(w)
        for a in (w, theta, y):
            a.setflags(write=False)
        return TeacherInstance(
            design, w, theta, y, float(z["noise_var"]), int(z["seed"]), str(z["likelihood"])
        )
