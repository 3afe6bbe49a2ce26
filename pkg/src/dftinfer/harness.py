"""End-to-end experiments: configuration, cached per-seed pipeline, comparison reports."""
import hashlib
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import NamedTuple

import numpy as np

from . import dft, dynamics
from .ensemble import generate_design, generate_teacher, is_power_of_two, load_instance, save_instance
from .likelihood import LikelihoodModel, moments
from .quadrature import QuadratureSpec
from .replica import ReplicaSolution, find_fixed_points, solve_replica
from .spectral import DENSE_CAP, build_A, save_eigenvalues_csv, spectrum

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DB_CAP = 300.0


class StageError(RuntimeError):
    """A pipeline stage failed; the message names the stage and seed."""


# ---------------------------------------------------------------------------
# configuration


def _parse_seeds(v):
    if isinstance(v, str):
        v = [s for s in v.replace(" ", "").split(",") if s]
    return tuple(int(s) for s in v)


def _parse_pair(v):
    if isinstance(v, str):
        a, b = v.split(",")
        return int(a), int(b)
    a, b = v
    return int(a), int(b)


def _parse_opt_float(v):
    if v is None or (isinstance(v, str) and v.strip().lower() in ("", "none")):
        return None
    return float(v)


@dataclass(frozen=True)
class ExperimentConfig:
    """One scenario. Serialized as flat ``key=value`` lines (see :meth:`to_text`)."""

    name: str = "custom"
    ensemble: str = "gaussian"
    N: int = 4096
    K: int = 2048
    noise_var: float = 1e-2
    likelihood: str = "probit"
    T: int = 20
    seeds: tuple = (0, 1, 2, 3, 4)
    quad_nodes: int = 121
    fixed_point_T: int = 60
    mc_samples: int = 1_000_000
    mc_horizon: int = 6
    rate_window: tuple = (3, 10)
    precision_floor: float = 1e-26
    dense_cap: int = DENSE_CAP
    # acceptance thresholds; None disables a check
    rse_window: int = 8
    min_rse_db: float = 20.0
    rate_rel_tol: float = 0.10
    max_fixed_point_rms: float = None
    max_tap_residual: float = None
    out_dir: str = "runs"

    _CASTS = {
        "N": int, "K": int, "T": int, "quad_nodes": int, "fixed_point_T": int,
        "mc_samples": lambda v: int(float(v)), "mc_horizon": int, "dense_cap": int,
        "rse_window": int, "noise_var": float, "precision_floor": float,
        "min_rse_db": _parse_opt_float, "rate_rel_tol": _parse_opt_float,
        "max_fixed_point_rms": _parse_opt_float, "max_tap_residual": _parse_opt_float,
        "seeds": _parse_seeds, "rate_window": _parse_pair,
    }

    def __post_init__(self):
        for k, cast in self._CASTS.items():
            object.__setattr__(self, k, cast(getattr(self, k)))
        self.validate()

    def validate(self):
        if self.ensemble not in ("gaussian", "hadamard"):
            raise ValueError(f"ensemble must be gaussian or hadamard, got {self.ensemble!r}")
        if self.likelihood not in ("probit", "gaussian"):
            raise ValueError(f"likelihood must be probit or gaussian, got {self.likelihood!r}")
        if not 1 <= self.K <= self.N:
            raise ValueError(f"need 1 <= K <= N, got N={self.N}, K={self.K}")
        if self.ensemble == "hadamard" and not is_power_of_two(self.N):
            raise ValueError(f"hadamard ensemble needs N a power of two, got {self.N}")
        if not 1 <= self.T <= dft.MAX_HORIZON:
            raise ValueError(f"T must lie in [1, {dft.MAX_HORIZON}], got {self.T}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if not self.noise_var >= 0 or (self.likelihood == "gaussian" and self.noise_var == 0):
            raise ValueError(f"invalid noise_var {self.noise_var}")
        if self.fixed_point_T < 1 or self.mc_samples < 2 or self.mc_horizon < 1:
            raise ValueError("fixed_point_T, mc_samples and mc_horizon must be positive")
        a, b = self.rate_window
        if not 0 <= a < b:
            raise ValueError(f"bad rate_window {self.rate_window}")
        QuadratureSpec(self.quad_nodes)

    @property
    def model(self):
        return LikelihoodModel(self.likelihood, self.noise_var)

    @property
    def quad(self):
        return QuadratureSpec(self.quad_nodes)

    def to_text(self):
        lines = [f"schema_version={SCHEMA_VERSION}"]
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("seeds", "rate_window"):
                v = ",".join(str(x) for x in v)
            elif v is None:
                v = "none"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        vals = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"malformed config line: {raw!r}")
            k, _, v = line.partition("=")
            vals[k.strip()] = v.strip()
        version = int(vals.pop("schema_version", SCHEMA_VERSION))
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported config schema_version {version}")
        known = {f.name for f in fields(cls)}
        unknown = set(vals) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**vals)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read())

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    def with_overrides(self, **kw):
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def fingerprint(self):
        """Hash of the fields that determine cached stage outputs."""
        keys = ("ensemble", "N", "K", "noise_var", "likelihood", "T", "quad_nodes",
                "fixed_point_T", "dense_cap")
        text = ";".join(f"{k}={getattr(self, k)!r}" for k in keys)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


PRESETS = {
    "fig1-desk": ExperimentConfig(name="fig1-desk", ensemble="gaussian", N=4096, K=2048,
                                  noise_var=1e-2, T=20),
    "fig2-desk": ExperimentConfig(name="fig2-desk", ensemble="hadamard", N=2**12, K=2**11,
                                  noise_var=1e-2, T=20),
}


def preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# ---------------------------------------------------------------------------
# comparison primitives


def rse(empirical, theory):
    """Elementwise ``((C - C_hat)/C)^2``. Entries with ``C == 0`` are NaN and warned about."""
    emp = np.asarray(empirical, dtype=float)
    th = np.asarray(theory, dtype=float)
    if emp.shape != th.shape:
        raise ValueError(f"shape mismatch {emp.shape} vs {th.shape}")
    zero = th == 0
    if zero.any():
        warnings.warn(f"{int(zero.sum())} theory entries are zero; rse flagged as NaN",
                      RuntimeWarning, stacklevel=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ((th - emp) / np.where(zero, 1.0, th)) ** 2
    out[zero] = np.nan
    return out


def rse_db(r):
    """``-10 log10 rse``; exact agreement maps to ``+inf``."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        return -10.0 * np.log10(r)


def format_db(x, cap=None):
    """Text form of a dB value: ``inf``/``nan`` sentinels, or capped when ``cap`` is set."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if cap is not None:
        return f"{min(x, cap):.2f}"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


class RateFit(NamedTuple):
    slope: float
    r_squared: float
    t_start: int
    t_end: int
    truncated: bool


def rate_fit(deltas, window, floor=1e-26):
    """Least-squares fit of ``ln Delta(t)`` against ``t`` (``deltas`` indexed from ``t = 0``).

    The window end is pulled back before the first point at or below ``floor``;
    ``truncated`` records that this happened.
    """
    d = np.asarray(deltas, dtype=float)
    a, b = int(window[0]), min(int(window[1]), d.shape[0] - 1)
    if a >= b:
        raise ValueError(f"window {window} holds fewer than two points")
    seg = d[a : b + 1]
    bad = np.flatnonzero(~(seg > floor))
    truncated = bool(bad.size)
    if truncated:
        b = a + int(bad[0]) - 1
    if b - a < 1:
        return RateFit(float("nan"), float("nan"), a, b, True)
    t = np.arange(a, b + 1, dtype=float)
    ln = np.log(d[a : b + 1])
    slope, icpt = np.polyfit(t, ln, 1)
    resid = ln - (slope * t + icpt)
    ss_tot = float(np.sum((ln - ln.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), r2, a, b, truncated)


# ---------------------------------------------------------------------------
# per-seed pipeline with on-disk stage cache


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_kv(path, items):
    with open(path, "w") as fh:
        for k, v in items:
            fh.write(f"{k}={v}\n")


def _read_kv(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            k, _, v = line.strip().partition("=")
            if k:
                out[k] = v
    return out


def _num(v):
    return "none" if v is None else repr(float(v))


def _load_trajectory(csv_path, bin_path):
    rho = dynamics.load_iterates(bin_path)
    raw = np.genfromtxt(csv_path, delimiter=",", skip_header=1, ndmin=2)
    eta = raw[1:, 1].copy()
    deltas = np.mean(np.diff(rho, axis=0) ** 2, axis=1)
    return dynamics.Trajectory(rho, eta, "simplified", dynamics._first_converged(deltas))


class SeedPipeline:
    """Stages for one seed: instance, spectrum, replica, simulation, theory, fixed point.

    With a ``workdir`` each stage is written once and read back on later calls;
    the cache is invalidated when the configuration fingerprint changes.
    """

    def __init__(self, config, seed, workdir=None, reuse=True):
        self.config = config
        self.seed = int(seed)
        self.workdir = workdir
        self._memo = {}
        if workdir is not None:
            os.makedirs(workdir, exist_ok=True)
            fp = os.path.join(workdir, "fingerprint.txt")
            stamp = config.fingerprint() + "\n"
            stale = not os.path.exists(fp) or open(fp).read() != stamp
            if stale or not reuse:
                for name in os.listdir(workdir):
                    os.remove(os.path.join(workdir, name))
                with open(fp, "w") as fh:
                    fh.write(stamp)

    def _path(self, name):
        return None if self.workdir is None else os.path.join(self.workdir, name)

    def _cached(self, *names):
        return self.workdir is not None and all(os.path.exists(self._path(n)) for n in names)

    def _stage(self, key, fn):
        if key not in self._memo:
            try:
                self._memo[key] = fn()
            except StageError:
                raise
            except Exception as exc:
                raise StageError(f"stage {key!r} failed for seed {self.seed}: {exc}") from exc
        return self._memo[key]

    # -- stages -------------------------------------------------------------

    @property
    def teacher(self):
        def make():
            if self._cached("instance.npz"):
                return load_instance(self._path("instance.npz"))
            c = self.config
            design = generate_design(c.ensemble, c.N, c.K, self.seed)
            t = generate_teacher(design, c.noise_var, self.seed, c.likelihood)
            if self.workdir is not None:
                save_instance(self._path("instance.npz"), t)
            return t

        return self._stage("generate", make)

    @property
    def spectral(self):
        def make():
            s = spectrum(self.teacher.design, dense_cap=self.config.dense_cap)
            if self.workdir is not None and not self._cached("eigenvalues.csv"):
                c = self.config
                save_eigenvalues_csv(self._path("eigenvalues.csv"), s, c.N, c.K, c.ensemble)
            return s

        return self._stage("spectrum", make)

    @property
    def replica(self):
        def make():
            if self._cached("replica.txt", "fixed_points.txt"):
                with open(self._path("replica.txt")) as fh:
                    return ReplicaSolution.from_text(fh.read())
            c = self.config
            sol = solve_replica(self.spectral, c.model, c.quad)
            alts = find_fixed_points(self.spectral, c.model, c.quad)
            if self.workdir is not None:
                with open(self._path("replica.txt"), "w") as fh:
                    fh.write(sol.to_text())
                with open(self._path("fixed_points.txt"), "w") as fh:
                    fh.write(f"count={len(alts)}\n")
                    for i, a in enumerate(alts):
                        fh.write(f"chi[{i}]={a.chi:.17g}\nnu[{i}]={a.nu:.17g}\n")
            self._memo["n_fixed_points"] = len(alts)
            return sol

        return self._stage("replica", make)

    @property
    def n_fixed_points(self):
        self.replica
        if "n_fixed_points" not in self._memo:
            self._memo["n_fixed_points"] = int(_read_kv(self._path("fixed_points.txt"))["count"])
        return self._memo["n_fixed_points"]

    @property
    def A(self):
        r = self.replica
        return self._stage("operator", lambda: build_A(self.spectral, r.chi, r.lam))

    @property
    def trajectory(self):
        def make():
            if self._cached("trajectory.csv", "iterates.bin"):
                return _load_trajectory(self._path("trajectory.csv"), self._path("iterates.bin"))
            c = self.config
            tr = dynamics.run_algorithm(self.A, self.teacher, self.replica, c.model, c.T)
            if self.workdir is not None:
                dynamics.save_trajectory_csv(self._path("trajectory.csv"), tr, self.teacher,
                                             self.replica.q)
                dynamics.save_iterates(self._path("iterates.bin"), tr)
            return tr

        return self._stage("run", make)

    @property
    def theory(self):
        def make():
            names = ("C_phi.csv", "C_rho.csv", "theory_scalars.txt")
            if self._cached(*names):
                return dft.load_theory(self.workdir, self.replica)
            th = dft.dft_recursion(self.replica, self.config.model, self.config.T,
                                   self.config.quad)
            if self.workdir is not None:
                dft.save_theory(self.workdir, th)
            return th

        return self._stage("theory", make)

    @property
    def fixed_point(self):
        """Long simplified and VAMP runs compared at their end points."""

        def make():
            if self._cached("fixed_point.txt"):
                return {k: float(v) for k, v in _read_kv(self._path("fixed_point.txt")).items()}
            c, te, rep, S = self.config, self.teacher, self.replica, self.spectral
            model = c.model
            simp = dynamics.run_algorithm(self.A, te, rep, model, c.fixed_point_T)
            fixed = dynamics.run_algorithm(self.A, te, rep, model, c.fixed_point_T,
                                           eta_mode="replica")
            vamp = dynamics.run_vamp(S, te, model, c.fixed_point_T, nu0=rep.nu)
            if self.workdir is not None:
                dynamics.save_trajectory_csv(self._path("vamp_trajectory.csv"), vamp, te, rep.q)
            nu_v = float(vamp.vamp.nu[-1])

            def tap(tr, nu):
                m, _ = moments(model, tr.final, te.y, nu)
                return dynamics.tap_residual(tr.final, m, S, nu)

            def rms(a, b):
                return float(np.sqrt(np.mean((a.final - b.final) ** 2)))

            out = {
                "fixed_point_rms": rms(simp, vamp),
                "fixed_point_rms_replica_eta": rms(fixed, vamp),
                "tap_residual": tap(simp, rep.nu),
                "tap_residual_replica_eta": tap(fixed, rep.nu),
                "tap_residual_vamp": tap(vamp, nu_v),
                "vamp_nu_final": nu_v,
                "vamp_nu_init": float(rep.nu),
                "simplified_converged_at": float(simp.converged_at or -1),
                "vamp_converged_at": float(vamp.converged_at or -1),
            }
            if self.workdir is not None:
                _write_kv(self._path("fixed_point.txt"), [(k, repr(v)) for k, v in out.items()])
            return out

        return self._stage("run-vamp", make)

    def mc_oracle(self, samples=None, horizon=None):
        c = self.config
        samples = c.mc_samples if samples is None else samples
        horizon = min(c.mc_horizon if horizon is None else horizon, c.T)
        th = self.theory
        mc = dft.single_node_mc(th, c.model, samples=samples, seed=self.seed, T=horizon)
        if self.workdir is not None:
            with open(self._path("mc_oracle.csv"), "w") as fh:
                fh.write("t,s,theory,mc_recursion,mc_recursion_se,mc_direct,mc_direct_se\n")
                for i in range(horizon):
                    for j in range(horizon):
                        fh.write(f"{i + 1},{j + 1},{th.C_rho[i, j]:.17g},{mc.C_rho_next[i, j]:.17g},"
                                 f"{mc.C_rho_next_se[i, j]:.17g},{mc.C_rho_direct[i, j]:.17g},"
                                 f"{mc.C_rho_direct_se[i, j]:.17g}\n")
        return mc

    def compare(self):
        return self._stage("compare", lambda: _compare(self))


@dataclass(eq=False)
class SeedReport:
    seed: int
    rse: np.ndarray = field(repr=False)
    rse_db: np.ndarray = field(repr=False)
    rate: RateFit = None
    ln_mu_rho: float = float("nan")
    rate_rel_gap: float = float("nan")
    mu_rho: float = float("nan")
    at_margin: float = float("nan")
    self_averaging_gap: float = float("nan")
    kappa_gap: float = float("nan")
    converged_at: int = None
    n_fixed_points: int = 1
    fixed_point: dict = field(default_factory=dict)
    replica: ReplicaSolution = None

    def scalars(self):
        out = [
            ("seed", self.seed),
            ("chi", _num(self.replica.chi)),
            ("lambda", _num(self.replica.lam)),
            ("nu", _num(self.replica.nu)),
            ("kappa", _num(self.replica.kappa)),
            ("sigma_A_sq", _num(self.replica.sigma_A_sq)),
            ("n_fixed_points", self.n_fixed_points),
            ("mu_rho", _num(self.mu_rho)),
            ("ln_mu_rho", _num(self.ln_mu_rho)),
            ("at_margin", _num(self.at_margin)),
            ("rate_slope", _num(self.rate.slope)),
            ("rate_r_squared", _num(self.rate.r_squared)),
            ("rate_window", f"{self.rate.t_start},{self.rate.t_end}"),
            ("rate_truncated", int(self.rate.truncated)),
            ("rate_rel_gap", _num(self.rate_rel_gap)),
            ("self_averaging_gap", _num(self.self_averaging_gap)),
            ("kappa_gap", _num(self.kappa_gap)),
            ("converged_at", "none" if self.converged_at is None else self.converged_at),
        ]
        out += [(k, _num(v)) for k, v in self.fixed_point.items()]
        return out


def _compare(p):
    c = p.config
    th, tr, te, rep = p.theory, p.trajectory, p.teacher, p.replica
    emp = dynamics.empirical_stats(tr, te, rep.q)
    r = rse(emp.C_rho[1:, 1:], th.C_rho)
    fit = rate_fit(tr.deltas_to_final(), c.rate_window, c.precision_floor)
    ln_mu = math.log(th.mu_rho) if th.mu_rho > 0 else float("-inf")
    gap = abs(fit.slope - ln_mu) / abs(ln_mu) if math.isfinite(ln_mu) else float("nan")
    rep_ = SeedReport(
        seed=p.seed,
        rse=r,
        rse_db=rse_db(r),
        rate=fit,
        ln_mu_rho=ln_mu,
        rate_rel_gap=gap,
        mu_rho=th.mu_rho,
        at_margin=th.at_margin,
        self_averaging_gap=float(np.max(np.abs(th.chi_t - tr.eta))),
        kappa_gap=float(abs(emp.kappa[-1] - th.kappa_t[-1])),
        converged_at=tr.converged_at,
        n_fixed_points=p.n_fixed_points,
        fixed_point=dict(p.fixed_point),
        replica=rep,
    )
    if p.workdir is not None:
        _write_rse_csv(p._path("rse.csv"), r)
        _write_kv(p._path("comparison.txt"), rep_.scalars())
    return rep_


def _write_rse_csv(path, r, iqr_db=None):
    db = rse_db(r)
    with open(path, "w") as fh:
        fh.write("t,s,rse,rse_db" + (",iqr_db\n" if iqr_db is not None else "\n"))
        for i in range(r.shape[0]):
            for j in range(r.shape[1]):
                row = f"{i + 1},{j + 1},{r[i, j]:.17g},{format_db(db[i, j])}"
                if iqr_db is not None:
                    row += f",{format_db(iqr_db[i, j])}"
                fh.write(row + "\n")


# ---------------------------------------------------------------------------
# aggregation


def _median_iqr(x, axis=0):
    x = np.asarray(x, dtype=float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        q1, med, q3 = np.nanpercentile(x, [25, 50, 75], axis=axis)
    return med, q3 - q1


@dataclass(eq=False)
class ComparisonReport:
    """Per-seed reports plus seed-aggregated (median, IQR) views and threshold checks."""

    config: ExperimentConfig
    seeds: list = field(repr=False)
    rse_median: np.ndarray = field(repr=False)
    rse_db_median: np.ndarray = field(repr=False)
    rse_db_iqr: np.ndarray = field(repr=False)
    rate_slope_median: float
    rate_slope_iqr: float
    ln_mu_rho: float
    rate_rel_gap: float
    at_margin: float
    tap_residual_median: float
    fixed_point_rms_median: float
    self_averaging_gap_median: float
    violations: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.violations

    @property
    def min_rse_db(self):
        w = min(self.config.rse_window, self.config.T)
        return float(np.nanmin(self.rse_db_median[:w, :w]))

    def summary(self):
        c = self.config
        w = min(c.rse_window, c.T)
        lines = [
            f"scenario {c.name}: {c.ensemble} N={c.N} K={c.K} noise_var={c.noise_var} "
            f"likelihood={c.likelihood} T={c.T} seeds={','.join(map(str, c.seeds))}",
            f"worst median rse over t,s<={w}: {format_db(self.min_rse_db, DB_CAP)} dB",
            f"rate: fitted slope {self.rate_slope_median:.4f} (IQR {self.rate_slope_iqr:.4f}) "
            f"vs ln mu_rho {self.ln_mu_rho:.4f}, relative gap {self.rate_rel_gap:.4f}",
            f"AT margin {self.at_margin:.6f} ({'stable' if self.at_margin > 0 else 'UNSTABLE'})",
            f"median TAP residual {self.tap_residual_median:.3e}, "
            f"median |rho_simplified - rho_vamp| rms {self.fixed_point_rms_median:.3e}",
            f"median self-averaging gap max|chi(t)-eta(t)| {self.self_averaging_gap_median:.3e}",
            "VAMP start: nu(0) = replica nu, rho(0) = 0 (chosen here, not prescribed)",
            "",
            f"{'seed':>6} {'min dB':>8} {'slope':>9} {'gap':>7} {'tap':>10} {'fp rms':>10} conv",
        ]
        for s in self.seeds:
            conv = "no" if s.converged_at is None else str(s.converged_at)
            lines.append(
                f"{s.seed:>6} {format_db(np.nanmin(s.rse_db[:w, :w]), DB_CAP):>8} "
                f"{s.rate.slope:>9.4f} {s.rate_rel_gap:>7.4f} "
                f"{s.fixed_point['tap_residual']:>10.3e} {s.fixed_point['fixed_point_rms']:>10.3e} "
                f"{conv}" + (" (rate window truncated)" if s.rate.truncated else "")
            )
        lines.append("")
        lines.append("PASS" if self.passed else "FAIL: " + "; ".join(self.violations))
        return "\n".join(lines) + "\n"

    def scalars(self):
        return [
            ("schema_version", SCHEMA_VERSION),
            ("name", self.config.name),
            ("n_seeds", len(self.seeds)),
            ("min_rse_db_median", format_db(self.min_rse_db, DB_CAP)),
            ("rate_slope_median", _num(self.rate_slope_median)),
            ("rate_slope_iqr", _num(self.rate_slope_iqr)),
            ("ln_mu_rho", _num(self.ln_mu_rho)),
            ("rate_rel_gap", _num(self.rate_rel_gap)),
            ("at_margin", _num(self.at_margin)),
            ("tap_residual_median", _num(self.tap_residual_median)),
            ("fixed_point_rms_median", _num(self.fixed_point_rms_median)),
            ("self_averaging_gap_median", _num(self.self_averaging_gap_median)),
            ("vamp_init", "nu0=replica_nu;rho0=0"),
            ("passed", int(self.passed)),
            ("violations", "|".join(self.violations) or "none"),
        ]


def aggregate(config, seed_reports):
    rs = np.stack([s.rse for s in seed_reports])
    dbs = np.stack([s.rse_db for s in seed_reports])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rse_med = np.nanmedian(rs, axis=0)
    finite_db = np.where(np.isinf(dbs), DB_CAP, dbs)
    _, db_iqr = _median_iqr(finite_db)
    slopes = [s.rate.slope for s in seed_reports]
    slope_med, slope_iqr = _median_iqr(slopes)
    ln_mu = float(np.median([s.ln_mu_rho for s in seed_reports]))
    gap = abs(slope_med - ln_mu) / abs(ln_mu) if math.isfinite(ln_mu) and ln_mu else float("nan")
    at = float(np.min([s.at_margin for s in seed_reports]))
    tap = float(np.median([s.fixed_point["tap_residual"] for s in seed_reports]))
    fp = float(np.median([s.fixed_point["fixed_point_rms"] for s in seed_reports]))
    sag = float(np.median([s.self_averaging_gap for s in seed_reports]))
    report = ComparisonReport(
        config=config,
        seeds=list(seed_reports),
        rse_median=rse_med,
        rse_db_median=rse_db(rse_med),
        rse_db_iqr=db_iqr,
        rate_slope_median=float(slope_med),
        rate_slope_iqr=float(slope_iqr),
        ln_mu_rho=ln_mu,
        rate_rel_gap=float(gap),
        at_margin=at,
        tap_residual_median=tap,
        fixed_point_rms_median=fp,
        self_averaging_gap_median=sag,
    )
    report.violations = check_thresholds(report)
    return report


def check_thresholds(report):
    c = report.config
    out = []
    if c.min_rse_db is not None:
        got = report.min_rse_db
        if not got >= c.min_rse_db:
            out.append(f"median rse {got:.2f} dB < {c.min_rse_db} dB")
    if c.rate_rel_tol is not None and not report.rate_rel_gap <= c.rate_rel_tol:
        out.append(f"rate gap {report.rate_rel_gap:.4f} > {c.rate_rel_tol}")
    if not report.at_margin > 0:
        out.append(f"AT margin {report.at_margin:.4g} <= 0")
    if c.max_fixed_point_rms is not None and not report.fixed_point_rms_median <= c.max_fixed_point_rms:
        out.append(f"fixed-point rms {report.fixed_point_rms_median:.3e} > {c.max_fixed_point_rms}")
    if c.max_tap_residual is not None and not report.tap_residual_median <= c.max_tap_residual:
        out.append(f"TAP residual {report.tap_residual_median:.3e} > {c.max_tap_residual}")
    return out


# ---------------------------------------------------------------------------
# orchestration


def seed_dir(out_dir, seed):
    return None if out_dir is None else os.path.join(out_dir, f"seed_{int(seed)}")


def run_seed(config, seed, out_dir=None, reuse=True):
    p = SeedPipeline(config, seed, seed_dir(out_dir, seed), reuse=reuse)
    return p.compare()


def _run_seed_job(args):
    return run_seed(*args)


def run_experiment(config, out_dir=None, jobs=1, reuse=True):
    """Full pipeline for every seed, aggregated into a :class:`ComparisonReport`.

    ``out_dir=None`` keeps everything in memory; otherwise per-seed stage
    outputs, aggregate CSVs, ``summary.txt``, ``report.txt`` and
    ``manifest.csv`` are written there.
    """
    args = [(config, s, out_dir, reuse) for s in config.seeds]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            seeds = list(ex.map(_run_seed_job, args))
    else:
        seeds = [_run_seed_job(a) for a in args]
    report = aggregate(config, seeds)
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def write_report(report, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    report.config.save(os.path.join(out_dir, "config.txt"))
    _write_rse_csv(os.path.join(out_dir, "rse_median.csv"), report.rse_median, report.rse_db_iqr)
    with open(os.path.join(out_dir, "rate_fit.csv"), "w") as fh:
        fh.write("seed,slope,r_squared,t_start,t_end,truncated,ln_mu_rho,rel_gap\n")
        for s in report.seeds:
            f = s.rate
            fh.write(f"{s.seed},{f.slope:.17g},{f.r_squared:.17g},{f.t_start},{f.t_end},"
                     f"{int(f.truncated)},{s.ln_mu_rho:.17g},{s.rate_rel_gap:.17g}\n")
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write(report.summary())
    _write_kv(os.path.join(out_dir, "report.txt"), report.scalars())
    write_manifest(out_dir)


def write_manifest(out_dir):
    """``manifest.csv``: every file under ``out_dir`` with its size and sha256."""
    rows = []
    for root, _, files in os.walk(out_dir):
        for f in files:
            full = os.path.join(root, f)
            rel = os.path.relpath(full, out_dir)
            if rel == "manifest.csv":
                continue
            rows.append((rel.replace(os.sep, "/"), os.path.getsize(full), _sha256(full)))
    rows.sort()
    path = os.path.join(out_dir, "manifest.csv")
    with open(path, "w") as fh:
        fh.write("path,bytes,sha256\n")
        for r in rows:
            fh.write(f"{r[0]},{r[1]},{r[2]}\n")
    return path


def memory_probe(ensemble, sizes, seeds, t=4, s=1, noise_var=1e-2, quad_nodes=61):
    """Mean ``|(1/N) tr[A E(s+1) ... A E(t)]|`` and mean squared Jacobian diagonal per size."""
    model = LikelihoodModel("probit", noise_var)
    quad = QuadratureSpec(quad_nodes)
    out = []
    for n in sizes:
        traces, diags = [], []
        for seed in seeds:
            design = generate_design(ensemble, n, n // 2, seed)
            te = generate_teacher(design, noise_var, seed)
            S = spectrum(design)
            rep = solve_replica(S, model, quad)
            A = build_A(S, rep.chi, rep.lam, materialize=True)
            tr = dynamics.run_algorithm(A, te, rep, model, t)
            a, b = dynamics.susceptibility_trace(A, tr, te, model, rep.nu, t, s)
            traces.append(abs(a))
            diags.append(b)
        out.append((n, float(np.mean(traces)), float(np.mean(diags))))
    return out


def config_dict(config):
    return asdict(config)
