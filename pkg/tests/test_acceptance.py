"""Acceptance criteria, one test per criterion.

Each test prints (and records for the terminal summary) a single
``[PASS]``/``[FAIL]`` line with the measured quantity and its tolerance.
Runnable directly as ``python tests/test_acceptance.py`` as well.
"""
import os
import sys
import time

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from conftest import ACCEPTANCE_LINES  # noqa: E402
from oracles import tilted_moments  # noqa: E402

from dftinfer import dft, harness  # noqa: E402
from dftinfer.ensemble import generate_design  # noqa: E402
from dftinfer.likelihood import LikelihoodModel, moments  # noqa: E402
from dftinfer.quadrature import QuadratureSpec  # noqa: E402
from dftinfer.replica import solve_replica  # noqa: E402
from dftinfer.spectral import build_A, from_eigenvalues, sigma_a_sq_from_rtransform, spectrum  # noqa: E402

PROBIT = LikelihoodModel("probit", 1e-2)
PRESETS = ("fig1-desk", "fig2-desk")


def report(tag, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {tag}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


# ---------------------------------------------------------------------------
# shared expensive runs


_CACHE = {}


def preset_report(name, tmp_root):
    if name not in _CACHE:
        cfg = harness.preset(name)
        _CACHE[name] = harness.run_experiment(cfg, out_dir=os.path.join(tmp_root, name))
    return _CACHE[name]


@pytest.fixture(scope="module")
def tmp_root(tmp_path_factory):
    return str(tmp_path_factory.mktemp("acceptance"))


# ---------------------------------------------------------------------------


def test_c1_moment_oracle():
    rhos = np.linspace(-30, 30, 9)
    nus = [0.1, 0.5, 3.0, 20.0, 100.0]
    worst_m = worst_v = worst_fd = 0.0
    for s0 in (0.0, 1e-2, 1.0):
        model = LikelihoodModel("probit", s0)
        for nu in nus:
            for y in (1.0, -1.0):
                m, v = moments(model, rhos, y, nu)
                for r, mi, vi in zip(rhos, m, v):
                    m_ref, v_ref = tilted_moments(r, y, nu, s0)
                    worst_m = max(worst_m, abs(mi - m_ref) / abs(m_ref))
                    worst_v = max(worst_v, abs(vi - v_ref) / v_ref)
                grid = np.linspace(-30, 30, 241)
                h = 1e-4 * max(1.0, nu**-0.5)
                fd = (moments(model, grid + h, y, nu)[0] - moments(model, grid - h, y, nu)[0]) / (2 * h)
                der = moments(model, grid, y, nu)[1]
                worst_fd = max(worst_fd, float(np.max(np.abs(der - fd) / der)))
    ok = worst_m <= 1e-8 and worst_v <= 1e-8 and worst_fd <= 1e-6
    report("C1 moment oracle", ok,
           f"max rel err m {worst_m:.2e}, m' {worst_v:.2e} (<= 1e-8); "
           f"m' vs central FD {worst_fd:.2e} (<= 1e-6)")
    assert ok


def test_c2_replica_closed_form():
    worst = 0.0
    S = from_eigenvalues(np.ones(64))
    for s2 in (0.05, 0.5, 1.0, 3.0):
        sol = solve_replica(S, LikelihoodModel("gaussian", s2))
        chi = s2 / (1 + s2)
        worst = max(worst, abs(sol.chi - chi) / chi, abs(sol.lam - 1 / s2) * s2,
                    abs(sol.nu - 1.0))
    ok = worst <= 1e-10
    report("C2 replica closed form", ok,
           f"identity spectrum, gaussian likelihood: max rel err in (chi, lambda, nu) "
           f"{worst:.2e} (<= 1e-10)")
    assert ok


def test_c3_structural_identities():
    t0 = time.time()
    cases = []
    for kind in ("gaussian", "hadamard"):
        d = generate_design(kind, 2048, 1024, 0)
        S = spectrum(d)
        cases.append((kind, S, PROBIT))
    cases.append(("gaussian/gaussian-lik", spectrum(generate_design("gaussian", 512, 384, 1)),
                  LikelihoodModel("gaussian", 0.2)))
    worst_tr = worst_sig = worst_rel = 0.0
    for _, S, model in cases:
        sol = solve_replica(S, model, QuadratureSpec(121))
        A = build_A(S, sol.chi, sol.lam, materialize=False)
        worst_tr = max(worst_tr, abs(A.trace_mean))
        sig_r = sigma_a_sq_from_rtransform(S, sol.chi)
        worst_sig = max(worst_sig, abs(sig_r - A.sigma_a_sq) / A.sigma_a_sq)
        worst_rel = max(worst_rel, abs(sol.lam - (1 / sol.chi - sol.nu)) / sol.lam,
                        abs(sol.kappa - (sol.nu - 1 / sol.q)) / sol.kappa)
    elapsed = time.time() - t0
    ok = worst_tr <= 1e-10 and worst_sig <= 1e-6 and worst_rel <= 1e-10 and elapsed < 60
    report("C3 fixed-point identities", ok,
           f"|tr A|/N {worst_tr:.1e} (<= 1e-10), sigma_A^2 vs R-transform {worst_sig:.1e} "
           f"(<= 1e-6), lambda/kappa relations {worst_rel:.1e}, {elapsed:.0f} s (< 60 s)")
    assert ok


@pytest.mark.slow
@pytest.mark.parametrize("name", PRESETS)
def test_c4_two_time_covariance(name, tmp_root):
    rep = preset_report(name, tmp_root)
    w = 8
    med = rep.rse_median[:w, :w]
    worst = float(np.max(med))
    ok = worst <= 1e-2
    per_seed = ", ".join(harness.format_db(np.min(s.rse_db[:w, :w]), harness.DB_CAP)
                         for s in rep.seeds)
    report(f"C4 two-time covariance {name}", ok,
           f"worst median rse over t,s<=8 = {worst:.2e} ({-10 * np.log10(worst):.1f} dB; "
           f"need <= 1e-2 / >= 20 dB); per-seed worst dB: {per_seed}")
    assert ok


@pytest.mark.slow
@pytest.mark.parametrize("name", PRESETS)
def test_c5_convergence_rate(name, tmp_root):
    rep = preset_report(name, tmp_root)
    gap = rep.rate_rel_gap
    ok = gap <= 0.10
    trunc = sum(s.rate.truncated for s in rep.seeds)
    report(f"C5 convergence rate {name}", ok,
           f"median slope {rep.rate_slope_median:.4f} vs ln mu_rho {rep.ln_mu_rho:.4f}, "
           f"relative gap {gap:.3f} (<= 0.10); floor-truncated windows: {trunc}")
    assert ok


@pytest.mark.slow
@pytest.mark.parametrize("name", PRESETS)
def test_c6_mc_oracle(name):
    cfg = harness.preset(name)
    p = harness.SeedPipeline(cfg.with_overrides(seeds=(0,)), 0)
    mc = dft.single_node_mc(p.theory, cfg.model, samples=1_000_000, seed=0, T=6)
    z, _ = dft.mc_zscores(p.theory, mc)
    worst = float(np.max(np.abs(z)))
    ok = worst <= 3.0
    report(f"C6 DFT vs Monte Carlo {name}", ok,
           f"1e6 samples, max |C_rho MC - theory| / SE over t,s<=6 = {worst:.2f} (<= 3)")
    assert ok


@pytest.mark.parametrize("name", PRESETS)
def test_c7_rs_stationarity(name):
    cfg = harness.preset(name)
    p = harness.SeedPipeline(cfg.with_overrides(seeds=(0,)), 0)
    rep = p.replica
    th = dft.dft_recursion(rep, cfg.model, 40, cfg.quad)
    dk = abs(th.kappa_t[-1] - rep.kappa)
    dc = abs(th.C_phi[-1, -1] - rep.kappa)
    e_tg, e_gg = dft.stationarity_moments(rep, cfg.model, cfg.quad)
    i1 = abs(e_tg - rep.q * rep.lam) / (rep.q * rep.lam)
    i2 = abs(e_gg - (rep.lam + rep.q * rep.lam**2)) / (rep.lam + rep.q * rep.lam**2)
    ok = dk <= 1e-8 and dc <= 1e-8 and max(i1, i2) <= 1e-9
    report(f"C7 RS stationarity {name}", ok,
           f"|kappa(40) - kappa| {dk:.1e}, |C_phi(40,40) - kappa| {dc:.1e} (<= 1e-8); "
           f"E[theta gamma], E[gamma^2] identities rel {max(i1, i2):.1e}")
    assert ok


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["gaussian", "hadamard"])
def test_c8_algorithm_equivalence(kind):
    cfg = harness.ExperimentConfig(name=f"c8-{kind}", ensemble=kind, N=2048, K=1024,
                                   seeds=(0,), fixed_point_T=80)
    fp = harness.SeedPipeline(cfg, 0).fixed_point
    rms, tap = fp["fixed_point_rms"], fp["tap_residual"]
    ok = rms <= 1e-6 and tap <= 1e-7
    report(f"C8 algorithm equivalence {kind}", ok,
           f"N=2048: RMS(simplified - VAMP) {rms:.2e} (<= 1e-6), TAP residual {tap:.2e} "
           f"(<= 1e-7); diagnostics: VAMP TAP {fp['tap_residual_vamp']:.1e}, "
           f"simplified with eta=chi TAP {fp['tap_residual_replica_eta']:.1e}, "
           f"VAMP nu drift {fp['vamp_nu_final'] - fp['vamp_nu_init']:+.3f}")
    assert ok


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["gaussian", "hadamard"])
def test_c9_memory_free(kind):
    sizes = [128, 256, 512, 1024]
    res = harness.memory_probe(kind, sizes, seeds=range(10), t=4, s=1)
    tr = [r[1] for r in res]
    dg = [r[2] for r in res]
    ok = all(np.diff(tr) < 0) and tr[-1] <= 0.05 and all(np.diff(dg) < 0)
    report(f"C9 memory-free {kind}", ok,
           "mean |(1/N) tr| over N=128..1024: " + ", ".join(f"{x:.2e}" for x in tr)
           + " (decreasing, <= 0.05 at 1024); squared diagonal: "
           + ", ".join(f"{x:.2e}" for x in dg))
    assert ok


@pytest.mark.slow
def test_c10_at_margin(tmp_root):
    margins = {n: preset_report(n, tmp_root).at_margin for n in PRESETS}
    ok = all(m > 0 for m in margins.values())
    report("C10 AT margin", ok,
           ", ".join(f"{n}: {m:.4f}" for n, m in margins.items()) + " (> 0)")
    assert ok


if __name__ == "__main__":
    import tempfile

    root = tempfile.mkdtemp()
    tests = [
        (test_c1_moment_oracle, ()), (test_c2_replica_closed_form, ()),
        (test_c3_structural_identities, ()),
        *[(test_c4_two_time_covariance, (n, root)) for n in PRESETS],
        *[(test_c5_convergence_rate, (n, root)) for n in PRESETS],
        *[(test_c6_mc_oracle, (n,)) for n in PRESETS],
        *[(test_c7_rs_stationarity, (n,)) for n in PRESETS],
        *[(test_c8_algorithm_equivalence, (k,)) for k in ("gaussian", "hadamard")],
        *[(test_c9_memory_free, (k,)) for k in ("gaussian", "hadamard")],
        (test_c10_at_margin, (root,)),
    ]
    failed = 0
    for fn, args in tests:
        try:
            fn(*args)
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
