"""Independent high-precision references used by the tests."""
import mpmath as mp


def tilted_moments(rho, y, nu, s0sq, dps=40):
    """Mean and variance of theta under p(y|theta) exp(-nu theta^2/2 + rho theta)."""
    with mp.workdps(dps):
        return _tilted(rho, y, nu, s0sq)


def _tilted(rho, y, nu, s0sq):
    rho, nu, s0sq = mp.mpf(rho), mp.mpf(nu), mp.mpf(s0sq)
    mean, sd = rho / nu, 1 / mp.sqrt(nu)
    lo, hi = -mp.inf, mp.inf
    if s0sq == 0:  # hard step: support is the half line y t >= 0
        lo, hi = (mp.mpf(0), mp.inf) if y > 0 else (-mp.inf, mp.mpf(0))

    def logf(t):
        ll = 0 if s0sq == 0 else mp.log(mp.ncdf(y * t / mp.sqrt(s0sq)))
        return ll - (t - mean) ** 2 / (2 * sd * sd)

    # log-concave integrand: locate its mode by ternary search, then take a
    # width from the curvature there; the integrals are taken relative to the mode
    a = max(min(mean, 0) - 50 * (sd + mp.sqrt(s0sq) + 1), lo)
    b = min(max(mean, 0) + 50 * (sd + mp.sqrt(s0sq) + 1), hi)
    for _ in range(300):
        m1, m2 = a + (b - a) / 3, b - (b - a) / 3
        if logf(m1) < logf(m2):
            a = m1
        else:
            b = m2
    mode = (a + b) / 2
    h = sd * mp.mpf("1e-6")
    curv = -(logf(mode + h) - 2 * logf(mode) + logf(mode - h)) / h**2
    if s0sq == 0 and mode - lo < 10 * sd:
        width = min(sd, 1 / abs(mean) * sd**2) if mean else sd
    else:
        width = 1 / mp.sqrt(curv)
    top = logf(mode)
    pts = [mode + k * width for k in (-80, -40, -20, -8, -3, 0, 3, 8, 20, 40, 80)]
    pts = [lo] + [p for p in pts if lo < p < hi] + [hi]
    pts = [p for p in pts if mp.isfinite(p)] or [mode]
    if not mp.isfinite(lo):
        pts = [pts[0] - 1000 * width] + pts
    if not mp.isfinite(hi):
        pts = pts + [pts[-1] + 1000 * width]
    pts = sorted(set(pts))

    def g(t):
        return mp.exp(logf(t) - top)

    z0 = mp.quad(g, pts)
    z1 = mp.quad(lambda t: (t - mode) * g(t), pts)
    z2 = mp.quad(lambda t: (t - mode) ** 2 * g(t), pts)
    d = z1 / z0
    return float(mode + d), float(z2 / z0 - d * d)
