import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import tilted_moments

from dftinfer.likelihood import (
    LikelihoodModel,
    f_eta,
    f_eta_prime,
    label_probability,
    mills_ratio,
    moments,
    truncated_variance,
)


@pytest.mark.parametrize("s0sq", [0.0, 1e-2, 1.0])
@pytest.mark.parametrize("nu", [0.1, 3.0, 100.0])
@pytest.mark.parametrize("rho", [-30.0, -7.5, -1.0, 0.0, 2.0, 30.0])
def test_probit_moments_match_quadrature(rho, nu, s0sq):
    model = LikelihoodModel("probit", s0sq)
    for y in (1.0, -1.0):
        m, mpr = moments(model, np.array([rho]), np.array([y]), nu)
        m_ref, v_ref = tilted_moments(rho, y, nu, s0sq)
        assert m[0] == pytest.approx(m_ref, rel=1e-8, abs=1e-300)
        assert mpr[0] == pytest.approx(v_ref, rel=1e-8)


@pytest.mark.parametrize("s0sq", [0.0, 1e-2, 1.0])
def test_derivative_matches_finite_difference(s0sq):
    model = LikelihoodModel("probit", s0sq)
    rho = np.linspace(-30, 30, 61)
    for nu in (0.1, 1.0, 100.0):
        for y in (1.0, -1.0):
            h = 1e-4 * max(1.0, 1.0 / nu) ** 0.5
            mp_, mm = moments(model, rho + h, y, nu)[0], moments(model, rho - h, y, nu)[0]
            fd = (mp_ - mm) / (2 * h)
            _, der = moments(model, rho, y, nu)
            assert np.allclose(der, fd, rtol=1e-6, atol=1e-12 / nu)


def test_gaussian_likelihood_closed_form():
    model = LikelihoodModel("gaussian", 0.5)
    m, mpr = moments(model, np.array([0.3, -1.0]), np.array([1.2, 0.1]), 2.0)
    assert np.allclose(m, (np.array([0.3, -1.0]) + np.array([1.2, 0.1]) / 0.5) / 4.0)
    assert np.allclose(mpr, 0.25)


def test_mills_ratio_is_finite_far_in_the_tail():
    u = np.array([-40.0, -10.0, 0.0, 10.0])
    r = mills_ratio(u)
    assert np.all(np.isfinite(r))
    # phi/Phi ~ -u for u -> -inf
    assert r[0] == pytest.approx(40.0, rel=1e-3)
    assert r[2] == pytest.approx(np.sqrt(2 / np.pi))


def test_truncated_variance_continuity_across_switch():
    u = np.array([-6.0 - 1e-9, -6.0 + 1e-9])
    v = truncated_variance(u)
    assert abs(v[0] - v[1]) < 1e-9
    with mp.workdps(40):
        for ui, vi in zip(u, v):
            x = mp.mpf(ui)
            r = mp.npdf(x) / mp.ncdf(x)
            assert vi == pytest.approx(float(1 - r * (x + r)), rel=1e-11)


@settings(max_examples=200, deadline=None)
@given(
    rho=st.floats(-50, 50),
    nu=st.floats(0.05, 200),
    s0sq=st.sampled_from([0.0, 1e-4, 1e-2, 1.0, 10.0]),
    y=st.sampled_from([-1.0, 1.0]),
)
def test_variance_bounded_by_prior(rho, nu, s0sq, y):
    _, v = moments(LikelihoodModel("probit", s0sq), rho, y, nu)
    assert 0.0 < v <= 1.0 / nu * (1 + 1e-12)


@settings(max_examples=100, deadline=None)
@given(nu=st.floats(0.05, 200), s0sq=st.sampled_from([0.0, 1e-2, 1.0]), y=st.sampled_from([-1.0, 1.0]))
def test_mean_is_increasing_in_field(nu, s0sq, y):
    rho = np.linspace(-40, 40, 401)
    m, _ = moments(LikelihoodModel("probit", s0sq), rho, y, nu)
    assert np.all(np.diff(m) > 0)


def test_label_symmetry():
    model = LikelihoodModel("probit", 0.3)
    rho = np.linspace(-5, 5, 11)
    m_pos, v_pos = moments(model, rho, 1.0, 2.0)
    m_neg, v_neg = moments(model, -rho, -1.0, 2.0)
    assert np.allclose(m_pos, -m_neg)
    assert np.allclose(v_pos, v_neg)


def test_update_nonlinearity():
    model = LikelihoodModel("probit", 1e-2)
    rho = np.array([-1.0, 0.5])
    y = np.array([1.0, -1.0])
    m, mpr = moments(model, rho, y, 3.0)
    assert np.allclose(f_eta(model, rho, y, 0.2, 3.0), m / 0.2 - rho)
    assert np.allclose(f_eta_prime(model, rho, y, 0.2, 3.0), mpr / 0.2 - 1)
    with pytest.raises(ValueError):
        f_eta(model, rho, y, 0.0, 3.0)


def test_hard_step_label_probability_breaks_ties_upward():
    model = LikelihoodModel("probit", 0.0)
    p = label_probability(model, np.array([0.0, 0.0, 1.0]), 0.0, np.array([1.0, -1.0, -1.0]))
    assert p.tolist() == [1.0, 0.0, 0.0]


@pytest.mark.parametrize(
    "kwargs", [dict(kind="logit"), dict(kind="probit", noise_var=-1.0), dict(kind="gaussian", noise_var=0.0)]
)
def test_model_validation(kwargs):
    with pytest.raises(ValueError):
        LikelihoodModel(**kwargs)


def test_moment_input_validation():
    model = LikelihoodModel("probit", 0.1)
    with pytest.raises(ValueError):
        moments(model, 0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        moments(model, 0.0, 0.5, 1.0)
