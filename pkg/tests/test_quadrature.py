import numpy as np
import pytest

from dftinfer.likelihood import LikelihoodModel
from dftinfer.quadrature import QuadratureSpec, field_nodes, standard_normal_rule

QUAD = QuadratureSpec(61)


def test_rule_integrates_normal_moments():
    x, w = standard_normal_rule(41)
    assert w.sum() == pytest.approx(1.0)
    for k, ref in [(2, 1.0), (4, 3.0), (6, 15.0), (3, 0.0)]:
        assert np.sum(w * x**k) == pytest.approx(ref, abs=1e-10)


@pytest.mark.parametrize("model", [LikelihoodModel("probit", 1e-2), LikelihoodModel("gaussian", 0.3)])
def test_single_field_moments(model):
    q, c, s = 0.7, 2.0, 0.9  # Var z, Cov(z, theta)
    nodes = field_nodes([[c]], [s], q, model, QUAD)
    assert nodes.expect(1.0) == pytest.approx(1.0)
    assert nodes.expect(nodes.z[0] ** 2) == pytest.approx(c)
    assert nodes.expect_theta(nodes.z[0]) == pytest.approx(s)
    assert nodes.expect_theta(np.ones_like(nodes.w)) == pytest.approx(0.0, abs=1e-12)


def test_probit_label_marginal_and_correlation():
    model = LikelihoodModel("probit", 0.25)
    q = 1.5
    nodes = field_nodes([[1.0]], [0.0], q, model, QUAD)
    assert nodes.expect(nodes.y) == pytest.approx(0.0, abs=1e-14)
    # E[theta y] = q sqrt(2/pi) / sqrt(q + s0^2)
    assert nodes.expect_theta(nodes.y) == pytest.approx(q * np.sqrt(2 / np.pi / (q + 0.25)))


def test_two_fields_cross_moments():
    model = LikelihoodModel("probit", 1e-2)
    cov = [[2.0, 0.8], [0.8, 1.0]]
    nodes = field_nodes(cov, [0.3, 0.2], 0.5, model, QUAD)
    assert nodes.expect(nodes.z[0] * nodes.z[1]) == pytest.approx(0.8)
    assert nodes.expect_theta(nodes.z[1]) == pytest.approx(0.2)


def test_degenerate_direction_is_dropped():
    model = LikelihoodModel("probit", 1e-2)
    cov = np.array([[1.0, 1.0], [1.0, 1.0]])
    nodes = field_nodes(cov, [0.2, 0.2], 0.5, model, QUAD)
    assert nodes.w.size == 2 * QUAD.nodes_per_dim
    assert np.allclose(nodes.z[0], nodes.z[1])


def test_not_psd_raises():
    with pytest.raises(np.linalg.LinAlgError):
        field_nodes([[1.0, 2.0], [2.0, 1.0]], [0, 0], 1.0, LikelihoodModel("probit", 0.1), QUAD)


def test_spec_validation():
    with pytest.raises(ValueError):
        QuadratureSpec(11)
    with pytest.raises(ValueError):
        QuadratureSpec(61, scheme="sparse-grid")
