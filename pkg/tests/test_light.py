import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from backaction import fock, light


def _overlap_quad(model, m, n, geom):
    f = lambda x: model.w(x - m) * geom.mode_product(x) * model.w(x - n)  # noqa: E731
    lo, hi = min(m, n) - 3, max(m, n) + 3
    return quad(f, lo, hi, limit=200, epsabs=1e-14, epsrel=1e-12)[0]


@given(st.floats(0.1, 0.4), st.floats(-8, 8))
def test_fourier_overlaps_match_quadrature(sigma, k):
    model = light.WannierModel(sigma)
    w0 = quad(lambda x: model.w(x) ** 2 * np.cos(k * x), -4, 4, epsabs=1e-14)[0]
    w1 = quad(lambda x: model.w(x - 0.5) * model.w(x + 0.5) * np.cos(k * x), -4, 4, epsabs=1e-14)[0]
    assert abs(light.fourier_overlap(model, "W0", k) - w0) < 1e-10
    assert abs(light.fourier_overlap(model, "W1", k) - w1) < 1e-10


def test_unknown_overlap_rejected():
    with pytest.raises(ValueError):
        light.fourier_overlap(light.WannierModel(), "W2", 0.0)
    with pytest.raises(ValueError):
        light.WannierModel(sigma=-1)


@pytest.mark.parametrize(
    "geom",
    [
        light.BeamGeometry(np.pi, np.pi, 0.3, 1.1),
        light.BeamGeometry(0.0, np.pi, np.pi, np.pi / 2),
        light.BeamGeometry(0.7 * np.pi, 0.2 * np.pi, 0.4, -0.2),
    ],
)
def test_coupling_coefficients_match_quadrature(geom):
    model = light.WannierModel(0.25)
    M = 6
    c = light.coupling_coefficients(geom, model, M, boundary="open")
    for m in range(M):
        assert abs(c.diag[m] - _overlap_quad(model, m, m, geom)) < 1e-9
    for m in range(M - 1):
        assert abs(c.bond[m] - _overlap_quad(model, m, m + 1, geom)) < 1e-9


def test_uniform_geometry_zeroes_onsite_terms():
    model = light.WannierModel(0.2)
    c = light.coupling_coefficients(light.uniform_geometry(model), model, 8)
    assert np.abs(c.diag).max() < 1e-10
    np.testing.assert_allclose(c.bond, light.fourier_overlap(model, "W1", 2 * np.pi), rtol=1e-12)


def test_halved_phase_leaves_onsite_terms():
    # phi_- = arccos(ratio) / 2 does not cancel the on-site coupling
    model = light.WannierModel(0.2)
    ratio = light.fourier_overlap(model, "W0", 2 * np.pi) / light.fourier_overlap(model, "W0", 0)
    phm, php = np.arccos(ratio) / 2, np.pi
    geom = light.BeamGeometry(np.pi, np.pi, (php + phm) / 2, (php - phm) / 2)
    c = light.coupling_coefficients(geom, model, 8)
    assert np.abs(c.diag).min() > 1e-3


@given(st.floats(0, 2 * np.pi))
def test_alternating_geometry_sign_pattern(phi_in):
    model = light.WannierModel(0.2)
    M = 8
    c = light.coupling_coefficients(light.alternating_geometry(phi_in), model, M)
    assert np.abs(c.diag).max() < 1e-10
    f1 = light.fourier_overlap(model, "W1", np.pi)
    ref = -((-1.0) ** np.arange(M)) * f1 * np.cos(phi_in)
    np.testing.assert_allclose(c.bond, ref, atol=1e-12)


def test_alternating_geometry_builds_b2():
    model = light.WannierModel(0.2)
    b = fock.build_basis(2, 6)
    c = light.coupling_coefficients(light.alternating_geometry(np.pi), model, 6)
    J2 = light.fourier_overlap(model, "W1", np.pi)
    np.testing.assert_allclose(light.build_B(c, b).toarray(), light.b2_operator(b, J2).toarray(), atol=1e-12)
    assert np.abs(light.build_D(c, b).toarray()).max() < 1e-10


def test_partial_illumination():
    model = light.WannierModel(0.2)
    c = light.coupling_coefficients(light.alternating_geometry(np.pi, K=4), model, 8)
    assert c.diag.size == 4 and c.bond.size == 3
    with pytest.raises(ValueError):
        light.coupling_coefficients(light.alternating_geometry(np.pi, K=9), model, 8)


def test_jump_operator_scaling():
    b = fock.build_basis(2, 4)
    B = light.b1_operator(b, 0.5)
    D = light.build_D(light.CouplingCoefficients(np.array([0.1, 0, 0, 0]), np.zeros(0)), b)
    a = light.build_jump_operator(2 - 1j, D, B)
    assert not a.hermitian
    np.testing.assert_allclose(a.toarray(), (2 - 1j) * (D.toarray() + B.toarray()))


def test_b2_requires_even_ring():
    with pytest.raises(ValueError):
        light.b2_operator(fock.build_basis(1, 5))
