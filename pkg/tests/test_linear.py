import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from iosskit.fixtures import get_fixture
from iosskit.linear import (LinearSystem, detectability_check, is_hurwitz, lyapunov_solve, spectral_norm,
                            synthesize_certificate)

mats = st.integers(1, 3).flatmap(lambda n: arrays(np.float64, (n, n), elements=st.floats(-3, 3, width=32)))


def test_double_integrator_certificate():
    lin = LinearSystem.from_model(get_fixture("linear-double-integrator"))
    cert = synthesize_certificate(lin, [[-2.0], [-1.0]])
    np.testing.assert_allclose(cert.P, [[0.5, -0.5], [-0.5, 1.5]], atol=1e-12)
    assert cert.residual <= 1e-12
    assert cert.K <= np.sqrt(np.linalg.cond(cert.P)) * (1 + 1e-6)
    assert cert.sigma1_coef == pytest.approx(4 * cert.norm_P ** 2)


def test_default_injection_for_double_integrator():
    lin = LinearSystem.from_model(get_fixture("linear-double-integrator"))
    det = detectability_check(lin)
    assert det.detectable
    np.testing.assert_allclose(det.L.ravel(), [-2.0, -1.0], atol=1e-10)


def test_detectability_verdicts():
    assert not detectability_check(LinearSystem([[1.0, 0.0], [0.0, -1.0]], np.zeros((2, 0)), [[0.0, 1.0]]))
    assert detectability_check(LinearSystem([[-1.0, 0.0], [0.0, -2.0]], np.zeros((2, 0)), np.zeros((0, 2))))
    assert not detectability_check(LinearSystem([[0.0]], np.zeros((1, 0)), np.zeros((0, 1))))


def test_imaginary_axis_is_degenerate():
    res = is_hurwitz([[0.0, 1.0], [-1.0, 0.0]])
    assert not res.hurwitz and res.degenerate


def test_spectral_norm_matches_svd():
    M = np.array([[1.0, 2.0], [-3.0, 0.5]])
    assert spectral_norm(M) == pytest.approx(np.linalg.svd(M, compute_uv=False)[0], rel=1e-12)


@given(mats)
def test_hurwitz_agrees_with_eigenvalues(M):
    eig = np.linalg.eigvals(M)
    # stay away from the boundary where both routes are ill-conditioned
    sums = np.abs(eig[:, None] + eig[None, :])
    if np.min(sums) < 1e-3 or np.min(np.abs(eig.real)) < 1e-3:
        return
    res = is_hurwitz(M)
    assert res.hurwitz == bool(np.all(eig.real < 0))


@given(mats)
def test_lyapunov_residual_small(M):
    P, cond = lyapunov_solve(M)
    if P is None:
        return
    res = M.T @ P + P @ M + np.eye(M.shape[0])
    assert np.max(np.abs(res)) <= 1e-8 * max(1.0, cond) * max(1.0, np.max(np.abs(P)))
    np.testing.assert_allclose(P, P.T)
