import numpy as np
import pytest
from hypothesis import given, strategies as st

from iosskit.comparison import identity, linear, power
from iosskit.fixtures import get_fixture
from iosskit.lyapunov import (LyapCandidate, exp_decay_rescale, hji_check, additive_from_gain_margin,
                              rescale_profile, verify_dissipation)


def _quad():
    return LyapCandidate(lambda x: 0.5 * float(x @ x), power(0.5, 2.0), power(0.5, 2.0), power(0.5, 2.0),
                         power(0.5, 2.0), None, lambda x: np.asarray(x, dtype=float))


def test_dissipation_holds_and_fails():
    sys_ = get_fixture("scalar-decay")
    states = np.linspace(-5, 5, 41)[:, None]
    controls = np.linspace(-5, 5, 21)[:, None]
    assert verify_dissipation(sys_, _quad(), states, controls).holds
    bad = LyapCandidate(lambda x: 0.5 * float(x @ x), power(0.5, 2.0), power(0.5, 2.0), power(5.0, 2.0),
                        power(0.5, 2.0), None, lambda x: np.asarray(x, dtype=float))
    rep = verify_dissipation(sys_, bad, states, controls)
    assert rep.falsified and rep.witness["lhs"] > rep.witness["rhs"]


def test_controls_required_with_inputs():
    with pytest.raises(ValueError):
        verify_dissipation(get_fixture("scalar-decay"), _quad(), np.ones((2, 1)))


def test_candidate_bounds_and_gradient():
    c = _quad()
    states = np.linspace(-3, 3, 13)[:, None]
    assert c.check_sandwich(states).holds
    assert c.check_gradient(states[states[:, 0] != 0]).holds


@given(st.floats(min_value=0.5, max_value=3.0))
def test_rescale_profile_power_law(p):
    # alpha_V(v) = v / p gives rho' = 2 p rho / v, so rho = v^(2p)
    rho = rescale_profile(linear(1.0 / p))
    v = np.geomspace(0.05, 5.0, 25)
    np.testing.assert_allclose(rho(v), v ** (2 * p), rtol=1e-6)


def test_rescaled_scalar_gain_closed_form():
    w = exp_decay_rescale(_quad())
    # rho = v^2, R(s) = 2s, alpha_V^{-1}(4 sigma) = 2 r^2  ->  sigma_hat = 4 r^4
    r = np.array([0.3, 1.0, 2.5])
    np.testing.assert_allclose([float(w.sigma1(x)) for x in r], 4 * r ** 4, rtol=1e-6)
    sys_ = get_fixture("scalar-decay")
    rep = verify_dissipation(sys_, w, np.linspace(-4, 4, 33)[:, None], np.linspace(-4, 4, 17)[:, None],
                             atol=1e-6)
    assert rep.holds


def test_hji_closed_form_matches_brute_force():
    sys_ = get_fixture("scalar-decay")
    rep = hji_check(sys_, lambda x: 0.5 * float(x @ x), power(0.5, 2.0), None,
                    np.linspace(-5, 5, 21)[:, None], grad=lambda x: np.asarray(x, dtype=float))
    assert rep.holds and rep.extras["max_gap"] <= 1e-3
    worse = hji_check(sys_, lambda x: 0.5 * float(x @ x), power(2.0, 2.0), None,
                      np.linspace(-5, 5, 21)[:, None], grad=lambda x: np.asarray(x, dtype=float))
    assert worse.falsified


def test_hji_needs_affine_structure():
    with pytest.raises(ValueError):
        hji_check(get_fixture("remark-3-10"), lambda x: float(x @ x), identity(), None, np.ones((1, 1)))


def test_gain_margin_reconstruction():
    sys_ = get_fixture("scalar-decay")
    # |x| >= chi1(|u|) = 2|u| gives V' = -x^2 + xu <= -x^2 / 2
    cand, info = additive_from_gain_margin(sys_, lambda x: 0.5 * float(x @ x), power(0.5, 2.0), power(0.5, 2.0),
                                      power(0.5, 2.0), None, linear(2.0), grad=lambda x: np.asarray(x),
                                      n_state=61, n_control=61, return_report=True)
    assert not info["no_control"]
    states = np.linspace(-4, 4, 41)[:, None]
    controls = np.linspace(-2, 2, 21)[:, None]
    assert verify_dissipation(sys_, cand, states, controls, atol=1e-6).holds
