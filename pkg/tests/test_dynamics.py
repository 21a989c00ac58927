import numpy as np
import pytest
from hypothesis import given, strategies as st

from iosskit.comparison import linear
from iosskit.dynamics import Signal, SystemModel, default_kappa, reparametrize, simulate, slow_system
from iosskit.fixtures import get_fixture, list_fixtures


def test_fixtures_registered():
    for name in ("remark-3-10", "example-6-3-sigma1", "example-6-3-sigma2", "linear-double-integrator"):
        assert name in list_fixtures()
    with pytest.raises(KeyError):
        get_fixture("nope")


def test_nonzero_equilibrium_rejected():
    with pytest.raises(ValueError):
        SystemModel(1, 0, 0, 1, lambda x, u, w: x + 1.0, lambda x: x)


@given(st.floats(min_value=-3.0, max_value=3.0).filter(lambda v: abs(v) > 1e-3),
       st.floats(min_value=0.1, max_value=5.0))
def test_exponential_decay_matches_closed_form(x0, T):
    tr = simulate(get_fixture("decay-observed"), [x0], horizon=T, rtol=1e-10, atol=1e-13)
    assert tr.termination.kind == "HorizonReached"
    np.testing.assert_allclose(tr.states[:, 0], x0 * np.exp(-tr.times), rtol=1e-7, atol=1e-12)


@given(st.floats(min_value=1.3, max_value=4.0))
def test_escape_time_follows_cubic_law(xi):
    # |x| > 1 + eps is pure cubic growth: t_max = xi^-2 / 2
    tr = simulate(get_fixture("remark-3-10"), [xi], horizon=1.0, rtol=1e-10, atol=1e-12)
    assert tr.escaped
    assert tr.termination.t == pytest.approx(0.5 / xi ** 2, abs=1e-6)


def test_piecewise_signal_and_running_sup():
    s = Signal.piecewise([0.0, 1.0, 2.0], [[1.0], [-3.0], [2.0]])
    assert s(0.5)[0] == 1.0 and s(1.5)[0] == -3.0
    # essential sup: the jump at t = 1 is a single instant
    np.testing.assert_allclose(s.running_sup(np.array([0.0, 0.5, 1.0, 3.0])), [1.0, 1.0, 1.0, 3.0])
    assert Signal.from_dict(s.to_dict())(2.5)[0] == 2.0


def test_inputs_enter_dynamics():
    sys_ = get_fixture("scalar-decay")
    tr = simulate(sys_, [0.0], u=Signal.constant([1.0]), horizon=5.0, rtol=1e-10, atol=1e-13)
    assert tr.states[-1, 0] == pytest.approx(1.0 - np.exp(-5.0), rel=1e-8)


def test_trajectory_csv(tmp_path):
    tr = simulate(get_fixture("decay-observed"), [1.0], horizon=1.0)
    tr.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,x_1,y_1,|x|,|y|" and len(lines) == tr.times.size + 1


@given(st.floats(min_value=-50.0, max_value=50.0))
def test_slowed_speed_bounded(x):
    slow = slow_system(get_fixture("remark-3-10"), lambda z: 0.0)
    assert abs(slow.f(np.array([x]), np.zeros(0), np.zeros(0))[0]) <= 0.5 + 1e-12


def test_reparametrization_recovers_original_path():
    sys_ = get_fixture("decay-observed")
    kappa = default_kappa(sys_, linear(2.0))
    fast, sigma = reparametrize(sys_, kappa, [2.0], horizon=3.0)
    assert np.all(np.diff(sigma) > 0)
    # the slowed system at time sigma(t) sits where the original one is at t
    slow = simulate(slow_system(sys_, kappa), [2.0], horizon=float(sigma[-1]), t_eval=list(sigma[1:-1]),
                    rtol=1e-10, atol=1e-13)
    np.testing.assert_allclose(np.interp(sigma, slow.times, slow.states[:, 0]), fast.states[:, 0], rtol=1e-5)
