import numpy as np
import pytest
from hypothesis import given, strategies as st

from iosskit.checks import (Battery, BatteryItem, EstimateSpec, check_estimate, check_iiuoss,
                            check_incremental, evaluate_estimate, gasmo_margin_from_uoss, replay_witness,
                            stability_margin)
from iosskit.comparison import KLFn, identity, linear, r_exp
from iosskit.dynamics import Signal, close_robust_loop, simulate
from iosskit.fixtures import ESCAPE_EPS, get_fixture


def test_spec_validation():
    with pytest.raises(ValueError):
        EstimateSpec("NOPE", {})
    with pytest.raises(ValueError):
        EstimateSpec("UOSS", {"beta": KLFn.exponential()})
    with pytest.raises(TypeError):
        EstimateSpec("UOSS", {"beta": identity(), "gamma2": identity()})


def test_battery_deterministic_and_round_trips():
    sys_ = get_fixture("scalar-decay")
    a = Battery(n_runs=5, seed=3).generate(sys_)
    b = Battery(n_runs=5, seed=3).generate(sys_)
    for x, y in zip(a, b):
        assert x.to_dict() == y.to_dict()
        assert BatteryItem.from_dict(x.to_dict()).to_dict() == x.to_dict()


def test_oss_holds_on_observed_decay():
    sys_ = get_fixture("decay-observed")
    spec = EstimateSpec("UOSS", {"beta": KLFn.exponential(), "gamma2": identity()})
    assert check_estimate(sys_, spec, Battery(n_runs=10, horizon=5.0)).holds


def test_uioss_with_input():
    sys_ = get_fixture("scalar-decay")
    spec = EstimateSpec("UIOSS", {"beta": KLFn.exponential(), "gamma1": linear(1.0), "gamma2": identity()})
    assert check_estimate(sys_, spec, Battery(n_runs=10, horizon=5.0)).holds


def test_gamma_too_small_falsified_and_replayed():
    sys_ = get_fixture("scalar-decay")
    spec = EstimateSpec("UIOSS", {"beta": KLFn.exponential(0.5), "gamma1": linear(0.01),
                                  "gamma2": linear(0.01)})
    rep = check_estimate(sys_, spec, Battery(n_runs=10, horizon=5.0))
    assert rep.falsified and rep.witness["lhs"] > rep.witness["rhs"]
    assert replay_witness(sys_, spec, rep.witness).falsified


def test_iiuoss_on_escaping_fixture():
    sys_ = get_fixture("remark-3-10")
    bat = Battery(n_runs=20, r_min=0.05, r_max=20.0, horizon=5.0)
    kappa = linear(1.0 / (1.0 + ESCAPE_EPS))
    rep = check_iiuoss(sys_, identity(), kappa, identity(), bat)
    assert rep.holds and rep.counts["escaped"] > 0
    assert check_iiuoss(sys_, linear(100.0), kappa, identity(), bat).falsified


def test_gasmo_premise_latches():
    sys_ = get_fixture("decay-observed")
    tr = simulate(sys_, [1.0], horizon=2.0)
    spec = EstimateSpec("GASMO", {"lam": KLFn.exponential(), "rho": linear(2.0)})
    _, _, active = evaluate_estimate(sys_, spec, tr)
    # |x| >= 2|h(x)| never holds for h = x away from 0
    assert not active.any()


def test_incremental_on_linear():
    sys_ = get_fixture("scalar-decay")
    spec = EstimateSpec("dUIOSS", {"beta": KLFn.exponential(), "gamma1": linear(1.0), "gamma2": identity()})
    assert check_incremental(sys_, spec, Battery(n_runs=6, horizon=4.0, paired=True)).holds


@given(st.floats(min_value=1.0, max_value=10.0))
def test_inflating_gains_preserves_holds(factor):
    sys_ = get_fixture("decay-observed")
    spec = EstimateSpec("UOSS", {"beta": KLFn.exponential(), "gamma2": identity()})
    assert check_estimate(sys_, spec.inflated(factor), Battery(n_runs=4, horizon=3.0)).holds


def test_margins_are_class_k():
    beta = KLFn.exponential(2.0)
    rho = gasmo_margin_from_uoss(beta, linear(3.0))
    phi = stability_margin(beta, r_exp(1.0, 0.5))
    r = np.geomspace(1e-3, 10.0, 30)
    assert np.all(np.diff(rho(r)) > 0) and np.all(rho(r) > r)
    assert np.all(np.diff(phi(r)) > 0)


def test_stability_margin_feedback_keeps_estimate():
    sys_ = get_fixture("scalar-decay")
    beta, g1 = KLFn.exponential(), linear(1.0)
    phi = stability_margin(beta, g1)
    closed = close_robust_loop(sys_, phi)
    spec = EstimateSpec("UOSS", {"beta": KLFn.exponential(3.0), "gamma2": linear(3.0)})
    assert check_estimate(closed, spec, Battery(n_runs=8, horizon=5.0)).holds
