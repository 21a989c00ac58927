import numpy as np

from iosskit.checks import Battery
from iosskit.fixtures import get_fixture
from iosskit.linear import LinearSystem, synthesize_certificate
from iosskit.lyapunov import exp_decay_rescale
from iosskit.observer import (build_estimator, run_coupled, verify_estimator_implies_uioss,
                              verify_gap_decay)


def _est():
    sys_ = get_fixture("linear-double-integrator")
    cert = synthesize_certificate(LinearSystem.from_model(sys_), [[-2.0], [-1.0]])
    return sys_, build_estimator(exp_decay_rescale(cert.candidate()))


def test_build_requires_value_decay():
    sys_ = get_fixture("linear-double-integrator")
    cert = synthesize_certificate(LinearSystem.from_model(sys_), [[-2.0], [-1.0]])
    try:
        build_estimator(cert.candidate())
    except ValueError:
        pass
    else:
        raise AssertionError("state-decay candidate accepted")


def test_gap_decays_and_bounds_state(tmp_path):
    sys_, est = _est()
    items = Battery(n_runs=12, r_min=0.1, r_max=3.0, horizon=6.0, seed=1).generate(sys_)
    rep = verify_gap_decay(sys_, est, items)
    assert rep.holds and rep.extras["state_bound"]["verdict"] == "HoldsOnSamples"
    plant, trace = run_coupled(sys_, est, items[0].x0, 0.0, items[0].u, items[0].w, 2.0)
    assert np.all(trace.bound >= trace.x_norm - 1e-9)
    trace.to_csv(tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().startswith("t,|x|,V(x),p,bound")


def test_estimator_starting_at_storage_tracks_it():
    sys_, est = _est()
    items = Battery(n_runs=4, r_min=0.5, r_max=2.0, horizon=4.0, seed=2).generate(sys_)
    assert verify_gap_decay(sys_, est, items, zeta0=None).holds


def test_uioss_holds_and_shrunken_gains_fail():
    sys_, est = _est()
    items = Battery(n_runs=12, r_min=0.1, r_max=3.0, horizon=6.0, seed=1).generate(sys_)
    assert verify_estimator_implies_uioss(sys_, est, items).holds
    assert verify_estimator_implies_uioss(sys_, est, items, gain_scale=1e-3).falsified
