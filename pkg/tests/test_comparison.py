import numpy as np
import pytest
from hypothesis import given, strategies as st

from iosskit.comparison import (ComparisonFn, KLConditionError, KLFn, compose, fmax, fsum, identity, invert,
                                kl_cascade, kl_factorize, kl_majorize, linear, power, r_exp, sat_exp, scale,
                                table, tabulate, zero)

pos = st.floats(min_value=0.05, max_value=20.0)
radii = st.floats(min_value=1e-3, max_value=1e3)


def _leaf(draw_c, draw_p, kind):
    return {"linear": linear(draw_c), "power": power(draw_c, draw_p), "rexp": r_exp(draw_c, draw_p / 4)}[kind]


leaves = st.builds(_leaf, pos, st.floats(min_value=0.3, max_value=3.0),
                   st.sampled_from(["linear", "power", "rexp"]))


def test_negative_argument_rejected():
    with pytest.raises(ValueError):
        identity()(-1.0)


def test_constructors_validate():
    for bad in (lambda: linear(0.0), lambda: power(1.0, 0.0), lambda: sat_exp(-1.0, 1.0)):
        with pytest.raises(ValueError):
            bad()


def test_zero_is_not_class_k():
    with pytest.raises(ValueError):
        zero().check_class_k()
    with pytest.raises(ValueError):
        invert(zero())


def test_compose_simplifies_powers():
    f = compose(power(2.0, 2.0), linear(3.0))
    assert f.tag == "power" and f(1.0) == pytest.approx(18.0)


def test_bounded_inverse_needs_cap():
    with pytest.raises(ValueError):
        invert(sat_exp(1.0, 1.0))
    g = invert(sat_exp(2.0, 1.0), range_cap=1.5)
    assert float(sat_exp(2.0, 1.0)(g(1.0))) == pytest.approx(1.0)


def test_table_rejects_non_monotone():
    with pytest.raises(ValueError):
        table([1.0, 2.0], [1.0, 1.0])


@given(leaves, radii)
def test_invert_round_trip(f, r):
    g = invert(f)
    assert float(g(f(r))) == pytest.approx(r, rel=2e-3)


@given(leaves, leaves, st.floats(min_value=1e-3, max_value=50.0), st.floats(min_value=1e-3, max_value=50.0))
def test_combinators_monotone(f, g, a, b):
    lo, hi = min(a, b), max(a, b)
    for h in (compose(f, g), fmax(f, g), fsum(f, g), scale(2.5, f)):
        assert float(h(lo)) <= float(h(hi)) * (1 + 1e-12)
        assert float(h(0.0)) == 0.0


@given(leaves)
def test_serialization_round_trip(f):
    h = ComparisonFn.from_dict(compose(f, fmax(f, linear(2.0))).to_dict())
    r = np.geomspace(1e-3, 10.0, 17)
    np.testing.assert_allclose(h(r), compose(f, fmax(f, linear(2.0)))(r), rtol=1e-12)


def test_callable_not_serializable():
    f = tabulate(lambda r: r + r ** 3)
    assert f.serializable
    with pytest.raises(TypeError):
        invert(sat_exp(1.0, 1.0), range_cap=0.5).to_dict()


def test_tabulate_accuracy():
    f = tabulate(lambda r: r * np.log1p(r), rtol=1e-4)
    r = np.geomspace(1e-3, 1e3, 50)
    np.testing.assert_allclose(f(r), r * np.log1p(r), rtol=1e-4)


def test_kl_exponential_factored():
    b = KLFn.exponential(3.0, 2.0)
    assert float(b(2.0, 0.5)) == pytest.approx(3.0 * 2.0 * np.exp(-1.0))
    assert KLFn.from_dict(b.to_dict())(2.0, 0.5) == pytest.approx(b(2.0, 0.5))


@given(st.floats(min_value=0.2, max_value=5.0), st.floats(min_value=0.2, max_value=3.0))
def test_kl_factorize_dominates(c, k):
    r = np.geomspace(0.01, 10.0, 15)
    t = np.linspace(0.0, 8.0, 12)
    v = c * r[:, None] ** 1.5 / (1.0 + k * t[None, :])
    beta = kl_factorize(r, t, v)
    R, T = np.meshgrid(r, t, indexing="ij")
    assert np.all(beta(R, T) >= v * (1 - 1e-9))


def test_kl_majorize_conditions():
    r = np.geomspace(0.01, 10.0, 10)
    t = np.linspace(0.0, 10.0, 10)
    with pytest.raises(KLConditionError) as exc:
        kl_majorize(r, t, np.tile(r[:, None], (1, t.size)))
    assert exc.value.condition == 1
    with pytest.raises(KLConditionError) as exc:
        kl_majorize(r, t, np.ones((r.size, 1)) * np.exp(-t)[None, :])
    assert exc.value.condition == 2


def test_kl_cascade_exact_fixed_point():
    beta, nu = kl_cascade(KLFn.exponential())
    assert float(nu(3.0)) == 6.0
    assert float(beta(2.0, 1.0)) == pytest.approx(2.0 * np.exp(-1.0), abs=1e-12)


@given(st.floats(min_value=0.05, max_value=50.0), st.floats(min_value=0.0, max_value=10.0),
       st.floats(min_value=0.0, max_value=10.0))
def test_kl_cascade_monotone_in_time(r, t1, t2):
    beta, _ = kl_cascade(KLFn(power(1.0, 2.0), identity()))
    lo, hi = min(t1, t2), max(t1, t2)
    assert float(beta(r, hi)) <= float(beta(r, lo)) * (1 + 1e-12)
    assert float(beta(r, lo)) >= float(KLFn(power(1.0, 2.0), identity())(r, lo)) * (1 - 1e-12)
