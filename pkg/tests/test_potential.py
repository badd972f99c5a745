import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eikscat.errors import EllipticityViolation, EmptySample, ExponentOutOfRange, UnsupportedOrder
from eikscat.potential import (
    FiniteDifferenceField,
    anisotropic_model,
    chi_plus,
    from_callable,
    load_model,
    make_conformal_metric,
    metric_order_norm,
    model_from_spec,
    multi_indices,
    radial_power,
    three_body_cutoff_potential,
    three_body_exponents,
    verify_decay_hypotheses,
    write_tabulated,
    zero_potential,
)


@given(st.floats(-10.0, 10.0))
def test_chi_range_and_plateaus(t):
    v = float(chi_plus(np.array(t)))
    assert 0.0 <= v <= 1.0
    if t <= 4.0 / 3.0:
        assert v == 0.0
    if t >= 5.0 / 3.0:
        assert v == 1.0


@given(st.floats(4.0 / 3.0, 5.0 / 3.0), st.floats(0.0, 0.2))
def test_chi_monotone(t, dt):
    assert float(chi_plus(np.array(t + dt))) >= float(chi_plus(np.array(t))) - 1e-15


@pytest.mark.parametrize("order", [1, 2, 3, 4])
def test_chi_derivatives_match_differences(order):
    t = np.linspace(1.36, 1.64, 9)
    h = 2.5e-4
    f = lambda u: chi_plus(u, order - 1)
    fd = (8 * (f(t + h) - f(t - h)) - (f(t + 2 * h) - f(t - 2 * h))) / (12 * h)
    exact = chi_plus(t, order)
    assert np.allclose(fd, exact, rtol=1e-5, atol=1e-5 * np.max(np.abs(exact)))


def test_multi_indices_counts():
    assert len(multi_indices(2, 3)) == 4
    assert len(multi_indices(3, 2)) == 6
    assert all(sum(g) == 4 for g in multi_indices(3, 4))


def test_radial_power_gradient_closed_form():
    m = radial_power(2, amplitude=0.3, sigma=0.6)
    x = np.array([[1.5, -2.0], [10.0, 3.0]])
    jx2 = 1.0 + np.sum(x**2, axis=1)
    expect = -0.3 * 0.6 * x[:, 0] * jx2 ** (-0.3 - 1.0)
    assert np.allclose(m.derivative(x, (1, 0)), expect, rtol=1e-12)
    assert np.allclose(m(x), 0.3 * jx2 ** (-0.3), rtol=1e-13)


def test_mixed_partials_symmetric():
    m = anisotropic_model(2)
    x = np.array([[3.0, -1.0], [20.0, 7.0]])
    a = m.derivative(x, (2, 1))
    fd = FiniteDifferenceField(m, 2)
    assert np.allclose(fd.derivative(x, (2, 1)), a, rtol=1e-4, atol=1e-8)
    assert np.allclose(fd.derivative(x, (1, 2)), m.derivative(x, (1, 2)), rtol=1e-4, atol=1e-8)


def test_finite_difference_field_matches_symbolic():
    m = radial_power(2, amplitude=0.2, sigma=0.5)
    wrapped = from_callable(m, 2, 0.5)
    x = np.array([[2.0, 1.0], [6.0, -4.0]])
    for k in range(4):
        for g in multi_indices(2, k):
            assert np.allclose(wrapped.derivative(x, g), m.derivative(x, g), rtol=1e-4, atol=1e-8)


def test_order_above_four_rejected():
    m = radial_power(2)
    with pytest.raises(UnsupportedOrder):
        m.derivative(np.zeros((1, 2)), (5, 0))


def test_three_body_exponents_value():
    sigma, rho = three_body_exponents(0.8)
    assert sigma == pytest.approx(0.24, abs=1e-12)
    assert rho == pytest.approx(0.8, abs=1e-12)


@pytest.mark.parametrize("mu", [0.5, math.sqrt(3) - 1 - 1e-9, 1.0])
def test_three_body_exponents_range(mu):
    with pytest.raises(ExponentOutOfRange):
        three_body_exponents(mu)


@given(st.floats(0.74, 0.99))
@settings(max_examples=30)
def test_three_body_exponents_admissible(mu):
    sigma, rho = three_body_exponents(mu)
    assert 0.0 < sigma < 1.0 and 0.0 < rho <= 1.0
    # each derivative order must decay at least as fast as mu(|g| + mu)
    for k in range(5):
        e = k + sigma if k <= 2 else 2 + sigma + rho * (k - 2)
        assert e <= mu * (k + mu) + 1e-9


def test_three_body_zero_amplitude_is_zero():
    m = three_body_cutoff_potential(1, 3, mu=0.8, zero=True)
    assert m.is_zero
    assert np.all(m(np.ones((4, 3))) == 0.0)


def test_ellipticity_threshold():
    big = radial_power(2, amplitude=4.0, sigma=0.5)
    with pytest.raises(EllipticityViolation):
        make_conformal_metric(big, 1.0, 0.05)


def test_metric_flat_inside_cutoff():
    metric = make_conformal_metric(radial_power(2, 0.1, 0.6), 1.0, 0.05)
    r_in = 4.0 / (3.0 * 0.05)
    pts = np.array([[0.0, 0.0], [r_in * 0.99, 0.0], [0.0, -r_in * 0.5]])
    assert np.all(metric.factor(pts) == 1.0)
    assert 0.5 <= metric.a <= 1.0 <= metric.b <= 1.5


def test_zero_metric_norms():
    metric = make_conformal_metric(zero_potential(2), 1.0, 0.05)
    pts = np.random.default_rng(0).normal(size=(50, 2)) * 100
    full, pert = metric_order_norm(metric, 4, pts)
    assert full == 1.0 and pert == 0.0


def test_metric_norm_errors_and_monotonicity():
    metric = make_conformal_metric(radial_power(2, 0.1, 0.6), 1.0, 0.05)
    pts = np.array([[40.0, 0.0], [80.0, 30.0], [300.0, -100.0]])
    with pytest.raises(UnsupportedOrder):
        metric_order_norm(metric, 5, pts)
    with pytest.raises(EmptySample):
        metric_order_norm(metric, 1, np.zeros((0, 2)))
    vals = [metric_order_norm(metric, l, pts)[1] for l in range(5)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("model", [zero_potential(2), radial_power(2), anisotropic_model(2)])
def test_decay_hypotheses_pass(model):
    rep = verify_decay_hypotheses(model, n_radial=4, n_dirs=16)
    assert rep.passed


def test_decay_hypotheses_detect_growth():
    grow = from_callable(lambda x: 1e-3 * np.linalg.norm(x, axis=-1), 2, sigma=0.5)
    rep = verify_decay_hypotheses(grow, n_radial=4, n_dirs=8, max_order=1)
    assert not rep.passed
    assert 0 in rep.failed_orders()


def test_spec_round_trip(tmp_path):
    m = anisotropic_model(2)
    path = tmp_path / "model.json"
    path.write_text(json.dumps(m.spec))
    back = load_model(path)
    x = np.array([[30.0, 4.0], [-9.0, 12.0]])
    assert np.allclose(back(x), m(x), rtol=1e-14)
    assert (back.sigma, back.rho) == (m.sigma, m.rho)


def test_tabulated_reproduces_grid(tmp_path):
    m = radial_power(2, 0.1, 0.6)
    x1 = np.linspace(-20, 20, 81)
    x2 = np.linspace(-20, 20, 81)
    path = tmp_path / "v.csv"
    write_tabulated(path, m, x1, x2)
    tab = model_from_spec({"kind": "tabulated", "grid": "v.csv", "sigma": 0.6}, base_dir=tmp_path)
    pts = np.array([[x1[3], x2[70]], [x1[40], x2[40]]])
    assert np.allclose(tab(pts), m(pts), rtol=1e-10)
    mid = np.array([[1.25, -3.75]])
    assert tab(mid)[0] == pytest.approx(m(mid)[0], rel=1e-4)


def test_unknown_kind():
    with pytest.raises(ValueError):
        model_from_spec({"kind": "nope"})
