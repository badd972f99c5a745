import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from eikscat.errors import BadRadii
from eikscat.eikonal import (
    EikonalField,
    ExponentSchedule,
    RadialOracle,
    convexity_defect,
    decay_profile,
    epsilon_schedule,
    exponents,
    regularize,
    second_derivatives,
)
from eikscat.potential import anisotropic_model, make_conformal_metric, radial_power, zero_potential

FLAT = EikonalField(make_conformal_metric(zero_potential(2), 1.0, 0.1), n_segments=64)
RADIAL_METRIC = make_conformal_metric(radial_power(2, 0.1, 0.6), 1.0, 0.05)
ANISO_METRIC = make_conformal_metric(anisotropic_model(2), 1.0, 0.05)


def test_flat_value_and_gradient():
    S, g = FLAT.eval_S([3.0, 4.0])
    assert S == pytest.approx(5.0, rel=1e-14)
    assert np.allclose(g, [0.6, 0.8], atol=1e-13)
    assert FLAT.residual([3.0, 4.0]) < 1e-13


def test_flat_hessian():
    H = second_derivatives(FLAT, [2.0, 0.0])
    assert np.allclose(H, np.diag([0.0, 0.5]), atol=1e-6)


def test_flat_convexity_defect_vanishes():
    assert abs(convexity_defect(FLAT, [5.0, -2.0])) < 1e-6


def test_radial_oracle_value_and_gradient():
    field = EikonalField(RADIAL_METRIC)
    oracle = RadialOracle(RADIAL_METRIC)
    r = 140.0
    S, g = field.eval_S([r, 0.0])
    ref = quad(lambda t: math.sqrt(RADIAL_METRIC.factor(np.array([[t, 0.0]]))[0]), 0, r,
               points=[RADIAL_METRIC.flat_radius, RADIAL_METRIC.cutoff_radius], epsabs=0, epsrel=1e-13)[0]
    assert oracle.S(r) == pytest.approx(ref, rel=1e-12)
    assert S == pytest.approx(ref, rel=1e-6)
    assert g[0] == pytest.approx(oracle.grad_norm(r), rel=1e-6)
    assert abs(g[1]) < 1e-9
    assert field.residual([r, 0.0]) < 1e-8


def test_gradient_matches_directional_difference():
    field = EikonalField(ANISO_METRIC)
    x = np.array([70.0, 55.0])
    u = np.array([0.6, -0.8])
    t = 1e-2
    fd = (field.S_geo(x + t * u) - field.S_geo(x - t * u)) / (2 * t)
    assert float(field.gradient(x) @ u) == pytest.approx(fd, rel=1e-6, abs=1e-8)


def test_anisotropic_residual_refines():
    x = np.array([70.0, 55.0])
    r1 = EikonalField(ANISO_METRIC, n_segments=512).residual(x)
    r2 = EikonalField(ANISO_METRIC, n_segments=1024).residual(x)
    assert r2 <= 1e-5
    assert r1 / r2 > 3.0


def test_hessian_symmetry():
    H = second_derivatives(EikonalField(ANISO_METRIC), [70.0, 55.0], symmetrize=False)
    assert abs(H[0, 1] - H[1, 0]) <= 1e-6 * np.linalg.norm(H)


def test_regularized_field_cap_and_blend():
    field = EikonalField(RADIAL_METRIC, n_segments=256)
    r_in = 1.05 * RADIAL_METRIC.cutoff_radius
    reg = regularize(field, r_in, 1.5 * r_in)
    assert reg([0.0, 0.0]) == 1.0
    far = np.array([1.6 * r_in, 0.0])
    assert reg(far) == field.S_phys(far)
    vals = [reg([r, 0.3 * r]) for r in np.linspace(0, 1.6 * r_in, 40)]
    assert min(vals) >= 1.0 - 1e-12
    with pytest.raises(BadRadii):
        regularize(field, 1.0, 2.0)


def test_regularized_gradient_matches_difference():
    field = EikonalField(RADIAL_METRIC, n_segments=512)
    r_in = 1.05 * RADIAL_METRIC.cutoff_radius
    reg = regularize(field, r_in, 1.5 * r_in)
    x = np.array([1.2 * r_in, 0.2 * r_in])
    _, g = reg.value_and_gradient(x)
    t = 1e-3
    fd = (reg(x + [t, 0.0]) - reg(x - [t, 0.0])) / (2 * t)
    assert g[0] == pytest.approx(fd, rel=1e-5)


def test_flat_decay_profile_is_zero():
    prof = decay_profile(FLAT, (0, 0), [8.0, 16.0], n_radial=2, n_dirs=4)
    assert np.all(np.abs(prof.values) < 1e-12)


def test_exponent_schedule_values():
    sch = ExponentSchedule(Fraction(1, 2), Fraction(7, 10))
    assert exponents(sch, 2) == (Fraction(17, 10), 2)
    assert exponents(sch, 3) == (Fraction(12, 5), Fraction(27, 10))
    with pytest.raises(ValueError):
        exponents(sch, -1)


@given(st.fractions(Fraction(1, 100), Fraction(1)), st.integers(0, 6))
@settings(max_examples=60)
def test_exponent_identity(rho, k):
    sch = ExponentSchedule(Fraction(1, 2), rho)
    m, mt = exponents(sch, k)
    assert m == sch.m_tilde(k + 1) - 1
    assert mt == (k if k <= 2 else 2 + (k - 2) * rho)


@given(st.floats(1e-3, 1e3))
def test_epsilon_schedule_positive_and_bounded(lam):
    e = epsilon_schedule(lam)
    assert 0.0 < e <= 0.2
