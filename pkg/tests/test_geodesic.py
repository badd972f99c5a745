import numpy as np
import pytest

from eikscat.eikonal import RadialOracle
from eikscat.geodesic import (
    conservation_defect,
    endpoint_velocity,
    geodesic_ode_residual,
    hessian_min_eig,
    minimize_energy,
    speed_band,
)
from eikscat.pathspace import DiscretePath
from eikscat.potential import anisotropic_model, make_conformal_metric, radial_power, zero_potential

FLAT = make_conformal_metric(zero_potential(2), 1.0, 0.1)
RADIAL = make_conformal_metric(radial_power(2, 0.1, 0.6), 1.0, 0.05)
RADIAL3 = make_conformal_metric(radial_power(3, 0.1, 0.6), 1.0, 0.05)
ANISO = make_conformal_metric(anisotropic_model(2), 1.0, 0.05)


def test_flat_geodesic_is_straight():
    res = minimize_energy(FLAT, [3.0, 4.0], n_segments=64)
    assert res.energy == pytest.approx(25.0, rel=1e-14)
    assert res.S == pytest.approx(5.0, rel=1e-14)
    assert np.max(np.abs(res.path.values)) < 1e-12
    assert np.max(np.abs(endpoint_velocity(res))) < 1e-12
    assert geodesic_ode_residual(FLAT, res) < 1e-12
    assert conservation_defect(FLAT, res) < 1e-12


def test_zero_endpoint():
    res = minimize_energy(RADIAL, [0.0, 0.0])
    assert res.energy == 0.0
    assert np.all(res.path.values == 0.0)


def test_radial_geodesic_matches_quadrature():
    x = np.array([120.0, 0.0, 0.0])
    res = minimize_energy(RADIAL3, x, n_segments=1024)
    oracle = RadialOracle(RADIAL3)
    assert res.S == pytest.approx(oracle.S(120.0), rel=1e-6)
    assert np.max(np.abs(res.path.values[:, 1:])) < 1e-10
    kd = endpoint_velocity(res)
    assert abs(kd[0] - oracle.kdot1(120.0)) <= 1e-5 * 120.0


def test_ode_residual_halves_and_perturbation_contrast():
    x = np.array([150.0, 0.0])
    r1 = geodesic_ode_residual(RADIAL, minimize_energy(RADIAL, x, n_segments=512))
    res = minimize_energy(RADIAL, x, n_segments=1024)
    r2 = geodesic_ode_residual(RADIAL, res)
    assert r2 < r1
    s = res.path.nodes
    bumped = DiscretePath(s, res.path.values + 0.5 * np.sin(np.pi * s)[:, None] * np.array([1.0, 1.0]))
    res_b = type(res)(res.x, bumped, res.energy, 0, 1.0, 0.0, RADIAL)
    assert geodesic_ode_residual(RADIAL, res_b) > r2


def test_conservation_quarters_under_refinement():
    x = np.array([90.0, 70.0])
    d = [conservation_defect(ANISO, minimize_energy(ANISO, x, n_segments=n)) for n in (256, 512, 1024)]
    assert d[2] <= 1e-5
    assert d[1] / d[2] > 3.0


def test_speed_band_inside_ellipticity_bounds():
    res = minimize_energy(ANISO, [90.0, 70.0], n_segments=1024)
    lo, hi = speed_band(ANISO, res)
    a, b = ANISO.a, ANISO.b
    assert lo >= a / b * (1 - 1e-3)
    assert hi <= b / a * (1 + 1e-3)


def test_hessian_min_eig_flat_and_near_flat():
    res = minimize_energy(FLAT, [3.0, 4.0], n_segments=128)
    assert hessian_min_eig(FLAT, res.x, res.path) == pytest.approx(2.0, abs=1e-8)
    c = [hessian_min_eig(ANISO, *(lambda r: (r.x, r.path))(minimize_energy(ANISO, [90.0, 70.0], n_segments=n)))
         for n in (512, 1024)]
    assert 1.0 < c[1] < 3.0
    assert abs(c[0] / c[1] - 1.0) < 0.05


def test_warm_start_gives_same_minimizer():
    x = np.array([80.0, -60.0])
    cold = minimize_energy(ANISO, x, n_segments=256)
    warm = minimize_energy(ANISO, x * 1.01, init=cold, n_segments=256)
    again = minimize_energy(ANISO, x, init=warm, n_segments=256)
    assert again.S == pytest.approx(cold.S, rel=1e-12)


def test_record_is_json_serializable():
    import json

    res = minimize_energy(RADIAL, [60.0, 10.0], n_segments=128)
    rec = json.loads(res.to_json())
    assert set(rec) >= {"x", "E", "S", "kdot1", "defects", "iters"}
