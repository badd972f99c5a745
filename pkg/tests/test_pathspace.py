import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from eikscat.pathspace import (
    DiscretePath,
    band_matvec,
    banded_to_dense,
    dual_norm,
    energy,
    energy_gradient,
    evaluate,
    graded_nodes,
    h1_gram_banded,
    hardy_ratio,
    hessian_apply,
    sobolev_norm,
    uniform_nodes,
)
from eikscat.potential import anisotropic_model, make_conformal_metric, radial_power, zero_potential

FLAT = make_conformal_metric(zero_potential(2), 1.0, 0.05)
RADIAL = make_conformal_metric(radial_power(2, 0.1, 0.6), 1.0, 0.05)
ANISO = make_conformal_metric(anisotropic_model(2), 1.0, 0.05)


def _bump_path(nodes, dim=2, amp=(3.0, -2.0)):
    s = nodes[:, None]
    vals = np.sin(np.pi * s) * np.asarray(amp)[None, :dim] + 0.5 * np.sin(3 * np.pi * s) * np.ones(dim)
    return DiscretePath(nodes, vals)


@given(st.integers(2, 300), st.floats(0.1, 500.0), st.floats(1.0, 100.0))
@settings(max_examples=50)
def test_graded_nodes_are_a_partition(n, length, scale):
    s = graded_nodes(n, length, scale)
    assert s[0] == 0.0 and s[-1] == 1.0
    assert np.all(np.diff(s) > 0)


def test_graded_nodes_uniform_for_short_paths():
    assert np.allclose(graded_nodes(64, 1e-8, 30.0), uniform_nodes(64))


def test_flat_energy_identity():
    nodes = uniform_nodes(400)
    path = _bump_path(nodes)
    x = np.array([4.0, -1.5])
    expect = float(x @ x) + sobolev_norm(path) ** 2
    assert energy(FLAT, x, path) == pytest.approx(expect, rel=1e-13)


def test_straight_path_energy_matches_quadrature():
    x = np.array([90.0, 40.0])
    nodes = graded_nodes(1024, float(np.linalg.norm(x)), RADIAL.cutoff_radius)
    path = DiscretePath.zeros(1024, 2, nodes)
    g = lambda t: float(RADIAL.factor((t * x)[None, :])[0])
    brk = [RADIAL.flat_radius / np.linalg.norm(x), RADIAL.cutoff_radius / np.linalg.norm(x)]
    ref = float(x @ x) * quad(g, 0.0, 1.0, points=brk, epsabs=0, epsrel=1e-13, limit=400)[0]
    assert energy(RADIAL, x, path) == pytest.approx(ref, rel=1e-8)


@pytest.mark.parametrize("metric", [RADIAL, ANISO])
def test_gradient_matches_differences(metric, rng):
    x = np.array([70.0, -35.0])
    nodes = graded_nodes(200, float(np.linalg.norm(x)), metric.cutoff_radius)
    path = _bump_path(nodes)
    grad = energy_gradient(metric, x, path)
    h = rng.normal(size=path.interior.shape)
    t = 1e-5
    plus = energy(metric, x, path.with_interior(path.interior + t * h))
    minus = energy(metric, x, path.with_interior(path.interior - t * h))
    fd = (plus - minus) / (2 * t)
    assert float(np.sum(grad.ravel() * h)) == pytest.approx(fd, rel=1e-6)


@pytest.mark.parametrize("metric", [RADIAL, ANISO])
def test_hessian_matches_gradient_differences(metric, rng):
    x = np.array([50.0, 60.0])
    nodes = graded_nodes(150, float(np.linalg.norm(x)), metric.cutoff_radius)
    path = _bump_path(nodes)
    h = rng.normal(size=path.interior.shape)
    t = 1e-5
    gp = energy_gradient(metric, x, path.with_interior(path.interior + t * h))
    gm = energy_gradient(metric, x, path.with_interior(path.interior - t * h))
    fd = (gp - gm) / (2 * t)
    hv = hessian_apply(metric, x, path, h)
    assert np.allclose(hv, fd, rtol=1e-5, atol=1e-6 * np.max(np.abs(fd)))


def test_hessian_band_symmetric():
    x = np.array([50.0, 60.0])
    path = _bump_path(graded_nodes(40, 78.1, ANISO.cutoff_radius))
    H = banded_to_dense(evaluate(ANISO, x, path).hessian)
    assert np.allclose(H, H.T, atol=1e-12 * np.max(np.abs(H)))


def test_flat_hessian_is_twice_gram():
    nodes = graded_nodes(60, 100.0, 30.0)
    path = _bump_path(nodes)
    H = banded_to_dense(evaluate(FLAT, np.array([3.0, 4.0]), path).hessian)
    M = banded_to_dense(h1_gram_banded(nodes, 2))
    assert np.allclose(H, 2 * M, rtol=1e-13, atol=1e-12)


def test_band_matvec_matches_dense(rng):
    nodes = graded_nodes(30, 50.0, 30.0)
    ab = h1_gram_banded(nodes, 3)
    v = rng.normal(size=ab.shape[1])
    assert np.allclose(band_matvec(ab, v), banded_to_dense(ab) @ v)


def test_sobolev_norm_of_parabola():
    nodes = uniform_nodes(2000)
    path = DiscretePath(nodes, (nodes * (1 - nodes))[:, None])
    assert sobolev_norm(path) == pytest.approx(1 / math.sqrt(3), rel=1e-6)
    assert sobolev_norm(path, np.inf) == pytest.approx(1.0, rel=1e-3)


def test_dual_norm_is_riesz_dual():
    # the functional h -> <M k, h> has dual norm ||k||_{H^1_0}
    nodes = graded_nodes(80, 60.0, 30.0)
    path = _bump_path(nodes, dim=1, amp=(2.0,))
    M = banded_to_dense(h1_gram_banded(nodes, 1))
    k = path.interior.ravel()
    assert dual_norm(nodes, (M @ k)[:, None]) == pytest.approx(sobolev_norm(path), rel=1e-12)


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=30))
@settings(max_examples=40)
def test_hardy_inequality(vals):
    n = len(vals) + 1
    nodes = uniform_nodes(n)
    path = DiscretePath(nodes, np.concatenate([[0.0], vals, [0.0]])[:, None])
    lhs, rhs = hardy_ratio(path)
    assert lhs <= rhs * (1 + 1e-12) + 1e-14


def test_path_csv_round_trip(tmp_path):
    path = _bump_path(graded_nodes(20, 40.0, 30.0))
    f = tmp_path / "path.csv"
    path.to_csv(f)
    back = DiscretePath.from_csv(f)
    assert np.array_equal(back.nodes, path.nodes)
    assert np.array_equal(back.values, path.values)


def test_path_pins_endpoints():
    path = DiscretePath(uniform_nodes(4), np.ones((5, 2)))
    assert np.all(path.values[0] == 0.0) and np.all(path.values[-1] == 0.0)
    with pytest.raises(ValueError):
        DiscretePath(uniform_nodes(4), np.ones((4, 2)))
