"""Point-wise eikonal field built from geodesic solves.

Geometric normalization: ``S_geo(x)^2 = min E(x, .)`` solves
``grad S G^-1 grad S = 1`` outside the cutoff radius. Physical
normalization: ``S_phys = sqrt(2 lam) S_geo`` solves
``|grad S|^2 = 2 (lam - chi V)``.

The gradient is never differenced from ``S``; it comes from the endpoint
velocity of the geodesic, ``grad S = G(x) (x + kappa'(1)) / S``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import IntegrationWarning, quad

from .errors import BadRadii
from .geodesic import GeodesicResult, default_nodes, minimize_energy
from .pathspace import DiscretePath, sobolev_norm
from .potential import ConformalMetric, chi_plus, multi_indices
from .sphere import sphere_points

__all__ = [
    "ExponentSchedule",
    "exponents",
    "epsilon_schedule",
    "EikonalField",
    "RegularizedField",
    "eval_S",
    "eikonal_residual",
    "second_derivatives",
    "regularize",
    "RadialOracle",
    "ShellProfile",
    "decay_profile",
    "decay_profiles",
    "s_jet",
    "kappa_derivative_profile",
    "convexity_defect",
]


# ---------------------------------------------------------------------------
# exponent bookkeeping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExponentSchedule:
    """Decay-exponent functions of the (sigma, rho) class.

    ``m_tilde(k) = k`` for ``k <= 2`` and ``2 + (k-2) rho`` beyond;
    ``m(k) = k`` for ``k <= 1`` and ``1 + (k-1) rho`` beyond.

    Arithmetic follows the type of ``rho``, so ``Fraction`` inputs give
    exact values.
    """

    sigma: float
    rho: float

    def m_tilde(self, k: int):
        k = _check_order(k)
        return k if k <= 2 else 2 + (k - 2) * self.rho

    def m(self, k: int):
        k = _check_order(k)
        return k if k <= 1 else 1 + (k - 1) * self.rho


def _check_order(k):
    if int(k) != k or k < 0:
        raise ValueError(f"order must be a nonnegative integer, got {k!r}")
    return int(k)


def exponents(schedule: ExponentSchedule, k: int) -> tuple:
    """``(m(k), m_tilde(k))``."""
    return schedule.m(k), schedule.m_tilde(k)


def epsilon_schedule(lam: float, eps0: float = 0.2) -> float:
    """Smooth cutoff scale ``eps(lam) = eps0 min(1, lam) / (1 + |log lam|)``."""
    if lam <= 0:
        raise ValueError("energy must be positive")
    return eps0 * min(1.0, lam) / (1.0 + abs(math.log(lam)))


# ---------------------------------------------------------------------------
# eikonal field
# ---------------------------------------------------------------------------

class EikonalField:
    """Evaluator of ``S``, ``grad S`` and ``hess S`` by geodesic solves.

    Parameters
    ----------
    metric : ConformalMetric
    n_segments : int
        Path segments per solve.
    grading : {"graded", "uniform"}
        Path grid policy, see :func:`eikscat.geodesic.default_nodes`.
    h_rel : float
        Relative step for differences of the gradient.
    polish : bool
        Drive every solve to rounding level (needed for differencing).

    The instance keeps the last geodesic as a warm start; use one instance
    per worker.
    """

    def __init__(self, metric: ConformalMetric, n_segments: int = 1024, grading: str = "graded",
                 h_rel: float = 1e-3, polish: bool = True, tol_grad: float | None = None):
        self.metric = metric
        self.n_segments = int(n_segments)
        self.grading = grading
        self.h_rel = float(h_rel)
        self.polish = polish
        self.tol_grad = tol_grad
        self._last: GeodesicResult | None = None
        self.n_solves = 0

    @property
    def lam(self) -> float:
        return self.metric.lam

    @property
    def k(self) -> float:
        """``sqrt(2 lam)``, the factor between the two normalizations."""
        return math.sqrt(2.0 * self.metric.lam)

    @property
    def dim(self) -> int:
        return self.metric.dim

    def with_segments(self, n_segments: int) -> "EikonalField":
        return EikonalField(self.metric, n_segments, self.grading, self.h_rel, self.polish, self.tol_grad)

    def nodes_for(self, x):
        return default_nodes(self.metric, x, self.n_segments, self.grading)

    def solve(self, x, init=None, nodes=None) -> GeodesicResult:
        x = np.asarray(x, dtype=float)
        if init is None and self._last is not None and float(x @ x) > 0:
            init = self._last
        try:
            res = minimize_energy(self.metric, x, init, n_segments=self.n_segments, nodes=nodes,
                                  grading=self.grading, tol_grad=self.tol_grad, polish=self.polish)
        except Exception:
            if init is None:
                raise
            res = minimize_energy(self.metric, x, None, n_segments=self.n_segments, nodes=nodes,
                                  grading=self.grading, tol_grad=self.tol_grad, polish=self.polish)
        self.n_solves += 1
        if float(x @ x) > 0:
            self._last = res
        return res

    def gradient_from(self, res: GeodesicResult) -> np.ndarray:
        """``grad S_geo = g(x) (x + kappa'(1)) / S``."""
        if res.energy == 0.0:
            return np.zeros(self.dim)
        g = float(self.metric.factor(res.x[None, :])[0])
        return g * (res.x + res.kdot1) / res.S

    def eval_S(self, x, nodes=None) -> tuple[float, np.ndarray]:
        """Geometric ``(S, grad S)``."""
        res = self.solve(x, nodes=nodes)
        return res.S, self.gradient_from(res)

    def eval_phys(self, x) -> tuple[float, np.ndarray]:
        S, g = self.eval_S(x)
        return self.k * S, self.k * g

    def S_geo(self, x) -> float:
        return self.solve(x).S

    def S_phys(self, x) -> float:
        return self.k * self.solve(x).S

    def gradient(self, x, nodes=None) -> np.ndarray:
        return self.eval_S(x, nodes=nodes)[1]

    def evaluate_many(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Geometric ``S`` and ``grad S`` at an array of points (M, d)."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        S = np.empty(pts.shape[0])
        G = np.empty_like(pts)
        for i, p in enumerate(pts):
            S[i], G[i] = self.eval_S(p)
        return S, G

    def hessian(self, x, h_rel: float | None = None) -> np.ndarray:
        """Geometric ``hess S`` by centered differences of the gradient."""
        x = np.asarray(x, dtype=float)
        h = (self.h_rel if h_rel is None else h_rel) * max(float(np.linalg.norm(x)), 1.0)
        d = self.dim
        nodes = self.nodes_for(x)
        H = np.empty((d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = h
            H[:, j] = (self.gradient(x + e, nodes) - self.gradient(x - e, nodes)) / (2.0 * h)
        return H

    def residual(self, x) -> float:
        """``|grad S G^-1 grad S - 1|`` (geometric eikonal residual)."""
        S, g = self.eval_S(x)
        if S == 0.0:
            return 0.0
        gf = float(self.metric.factor(np.asarray(x, float)[None, :])[0])
        return abs(float(g @ g) / gf - 1.0)


def eval_S(field: EikonalField, x) -> tuple[float, np.ndarray]:
    return field.eval_S(x)


def eikonal_residual(field: EikonalField, x) -> float:
    return field.residual(x)


def second_derivatives(field: EikonalField, x, symmetrize: bool = True) -> np.ndarray:
    """Geometric ``hess S`` at ``x``, symmetrized."""
    H = field.hessian(x)
    return 0.5 * (H + H.T) if symmetrize else H


def convexity_defect(field: EikonalField, x) -> float:
    """Smallest eigenvalue of ``S hess S + |grad S><grad S| - |grad S|^2 I``."""
    S, g = field.eval_S(x)
    H = second_derivatives(field, x)
    M = S * H + np.outer(g, g) - float(g @ g) * np.eye(field.dim)
    return float(np.linalg.eigvalsh(M)[0])


# ---------------------------------------------------------------------------
# regularization near the origin
# ---------------------------------------------------------------------------

def _blend(t, order=0):
    """C-infinity ramp from 0 at t <= 0 to 1 at t >= 1."""
    from .potential import ramp

    return ramp(order, t)


@dataclass
class RegularizedField:
    """Physical eikonal ``S`` blended with a quadratic cap near the origin.

    ``S_reg = (1 - w) (1 + k |x|^2 / (2 r_in)) + w S_phys`` with a smooth
    ramp ``w`` rising from 0 at ``r_in`` to 1 at ``r_out``; ``S_reg >= 1``.
    """

    base: EikonalField
    r_in: float
    r_out: float

    @property
    def k(self) -> float:
        return self.base.k

    def _w(self, r, order=0):
        L = self.r_out - self.r_in
        return _blend((r - self.r_in) / L, order) / L**order

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        r = float(np.linalg.norm(x))
        cap = 1.0 + self.k * r * r / (2.0 * self.r_in)
        if r <= self.r_in:
            return cap
        s = self.base.S_phys(x)
        if r >= self.r_out:
            return s
        w = float(self._w(np.array(r)))
        return (1.0 - w) * cap + w * s

    def value_and_gradient(self, x) -> tuple[float, np.ndarray]:
        x = np.asarray(x, dtype=float)
        r = float(np.linalg.norm(x))
        cap = 1.0 + self.k * r * r / (2.0 * self.r_in)
        dcap = self.k * x / self.r_in
        if r <= self.r_in:
            return cap, dcap
        s, ds = self.base.eval_phys(x)
        if r >= self.r_out:
            return s, ds
        w = float(self._w(np.array(r)))
        dw = float(self._w(np.array(r), 1)) * x / r
        return (1.0 - w) * cap + w * s, (1.0 - w) * dcap + w * ds + (s - cap) * dw

    def __call__(self, x) -> float:
        return self.value(x)


def regularize(field: EikonalField, r_in: float, r_out: float) -> RegularizedField:
    """Blend ``S_phys`` with ``1 + k|x|^2/(2 r_in)`` on ``[r_in, r_out]``."""
    if not field.metric.cutoff_radius < r_in < r_out:
        raise BadRadii(f"need 5/(3 eps) = {field.metric.cutoff_radius:.4g} < r_in < r_out, "
                       f"got r_in={r_in}, r_out={r_out}")
    return RegularizedField(field, float(r_in), float(r_out))


# ---------------------------------------------------------------------------
# radial oracle
# ---------------------------------------------------------------------------

class RadialOracle:
    """Quadrature reference for radial metrics: ``S_geo(r) = int_0^r sqrt(g)``."""

    def __init__(self, metric: ConformalMetric):
        if not metric.model.radial:
            raise ValueError("radial oracle needs a radial model")
        self.metric = metric
        e = np.zeros(metric.dim)
        e[0] = 1.0
        self._e = e
        self._breaks = [metric.flat_radius, metric.cutoff_radius]

    def sqrt_g(self, r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        return np.sqrt(self.metric.factor(r[:, None] * self._e[None, :]))

    def _f(self, t):
        return float(self.sqrt_g(t)[0])

    def S(self, r: float) -> float:
        r = float(r)
        pts = [0.0] + [b for b in self._breaks if b < r] + [r]
        total = 0.0
        for a, b in zip(pts[:-1], pts[1:]):
            if b <= self.metric.flat_radius:
                total += b - a
                continue
            # geometric panels keep the relative accuracy uniform in r
            edges = [a]
            while edges[-1] * 2.0 < b:
                edges.append(edges[-1] * 2.0)
            edges.append(b)
            # the tolerance sits at rounding level, so quad may report roundoff
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", IntegrationWarning)
                for lo, hi in zip(edges[:-1], edges[1:]):
                    total += quad(self._f, lo, hi, epsabs=0.0, epsrel=2e-14, limit=200)[0]
        return total

    def grad_norm(self, r: float) -> float:
        """``|grad S_geo| = sqrt(g(r))``."""
        return float(self.sqrt_g(r)[0])

    def kdot1(self, r: float) -> float:
        """Radial component of ``kappa'(1)``: ``S / sqrt(g(r)) - r``."""
        return self.S(r) / self.grad_norm(r) - r

    def s(self, r: float) -> float:
        return self.S(r) / r - 1.0

    def radius_at_level(self, s_phys: float) -> float:
        """Inverse of ``S_phys(r) = sqrt(2 lam) S_geo(r)``."""
        from scipy.optimize import brentq

        k = math.sqrt(2.0 * self.metric.lam)
        target = s_phys / k
        hi = target * 2.0 + 1.0
        return brentq(lambda r: self.S(r) - target, 0.0, hi, xtol=1e-14, rtol=1e-15)


# ---------------------------------------------------------------------------
# decay profiles
# ---------------------------------------------------------------------------

@dataclass
class ShellProfile:
    """Weighted sup over dyadic shells, with the ratio-stability verdict."""

    shells: np.ndarray
    weight_exponent: float
    values: np.ndarray
    factor: float = 1.25
    label: str = ""

    @property
    def ratios(self) -> np.ndarray:
        v = self.values
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(v[:-1] > 0, v[1:] / v[:-1], 0.0)

    @property
    def passed(self) -> bool:
        v = self.values
        if not np.all(np.isfinite(v)):
            return False
        atol = 1e-12 * max(1.0, float(np.max(np.abs(v)))) if v.size else 0.0
        return bool(np.all(v[1:] <= self.factor * v[:-1] + atol))

    def rows(self):
        return [(float(r), self.weight_exponent, float(v)) for r, v in zip(self.shells, self.values)]


def _shell_points(dim, r, n_radial, n_dirs, offset=0.37):
    radii = r * 2.0 ** ((np.arange(n_radial) + 0.5) / n_radial)
    if dim == 2:
        th = 2.0 * np.pi * (np.arange(n_dirs) + offset) / n_dirs
        dirs = np.stack([np.cos(th), np.sin(th)], -1)
    else:
        dirs = sphere_points(dim, n_dirs)
    return (radii[:, None, None] * dirs[None]).reshape(-1, dim)


def _s_gradient(field: EikonalField, x, nodes):
    """``S`` and ``grad s`` with ``s = S/|x| - 1``."""
    S, g = field.eval_S(x, nodes=nodes)
    r = float(np.linalg.norm(x))
    return S / r - 1.0, g / r - S * x / r**3


def s_jet(field: EikonalField, x, order: int, h_rel: float | None = None):
    """Derivatives of ``s`` at ``x``: list ``[s, grad s, hess s, third]``."""
    x = np.asarray(x, dtype=float)
    d = field.dim
    h = (field.h_rel if h_rel is None else h_rel) * float(np.linalg.norm(x))
    nodes = field.nodes_for(x)
    s0, g0 = _s_gradient(field, x, nodes)
    out = [s0, g0]
    if order <= 1:
        return out
    cache = {}

    def grad_at(offset):
        key = tuple(offset)
        if key not in cache:
            cache[key] = _s_gradient(field, x + h * np.asarray(offset, float), nodes)[1]
        return cache[key]

    eye = np.eye(d, dtype=int)
    H = np.empty((d, d))
    for j in range(d):
        H[:, j] = (grad_at(eye[j]) - grad_at(-eye[j])) / (2.0 * h)
    out.append(0.5 * (H + H.T))
    if order <= 2:
        return out
    T = np.empty((d, d, d))  # T[i, j, k] = d_j d_k (d_i s)
    for j in range(d):
        T[:, j, j] = (grad_at(eye[j]) - 2.0 * g0 + grad_at(-eye[j])) / h**2
        for k in range(j + 1, d):
            val = (grad_at(eye[j] + eye[k]) - grad_at(eye[j] - eye[k])
                   - grad_at(-eye[j] + eye[k]) + grad_at(-eye[j] - eye[k])) / (4.0 * h * h)
            T[:, j, k] = T[:, k, j] = val
    # symmetrize over all index permutations
    T = (T + T.transpose(0, 2, 1) + T.transpose(1, 0, 2) + T.transpose(1, 2, 0)
         + T.transpose(2, 0, 1) + T.transpose(2, 1, 0)) / 6.0
    out.append(T)
    return out


def _alpha_component(jet, alpha):
    alpha = tuple(alpha)
    k = sum(alpha)
    idx = []
    for i, a in enumerate(alpha):
        idx += [i] * a
    t = jet[k]
    return float(t if k == 0 else t[tuple(idx)])


def decay_profile(field: EikonalField, alpha, shells, *, n_radial: int = 4, n_dirs: int = 16,
                  sigma: float | None = None, rho: float | None = None, factor: float = 1.25) -> ShellProfile:
    """Per-shell sup of ``|x|^(m_tilde(|alpha|) + sigma) |d^alpha s|``.

    ``alpha`` is a multi-index or an order (then the sup also runs over all
    multi-indices of that order).
    """
    model = field.metric.model
    sigma = model.sigma if sigma is None else sigma
    rho = model.rho if rho is None else rho
    if isinstance(alpha, (int, np.integer)):
        order = int(alpha)
        alphas = multi_indices(field.dim, order)
    else:
        alphas = [tuple(alpha)]
        order = sum(alphas[0])
    if order > 3:
        raise ValueError("decay profiles are available for |alpha| <= 3")
    w = ExponentSchedule(sigma, rho).m_tilde(order) + sigma
    shells = np.asarray(shells, dtype=float)
    vals = []
    for r in shells:
        best = 0.0
        for x in _shell_points(field.dim, r, n_radial, n_dirs):
            jet = s_jet(field, x, order)
            nx = float(np.linalg.norm(x))
            for a in alphas:
                best = max(best, nx**w * abs(_alpha_component(jet, a)))
        vals.append(best)
    return ShellProfile(shells, w, np.array(vals), factor, label=f"|alpha|={order}")


def decay_profiles(field: EikonalField, orders, shells, *, n_radial: int = 4, n_dirs: int = 16,
                   factor: float = 1.25) -> dict:
    """All s-profiles for several orders from one sweep of solves."""
    model = field.metric.model
    sched = ExponentSchedule(model.sigma, model.rho)
    orders = list(orders)
    top = max(orders)
    shells = np.asarray(shells, dtype=float)
    table = {k: [] for k in orders}
    for r in shells:
        best = {k: 0.0 for k in orders}
        for x in _shell_points(field.dim, r, n_radial, n_dirs):
            jet = s_jet(field, x, top)
            nx = float(np.linalg.norm(x))
            for k in orders:
                w = sched.m_tilde(k) + model.sigma
                best[k] = max(best[k], nx**w * float(np.max(np.abs(jet[k]))))
        for k in orders:
            table[k].append(best[k])
    return {k: ShellProfile(shells, sched.m_tilde(k) + model.sigma, np.array(table[k]), factor, f"|alpha|={k}")
            for k in orders}


def kappa_derivative_profile(field: EikonalField, rays, shells, *, p: float = 2.0, order: int = 1,
                             sigma_prime: float | None = None, factor: float = 1.25) -> ShellProfile:
    """Per-shell sup of ``<x>^(m(|alpha|) - 1 + sigma') ||d^alpha kappa_x||_{H^p}``.

    ``d^alpha kappa`` uses centered differences in ``x`` along coordinate
    directions (step ``1e-3 |x|``) with the node grid frozen at ``x``. The
    sup also runs over all multi-indices of the given order.
    """
    model = field.metric.model
    if order not in (0, 1, 2):
        raise ValueError("kappa derivative profiles are available for order <= 2")
    sp_ = model.sigma / 2.0 if sigma_prime is None else sigma_prime
    sched = ExponentSchedule(model.sigma, model.rho)
    w = sched.m(order) - 1.0 + sp_
    d = field.dim
    rays = np.asarray(rays, dtype=float).reshape(-1, d)
    rays = rays / np.linalg.norm(rays, axis=1, keepdims=True)
    vals = []
    for r in np.asarray(shells, dtype=float):
        best = 0.0
        for u in rays:
            x = r * u
            nodes = field.nodes_for(x)
            h = 1e-3 * r

            def kap(dx):
                return field.solve(x + dx, nodes=nodes).path.values

            if order == 0:
                derivs = [kap(np.zeros(d))]
            elif order == 1:
                derivs = []
                for j in range(d):
                    e = np.zeros(d)
                    e[j] = h
                    derivs.append((kap(e) - kap(-e)) / (2 * h))
            else:
                k0 = kap(np.zeros(d))
                derivs = []
                for i in range(d):
                    for j in range(i, d):
                        ei = np.zeros(d)
                        ej = np.zeros(d)
                        ei[i] = h
                        ej[j] = h
                        if i == j:
                            derivs.append((kap(ei) - 2 * k0 + kap(-ei)) / h**2)
                        else:
                            derivs.append((kap(ei + ej) - kap(ei - ej) - kap(ej - ei) + kap(-ei - ej)) / (4 * h * h))
            jx = math.sqrt(1.0 + r * r)
            for dv in derivs:
                best = max(best, jx**w * sobolev_norm(DiscretePath(nodes, dv), p))
        vals.append(best)
    return ShellProfile(np.asarray(shells, float), w, np.array(vals), factor, label=f"kappa order {order}")
