"""Potential models, the smooth cutoff and the conformal metric.

A :class:`PotentialModel` wraps a scalar field ``V`` on ``R^d`` together with
its decay exponents ``(sigma, rho)``::

    |d^g V(x)| <= C |x|^(-|g| - sigma)                    for |g| <= 2
    |d^g V(x)| <= C |x|^(-2 - sigma - rho (|g| - 2))      for |g| in {3, 4}

Shipped models carry exact symbolic derivatives (sympy, lambdified to numpy).
User callables fall back to central finite differences.

The metric used by the geodesic construction is ``G(x) = g(x) I`` with
``g = 1 - chi_plus(eps |x|) V(x) / lam``; ``f^2 = 2 lam g`` is the physical
refraction index of the eikonal equation ``|grad S|^2 = 2 (lam - chi V)``.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import sympy as sp
from scipy.special import expit

from .errors import (
    EllipticityViolation,
    EmptySample,
    ExponentOutOfRange,
    UnsupportedOrder,
)
from .sphere import sphere_points

__all__ = [
    "chi_plus",
    "ramp",
    "SymbolicField",
    "FiniteDifferenceField",
    "SplineField",
    "PotentialModel",
    "ConformalMetric",
    "DecayReport",
    "zero_potential",
    "radial_power",
    "oscillatory_power",
    "anisotropic_model",
    "from_callable",
    "tabulated",
    "three_body_cutoff_potential",
    "three_body_exponents",
    "make_conformal_metric",
    "metric_order_norm",
    "verify_decay_hypotheses",
    "model_from_spec",
    "load_model",
    "multi_indices",
]

MAX_ORDER = 4
# Below/above these ramp arguments h and all its derivatives are 0/1 to ~1e-80.
_RAMP_EDGE = 5e-3


# ---------------------------------------------------------------------------
# smooth ramp h(u) = theta(u) / (theta(u) + theta(1-u)), theta(u) = exp(-1/u)
# ---------------------------------------------------------------------------

def _ramp_derivative_polys(max_order: int):
    """Derivatives of h as polynomials in (h, u).

    Uses h = expit(-E(u)), E = 1/u - 1/(1-u), so that h' = -h (1-h) E'.
    Writing everything in terms of h keeps the evaluation overflow-free.
    """
    H, u = sp.symbols("H u")
    E = 1 / u - 1 / (1 - u)
    dE = sp.diff(E, u)
    out = [H]
    cur = H
    for _ in range(max_order):
        cur = sp.diff(cur, u) + sp.diff(cur, H) * (-H * (1 - H) * dE)
        cur = sp.simplify(cur)
        out.append(cur)
    return [sp.lambdify((H, u), p, "numpy") for p in out]


_RAMP_POLYS = _ramp_derivative_polys(6)


def ramp(n: int, u):
    """n-th derivative of the C^infinity ramp h (0 for u <= 0, 1 for u >= 1)."""
    n = int(n)
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    if n == 0:
        out[u >= 1.0 - _RAMP_EDGE] = 1.0
    inner = (u > _RAMP_EDGE) & (u < 1.0 - _RAMP_EDGE)
    if np.any(inner):
        ui = u[inner]
        h = expit(-(1.0 / ui - 1.0 / (1.0 - ui)))
        out[inner] = _RAMP_POLYS[n](h, ui)
    return out


def chi_plus(t, order: int = 0):
    """Cutoff chi_+(t): 0 for t <= 4/3, 1 for t >= 5/3, nondecreasing."""
    return 3.0**order * ramp(order, 3.0 * np.asarray(t, dtype=float) - 4.0)


class _ramp(sp.Function):
    """Symbolic stand-in for ``ramp(n, u)``; printed to the numeric version."""

    nargs = 2

    def fdiff(self, argindex=2):
        if argindex != 2:
            raise sp.ArgumentIndexError(self, argindex)
        n, u = self.args
        return _ramp(n + 1, u)


def _sym_chi(t):
    return _ramp(0, 3 * t - 4)


_LAMBDIFY_MODULES = [{"_ramp": ramp}, "numpy"]
# Regularizes |x| at the origin; every shipped use multiplies by a factor
# vanishing there, so the shift is invisible at double precision.
_TINY = sp.Float(1e-300)


# ---------------------------------------------------------------------------
# scalar fields with derivatives
# ---------------------------------------------------------------------------

def multi_indices(d: int, order: int):
    """All multi-indices ``gamma`` in N_0^d with ``|gamma| == order``."""
    out = []
    for combo in itertools.combinations_with_replacement(range(d), order):
        g = [0] * d
        for i in combo:
            g[i] += 1
        out.append(tuple(g))
    return out


def _as_points(x, d):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != d:
        raise ValueError(f"expected trailing dimension {d}, got shape {x.shape}")
    return x


class SymbolicField:
    """Scalar field given by a sympy expression in ``x1..xd``."""

    def __init__(self, expr, symbols):
        self.expr = expr
        self.symbols = tuple(symbols)
        self.dim = len(self.symbols)
        self._cache = {}
        self._jet = None

    def _fn(self, gamma):
        gamma = tuple(int(g) for g in gamma)
        fn = self._cache.get(gamma)
        if fn is None:
            e = self.expr
            for sym, k in zip(self.symbols, gamma):
                if k:
                    e = sp.diff(e, sym, k)
            fn = sp.lambdify(self.symbols, e, modules=_LAMBDIFY_MODULES, cse=True)
            self._cache[gamma] = fn
        return fn

    def derivative(self, x, gamma):
        x = _as_points(x, self.dim)
        with np.errstate(all="ignore"):
            val = self._fn(gamma)(*np.moveaxis(x, -1, 0))
        return np.broadcast_to(np.asarray(val, dtype=float), x.shape[:-1]).copy()

    def __call__(self, x):
        return self.derivative(x, (0,) * self.dim)

    def jet(self, x):
        """Value, gradient and Hessian at points ``x`` of shape (..., d)."""
        x = _as_points(x, self.dim)
        d = self.dim
        if self._jet is None:
            syms = self.symbols
            grads = [sp.diff(self.expr, s) for s in syms]
            hess = [sp.diff(grads[i], syms[j]) for i in range(d) for j in range(i, d)]
            self._jet = sp.lambdify(
                syms, [self.expr] + grads + hess, modules=_LAMBDIFY_MODULES, cse=True
            )
        shape = x.shape[:-1]
        with np.errstate(all="ignore"):
            vals = self._jet(*np.moveaxis(x, -1, 0))
        vals = [np.broadcast_to(np.asarray(v, dtype=float), shape) for v in vals]
        v = np.array(vals[0])
        g = np.stack(vals[1 : 1 + d], axis=-1)
        h = np.empty(shape + (d, d))
        k = 1 + d
        for i in range(d):
            for j in range(i, d):
                h[..., i, j] = vals[k]
                h[..., j, i] = vals[k]
                k += 1
        return v, g, h


# central-difference stencils (offsets, weights) for d^k/dt^k, O(h^2)
_STENCILS = {
    0: ((0,), (1.0,)),
    1: ((-1, 1), (-0.5, 0.5)),
    2: ((-1, 0, 1), (1.0, -2.0, 1.0)),
    3: ((-2, -1, 1, 2), (-0.5, 1.0, -1.0, 0.5)),
    4: ((-2, -1, 0, 1, 2), (1.0, -4.0, 6.0, -4.0, 1.0)),
}


class FiniteDifferenceField:
    """Scalar field from a vectorized callable; derivatives by central FD.

    Step ``h = max(1e-4, 1e-3 |x|)``; orders 3 and 4 get one Richardson level.
    """

    def __init__(self, func: Callable, dim: int):
        self.func = func
        self.dim = dim

    def __call__(self, x):
        x = _as_points(x, self.dim)
        return np.asarray(self.func(x), dtype=float)

    def _fd(self, x, gamma, h):
        d = self.dim
        axes = [(i, k) for i, k in enumerate(gamma) if k]
        total = np.zeros(x.shape[:-1])
        choices = [list(zip(*_STENCILS[k])) for _, k in axes]
        for combo in itertools.product(*choices):
            shift = np.zeros(x.shape)
            w = 1.0
            for (i, k), (off, wt) in zip(axes, combo):
                shift[..., i] = off * h
                w *= wt
            total = total + w * self(x + shift)
        order = sum(gamma)
        return total / h**order

    def derivative(self, x, gamma):
        x = _as_points(x, self.dim)
        gamma = tuple(int(g) for g in gamma)
        if sum(gamma) == 0:
            return self(x)
        h = np.maximum(1e-4, 1e-3 * np.linalg.norm(x, axis=-1))
        if sum(gamma) <= 2:
            return self._fd(x, gamma, h)
        coarse = self._fd(x, gamma, h)
        fine = self._fd(x, gamma, h / 2)
        return (4.0 * fine - coarse) / 3.0

    def jet(self, x):
        x = _as_points(x, self.dim)
        d = self.dim
        v = self(x)
        g = np.stack([self.derivative(x, tuple(int(i == j) for j in range(d))) for i in range(d)], -1)
        h = np.empty(x.shape[:-1] + (d, d))
        for i in range(d):
            for j in range(i, d):
                gam = [0] * d
                gam[i] += 1
                gam[j] += 1
                h[..., i, j] = h[..., j, i] = self.derivative(x, gam)
        return v, g, h


class SplineField:
    """Two-dimensional tabulated field, quintic tensor spline."""

    def __init__(self, x1, x2, values):
        from scipy.interpolate import RectBivariateSpline

        self.dim = 2
        self._spl = RectBivariateSpline(x1, x2, values, kx=5, ky=5, s=0)
        self.bounds = (float(x1[0]), float(x1[-1]), float(x2[0]), float(x2[-1]))

    def derivative(self, x, gamma):
        x = _as_points(x, 2)
        g1, g2 = (int(g) for g in gamma)
        if g1 > 4 or g2 > 4:
            raise UnsupportedOrder("spline derivatives beyond order 4 per axis")
        flat = x.reshape(-1, 2)
        out = self._spl.ev(flat[:, 0], flat[:, 1], dx=g1, dy=g2)
        return out.reshape(x.shape[:-1])

    def __call__(self, x):
        return self.derivative(x, (0, 0))

    def jet(self, x):
        v = self(x)
        g = np.stack([self.derivative(x, (1, 0)), self.derivative(x, (0, 1))], -1)
        h = np.empty(np.shape(v) + (2, 2))
        h[..., 0, 0] = self.derivative(x, (2, 0))
        h[..., 1, 1] = self.derivative(x, (0, 2))
        h[..., 0, 1] = h[..., 1, 0] = self.derivative(x, (1, 1))
        return v, g, h


class _ZeroField:
    def __init__(self, dim):
        self.dim = dim

    def derivative(self, x, gamma):
        return np.zeros(np.shape(x)[:-1])

    def __call__(self, x):
        return np.zeros(np.shape(x)[:-1])

    def jet(self, x):
        s = np.shape(x)[:-1]
        d = self.dim
        return np.zeros(s), np.zeros(s + (d,)), np.zeros(s + (d, d))


# ---------------------------------------------------------------------------
# potential models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PotentialModel:
    """Potential ``V`` with derivatives to order 4 and decay exponents.

    Attributes
    ----------
    field : scalar field object (``derivative``, ``jet``, ``__call__``)
    dim : int
    sigma, rho : float
        Decay exponents, ``0 < sigma < 1``, ``0 < rho <= 1``.
    r0 : float
        Radius beyond which the decay constants are calibrated.
    name : str
    spec : dict
        JSON-compatible description (used for manifests and reloading).
    radial : bool
        True when ``V`` depends on ``|x|`` only (enables radial oracles).
    """

    field: object
    dim: int
    sigma: float
    rho: float = 1.0
    r0: float = 1.0
    name: str = "model"
    spec: dict = field(default_factory=dict, compare=False)
    radial: bool = False

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be positive")
        if not 0.0 < self.sigma < 1.0 + 1e-12:
            raise ExponentOutOfRange(f"sigma={self.sigma} outside (0, 1)")
        if not 0.0 < self.rho <= 1.0:
            raise ExponentOutOfRange(f"rho={self.rho} outside (0, 1]")

    @property
    def is_zero(self) -> bool:
        return isinstance(self.field, _ZeroField)

    def __call__(self, x):
        return self.field(x)

    def derivative(self, x, gamma):
        if sum(gamma) > MAX_ORDER:
            raise UnsupportedOrder(f"order {sum(gamma)} > {MAX_ORDER}")
        return self.field.derivative(x, gamma)

    def jet(self, x):
        return self.field.jet(x)

    def decay_exponent(self, order: int) -> float:
        """Exponent ``e`` in ``|d^g V| = O(|x|^-e)`` for ``|g| = order``."""
        if order <= 2:
            return order + self.sigma
        return 2.0 + self.sigma + self.rho * (order - 2)


def _symbols(d):
    return sp.symbols(f"x1:{d + 1}", real=True)


def _japanese(syms):
    return sp.sqrt(1 + sum(s**2 for s in syms))


def zero_potential(dim: int = 2, sigma: float = 0.5, rho: float = 1.0) -> PotentialModel:
    return PotentialModel(
        _ZeroField(dim), dim, sigma, rho, 1.0, "zero",
        {"kind": "zero", "dim": dim, "sigma": sigma, "rho": rho}, radial=True,
    )


def radial_power(dim: int = 2, amplitude: float = 0.1, sigma: float = 0.6, r0: float = 1.0) -> PotentialModel:
    """``V(x) = amplitude * <x>^(-sigma)``; exact exponent pair (sigma, 1)."""
    x = _symbols(dim)
    expr = sp.Float(amplitude) * _japanese(x) ** (-sp.Float(sigma))
    spec = {"kind": "radial_power", "dim": dim, "amplitude": amplitude, "sigma": sigma, "rho": 1.0, "r0": r0}
    return PotentialModel(SymbolicField(expr, x), dim, sigma, 1.0, r0, "radial_power", spec, radial=True)


def _oscillation(x, amplitude, sigma, rho, frequency, anisotropy=0.0):
    jx = _japanese(x)
    if rho >= 1.0 or amplitude == 0.0:
        return sp.Integer(0)
    p = 1 - sp.Float(rho)
    amp = sp.Float(amplitude) * jx ** (-sp.Float(sigma) - 2 * p)
    ang = 1 + sp.Float(anisotropy) * x[-1] / jx if anisotropy else 1
    return amp * sp.cos(sp.Float(frequency) * jx**p) * ang


def oscillatory_power(
    dim: int = 2,
    amplitude: float = 0.08,
    sigma: float = 0.6,
    rho: float = 0.7,
    osc_amplitude: float = 0.04,
    frequency: float = 2.0,
    r0: float = 1.0,
) -> PotentialModel:
    """Radial model whose third/fourth derivatives decay only at rate rho.

    ``V = a <x>^-sigma + b <x>^(-sigma - 2(1-rho)) cos(k <x>^(1-rho))``.
    Each derivative of the oscillating factor gains only ``<x>^-rho``, which
    makes the order-2, 3 and 4 bounds of the (sigma, rho) class sharp.
    """
    x = _symbols(dim)
    expr = sp.Float(amplitude) * _japanese(x) ** (-sp.Float(sigma)) + _oscillation(
        x, osc_amplitude, sigma, rho, frequency
    )
    spec = {
        "kind": "oscillatory", "dim": dim, "amplitude": amplitude, "sigma": sigma, "rho": rho,
        "osc_amplitude": osc_amplitude, "frequency": frequency, "r0": r0,
    }
    return PotentialModel(SymbolicField(expr, x), dim, sigma, rho, r0, "oscillatory", spec, radial=True)


def anisotropic_model(
    dim: int = 2,
    amplitude: float = 0.08,
    sigma: float = 0.6,
    rho: float = 0.7,
    anisotropy: float = 0.5,
    osc_amplitude: float = 0.03,
    frequency: float = 2.0,
    r0: float = 1.0,
) -> PotentialModel:
    """Generic non-radial model in the (sigma, rho) class.

    ``V = a <x>^-sigma (1 + c x1/<x> + c x1 x2/<x>^2) + oscillating term``.
    The angular factors are symbols of order zero, so the decay exponents are
    those of the radial envelope.
    """
    x = _symbols(dim)
    jx = _japanese(x)
    c = sp.Float(anisotropy)
    ang = 1 + c * x[0] / jx
    if dim >= 2:
        ang = ang + c * x[0] * x[1] / jx**2
    expr = sp.Float(amplitude) * jx ** (-sp.Float(sigma)) * ang + _oscillation(
        x, osc_amplitude, sigma, rho, frequency, anisotropy=anisotropy
    )
    spec = {
        "kind": "anisotropic", "dim": dim, "amplitude": amplitude, "sigma": sigma, "rho": rho,
        "anisotropy": anisotropy, "osc_amplitude": osc_amplitude, "frequency": frequency, "r0": r0,
    }
    return PotentialModel(SymbolicField(expr, x), dim, sigma, rho, r0, "anisotropic", spec)


def from_callable(func: Callable, dim: int, sigma: float, rho: float = 1.0, r0: float = 1.0,
                  name: str = "callable", radial: bool = False) -> PotentialModel:
    """Model from a vectorized callable ``func(x[..., d]) -> V``; FD derivatives."""
    return PotentialModel(FiniteDifferenceField(func, dim), dim, sigma, rho, r0, name,
                          {"kind": "callable", "dim": dim}, radial=radial)


def tabulated(path, sigma: float, rho: float = 1.0, r0: float = 1.0) -> PotentialModel:
    """Load a 2-D tabulated potential from CSV rows ``x1,x2,V`` on a tensor grid."""
    rows = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if rows.shape[1] != 3:
        raise ValueError("tabulated potentials are supported in d=2 only (columns x1,x2,V)")
    x1 = np.unique(rows[:, 0])
    x2 = np.unique(rows[:, 1])
    if x1.size * x2.size != rows.shape[0]:
        raise ValueError("tabulated grid is not a full tensor grid")
    order = np.lexsort((rows[:, 1], rows[:, 0]))
    vals = rows[order, 2].reshape(x1.size, x2.size)
    spec = {"kind": "tabulated", "dim": 2, "grid": str(path), "sigma": sigma, "rho": rho, "r0": r0}
    return PotentialModel(SplineField(x1, x2, vals), 2, sigma, rho, r0, "tabulated", spec)


def three_body_exponents(mu: float) -> tuple[float, float]:
    """Largest (sigma, rho) compatible with ``d^g V = O(r^(-mu(|g| + mu)))``.

    The binding constraint for ``|g| <= 2`` is ``|g| = 2``:
    ``sigma = 2 mu + mu^2 - 2``, positive exactly when ``mu > sqrt(3) - 1``;
    orders 3 and 4 then allow ``rho = mu``.
    """
    if not math.sqrt(3.0) - 1.0 < mu < 1.0:
        raise ExponentOutOfRange(f"mu={mu} outside (sqrt(3)-1, 1)")
    sigma = min(mu * mu, mu + mu * mu - 1.0, 2.0 * mu + mu * mu - 2.0)
    sigma = min(max(sigma, 1e-12), 1.0 - 1e-12)
    rho = min(1.0, 3.0 * mu + mu * mu - 2.0 - sigma, 0.5 * (4.0 * mu + mu * mu - 2.0 - sigma))
    rho = min(max(rho, 1e-12), 1.0)
    return sigma, rho


def three_body_cutoff_potential(pair_dim: int = 1, dim: int = 3, mu: float = 0.8,
                                amplitude: float = 1.0, zero: bool = False) -> PotentialModel:
    """Cut-off pair potential ``V(x^a) chi_+(r^-mu |x^a|)`` on ``R^dim``.

    The pair potential is ``amplitude * <x^a>^-mu`` on the first ``pair_dim``
    coordinates (``x^a``); ``r = |x|``.
    """
    sigma, rho = three_body_exponents(mu)
    if zero or amplitude == 0.0:
        m = zero_potential(dim, sigma, rho)
        return PotentialModel(m.field, dim, sigma, rho, 1.0, "three_body",
                              {"kind": "three_body", "dim": dim, "pair_dim": pair_dim, "mu": mu,
                               "amplitude": 0.0}, radial=True)
    if not 1 <= pair_dim < dim:
        raise ValueError("pair subspace dimension must lie in [1, dim)")
    x = _symbols(dim)
    xa = x[:pair_dim]
    abs_xa = sp.sqrt(sum(s**2 for s in xa) + _TINY)
    r = sp.sqrt(sum(s**2 for s in x) + _TINY)
    pair = sp.Float(amplitude) * _japanese(xa) ** (-sp.Float(mu))
    expr = pair * _sym_chi(r ** (-sp.Float(mu)) * abs_xa)
    spec = {"kind": "three_body", "dim": dim, "pair_dim": pair_dim, "mu": mu, "amplitude": amplitude,
            "sigma": sigma, "rho": rho, "r0": 16.0}
    return PotentialModel(SymbolicField(expr, x), dim, sigma, rho, 16.0, "three_body", spec)


# ---------------------------------------------------------------------------
# conformal metric
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _cutoff_field(dim: int, eps: float) -> SymbolicField:
    x = _symbols(dim)
    r = sp.sqrt(sum(s**2 for s in x) + _TINY)
    return SymbolicField(_sym_chi(sp.Float(eps) * r), x)


@dataclass(frozen=True)
class ConformalMetric:
    """``G(x) = g(x) I`` with ``g = 1 - chi_plus(eps|x|) V(x) / lam``.

    ``a`` and ``b`` are sampled ellipticity constants (``a <= g <= b``).
    """

    model: PotentialModel
    lam: float
    eps: float
    a: float = 1.0
    b: float = 1.0

    @property
    def dim(self) -> int:
        return self.model.dim

    @property
    def flat_radius(self) -> float:
        """``g == 1`` for ``|x| <= 4 / (3 eps)``."""
        return 4.0 / (3.0 * self.eps)

    @property
    def cutoff_radius(self) -> float:
        """``chi_plus == 1`` for ``|x| >= 5 / (3 eps)``."""
        return 5.0 / (3.0 * self.eps)

    def cutoff(self, x):
        return chi_plus(self.eps * np.linalg.norm(np.asarray(x, float), axis=-1))

    def factor(self, x):
        """Conformal factor ``g(x)``."""
        x = np.asarray(x, dtype=float)
        if self.model.is_zero:
            return np.ones(x.shape[:-1])
        return 1.0 - self.cutoff(x) * self.model(x) / self.lam

    def f_squared(self, x):
        """``f^2 = 2 (lam - chi V) = 2 lam g``."""
        return 2.0 * self.lam * self.factor(x)

    def jet(self, x):
        """``g, grad g, hess g`` at points ``x`` of shape (..., d)."""
        x = np.asarray(x, dtype=float)
        d = self.dim
        shape = x.shape[:-1]
        if self.model.is_zero:
            return np.ones(shape), np.zeros(shape + (d,)), np.zeros(shape + (d, d))
        c, dc, hc = _cutoff_field(d, float(self.eps)).jet(x)
        v, dv, hv = self.model.jet(x)
        w = c * v
        dw = c[..., None] * dv + v[..., None] * dc
        hw = (c[..., None, None] * hv + v[..., None, None] * hc
              + dc[..., :, None] * dv[..., None, :] + dv[..., :, None] * dc[..., None, :])
        return 1.0 - w / self.lam, -dw / self.lam, -hw / self.lam

    def derivative(self, x, gamma):
        """``d^gamma g`` for ``|gamma| <= 4`` by the Leibniz rule."""
        gamma = tuple(int(k) for k in gamma)
        if sum(gamma) > MAX_ORDER:
            raise UnsupportedOrder(f"order {sum(gamma)} > {MAX_ORDER}")
        x = np.asarray(x, dtype=float)
        if self.model.is_zero:
            return np.ones(x.shape[:-1]) if sum(gamma) == 0 else np.zeros(x.shape[:-1])
        cut = _cutoff_field(self.dim, float(self.eps))
        total = np.zeros(x.shape[:-1])
        for beta in itertools.product(*(range(k + 1) for k in gamma)):
            coef = math.prod(math.comb(k, b) for k, b in zip(gamma, beta))
            rest = tuple(k - b for k, b in zip(gamma, beta))
            total = total + coef * cut.derivative(x, beta) * self.model.derivative(x, rest)
        out = -total / self.lam
        if sum(gamma) == 0:
            out = out + 1.0
        return out


def _radial_sample(dim: int, radii, n_dirs: int):
    dirs = sphere_points(dim, n_dirs)
    radii = np.asarray(radii, dtype=float)
    return (radii[:, None, None] * dirs[None, :, :]).reshape(-1, dim)


def make_conformal_metric(model: PotentialModel, lam: float, eps: float, *,
                          r_max: float | None = None, n_radii: int = 400,
                          n_dirs: int | None = None) -> ConformalMetric:
    """Build ``G_{lam,eps}`` and certify ``sup |chi V / lam| <= 1/2``.

    Sampling is dense in radius (geometric from the flat radius to ``r_max``)
    and quasi-uniform in direction.
    """
    if lam <= 0:
        raise ValueError("energy must be positive")
    if eps <= 0:
        raise ValueError("cutoff scale must be positive")
    if model.is_zero:
        return ConformalMetric(model, float(lam), float(eps), 1.0, 1.0)
    r_in = 4.0 / (3.0 * eps)
    r_max = r_max or max(1e4, 1e3 * r_in)
    radii = np.geomspace(r_in, r_max, n_radii)
    if n_dirs is None:
        n_dirs = 1 if model.radial else (128 if model.dim == 2 else 400)
    pts = _radial_sample(model.dim, radii, n_dirs)
    w = chi_plus(eps * np.linalg.norm(pts, axis=-1)) * model(pts) / lam
    sup = float(np.max(np.abs(w)))
    if sup > 0.5:
        raise EllipticityViolation(
            f"sup |chi V / lam| = {sup:.3g} > 1/2 at lam={lam}, eps={eps}; shrink eps or raise lam"
        )
    g = 1.0 - w
    return ConformalMetric(model, float(lam), float(eps), float(min(1.0, g.min())), float(max(1.0, g.max())))


def metric_order_norm(metric: ConformalMetric, l: int, points) -> tuple[float, float]:
    """Sampled ``||G||_l`` and ``||G - I||_l``.

    ``sup <x>^|alpha| |d^alpha g|`` over ``|alpha| <= l`` and the sample set.
    """
    if l > MAX_ORDER or l < 0:
        raise UnsupportedOrder(f"order {l} not in 0..{MAX_ORDER}")
    pts = np.asarray(points, dtype=float).reshape(-1, metric.dim)
    if pts.shape[0] == 0:
        raise EmptySample("metric norm over an empty sample set")
    jx = np.sqrt(1.0 + np.sum(pts**2, axis=-1))
    full = 0.0
    pert = 0.0
    for k in range(l + 1):
        for gamma in multi_indices(metric.dim, k):
            val = metric.derivative(pts, gamma)
            full = max(full, float(np.max(jx**k * np.abs(val))))
            if k == 0:
                val = val - 1.0
            pert = max(pert, float(np.max(jx**k * np.abs(val))))
    return full, pert


# ---------------------------------------------------------------------------
# decay hypotheses
# ---------------------------------------------------------------------------

@dataclass
class DecayReport:
    """Per-order weighted sup of ``|d^gamma V|`` over dyadic shells."""

    shells: np.ndarray
    exponents: dict
    rows: dict
    row_passed: dict
    constants: dict
    refined_constants: dict
    factor: float = 1.25

    @property
    def passed(self) -> bool:
        return all(self.row_passed.values())

    @property
    def constants_stable(self) -> bool:
        out = True
        for k, c in self.constants.items():
            cr = self.refined_constants[k]
            if max(c, cr) == 0.0:
                continue
            out &= max(c, cr) / max(min(c, cr), 1e-300) <= 1.1
        return out

    def failed_orders(self):
        return [k for k, ok in self.row_passed.items() if not ok]


def _shell_points(dim, r_lo, n_radial, n_dirs):
    radii = r_lo * 2.0 ** (np.arange(n_radial) / n_radial)
    return _radial_sample(dim, radii, n_dirs)


def _shell_sups(model, shells, n_radial, n_dirs, max_order):
    rows = {k: [] for k in range(max_order + 1)}
    for r in shells:
        pts = _shell_points(model.dim, r, n_radial, n_dirs)
        nx = np.linalg.norm(pts, axis=-1)
        for k in range(max_order + 1):
            e = model.decay_exponent(k)
            best = 0.0
            for gamma in multi_indices(model.dim, k):
                val = np.abs(model.derivative(pts, gamma))
                best = max(best, float(np.max(nx**e * val)))
            rows[k].append(best)
    return {k: np.array(v) for k, v in rows.items()}


def verify_decay_hypotheses(model: PotentialModel, shells: Sequence[float] | None = None, *,
                            n_radial: int = 8, n_dirs: int | None = None,
                            factor: float = 1.25, max_order: int = MAX_ORDER) -> DecayReport:
    """Check the (sigma, rho) decay class on dyadic shells ``[r, 2r)``.

    A row passes when its weighted sup never exceeds ``factor`` times the
    value on the first shell (a bounded sequence is the finite-sample
    surrogate for the O-bound).
    """
    if shells is None:
        r_lo = max(model.r0, 8.0)
        shells = r_lo * 2.0 ** np.arange(8)
    shells = np.asarray(shells, dtype=float)
    if n_dirs is None:
        n_dirs = 1 if model.radial else (256 if model.dim == 2 else 1200)
    rows = _shell_sups(model, shells, n_radial, n_dirs, max_order)
    refined = _shell_sups(model, shells, 2 * n_radial, 2 * n_dirs if n_dirs > 1 else 1, max_order)
    passed = {}
    for k, seq in rows.items():
        first = seq[0]
        if first == 0.0:
            passed[k] = bool(np.all(seq <= 1e-14))
        else:
            passed[k] = bool(np.all(seq <= factor * first))
    consts = {k: float(v.max()) for k, v in rows.items()}
    rconsts = {k: float(v.max()) for k, v in refined.items()}
    exps = {k: model.decay_exponent(k) for k in rows}
    return DecayReport(shells, exps, rows, passed, consts, rconsts, factor)


# ---------------------------------------------------------------------------
# JSON specs
# ---------------------------------------------------------------------------

def model_from_spec(spec: dict, base_dir: str | Path | None = None) -> PotentialModel:
    """Build a model from a JSON-style dict (``kind`` plus parameters)."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    dim = int(spec.pop("dim", 2))
    if kind == "zero":
        return zero_potential(dim, spec.get("sigma", 0.5), spec.get("rho", 1.0))
    if kind == "radial_power":
        return radial_power(dim, spec.get("amplitude", 0.1), spec.get("sigma", 0.6), spec.get("r0", 1.0))
    if kind == "oscillatory":
        keys = ("amplitude", "sigma", "rho", "osc_amplitude", "frequency", "r0")
        return oscillatory_power(dim, **{k: spec[k] for k in keys if k in spec})
    if kind == "anisotropic":
        keys = ("amplitude", "sigma", "rho", "anisotropy", "osc_amplitude", "frequency", "r0")
        return anisotropic_model(dim, **{k: spec[k] for k in keys if k in spec})
    if kind == "three_body":
        return three_body_cutoff_potential(int(spec.get("pair_dim", 1)), dim, float(spec.get("mu", 0.8)),
                                           float(spec.get("amplitude", 1.0)))
    if kind == "tabulated":
        path = Path(spec["grid"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return tabulated(path, spec["sigma"], spec.get("rho", 1.0), spec.get("r0", 1.0))
    raise ValueError(f"unknown potential kind {kind!r}")


def load_model(path) -> PotentialModel:
    path = Path(path)
    return model_from_spec(json.loads(path.read_text()), base_dir=path.parent)


def write_tabulated(path, model: PotentialModel, x1, x2) -> None:
    """Write ``model`` sampled on the tensor grid ``x1 x x2`` as CSV."""
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    pts = np.stack([X1, X2], -1)
    vals = model(pts)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        fh.write("# x1,x2,V\n")
        for a, b, v in zip(X1.ravel(), X2.ravel(), vals.ravel()):
            w.writerow([repr(float(a)), repr(float(b)), repr(float(v))])
