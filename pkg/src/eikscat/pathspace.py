"""Discrete path space, the energy functional and its derivatives.

Admissible trajectories are ``y(s) = s x + kappa(s)`` with
``kappa(0) = kappa(1) = 0``. ``kappa`` is piecewise linear on a grid
``0 = s_0 < ... < s_N = 1`` and

    E_x(kappa) = int_0^1 ydot . G(y) ydot ds

is integrated with two-point Gauss quadrature per segment (exact for the
velocity, which is constant on each segment).

The Hessian is block tridiagonal in the interleaved interior ordering
``(kappa_1[0..d-1], kappa_2[0..d-1], ...)`` and is stored in LAPACK upper
band form with ``2d - 1`` superdiagonals.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solveh_banded

from .potential import ConformalMetric

__all__ = [
    "uniform_nodes",
    "graded_nodes",
    "DiscretePath",
    "EnergyEvaluation",
    "energy",
    "energy_gradient",
    "evaluate",
    "hessian_apply",
    "banded_to_dense",
    "h1_gram_banded",
    "dual_norm",
    "sobolev_norm",
    "hardy_ratio",
    "segment_energies",
]

_GAUSS_T = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


def uniform_nodes(n: int) -> np.ndarray:
    if n < 2:
        raise ValueError("need at least two segments")
    return np.linspace(0.0, 1.0, n + 1)


def graded_nodes(n: int, length: float, scale: float) -> np.ndarray:
    """Nodes ``s_k = sinh(A k/n) / sinh(A)`` with ``A = asinh(length / scale)``.

    Spatial spacing is about ``scale * A / n`` near the origin and grows
    linearly with the radius beyond ``scale``; for ``length <~ scale`` the
    grid is close to uniform. The map depends smoothly on ``length``.
    """
    if n < 2:
        raise ValueError("need at least two segments")
    t = np.linspace(0.0, 1.0, n + 1)
    a = float(np.arcsinh(max(length, 0.0) / scale))
    if a < 1e-6:
        return t
    s = np.sinh(a * t) / np.sinh(a)
    s[0], s[-1] = 0.0, 1.0
    return s


@dataclass
class DiscretePath:
    """Piecewise-linear ``kappa`` with zero boundary values.

    Attributes
    ----------
    nodes : (N+1,) grid ``s_k``
    values : (N+1, d) nodal values, first and last rows are zero
    """

    nodes: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.values = np.array(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != self.nodes.size:
            raise ValueError("values must have shape (N+1, d)")
        self.values[0] = 0.0
        self.values[-1] = 0.0

    @classmethod
    def zeros(cls, n: int, dim: int, nodes=None) -> "DiscretePath":
        nodes = uniform_nodes(n) if nodes is None else np.asarray(nodes, float)
        return cls(nodes, np.zeros((nodes.size, dim)))

    @classmethod
    def from_interior(cls, nodes, interior) -> "DiscretePath":
        nodes = np.asarray(nodes, float)
        n = nodes.size - 1
        vals = np.zeros((n + 1, np.size(interior) // (n - 1)))
        vals[1:-1] = np.reshape(interior, (n - 1, -1))
        return cls(nodes, vals)

    @property
    def n_segments(self) -> int:
        return self.nodes.size - 1

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def ds(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def interior(self) -> np.ndarray:
        """Flat interleaved interior vector of length ``(N-1) d``."""
        return self.values[1:-1].ravel().copy()

    def with_interior(self, vec) -> "DiscretePath":
        return DiscretePath.from_interior(self.nodes, vec)

    def slopes(self) -> np.ndarray:
        """``kappa'`` on each segment, shape (N, d)."""
        return np.diff(self.values, axis=0) / self.ds[:, None]

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        return np.stack([np.interp(s, self.nodes, self.values[:, i]) for i in range(self.dim)], -1)

    def resample(self, nodes) -> "DiscretePath":
        return DiscretePath(nodes, self(np.asarray(nodes, float)))

    def trajectory(self, x) -> np.ndarray:
        """Nodal points ``y_k = s_k x + kappa_k``."""
        return self.nodes[:, None] * np.asarray(x, float)[None, :] + self.values

    def to_csv(self, path) -> None:
        d = self.dim
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s"] + [f"kappa{i + 1}" for i in range(d)])
            for s, row in zip(self.nodes, self.values):
                w.writerow([repr(float(s))] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "DiscretePath":
        data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1:])


# ---------------------------------------------------------------------------
# energy and derivatives
# ---------------------------------------------------------------------------

def _gauss_geometry(x, path: DiscretePath):
    """Segment velocities (N, d), Gauss points (N, 2, d), weights (N,)."""
    x = np.asarray(x, dtype=float)
    ds = path.ds
    vel = x[None, :] + path.slopes()
    left = path.trajectory(x)[:-1]
    pts = left[:, None, :] + (_GAUSS_T[None, :, None] * ds[:, None, None]) * vel[:, None, :]
    return vel, pts, ds / 2.0


def segment_energies(metric: ConformalMetric, x, path: DiscretePath) -> np.ndarray:
    """Segment-averaged ``ydot . G(y) ydot`` (constant along geodesics)."""
    vel, pts, _ = _gauss_geometry(x, path)
    g = metric.factor(pts)
    return 0.5 * g.sum(axis=1) * np.sum(vel**2, axis=1)


def energy(metric: ConformalMetric, x, path: DiscretePath) -> float:
    vel, pts, w = _gauss_geometry(x, path)
    g = metric.factor(pts)
    return float(np.sum(w[:, None] * g * np.sum(vel**2, axis=1)[:, None]))


@dataclass
class EnergyEvaluation:
    """Energy, nodal gradient (N-1, d) and optional banded Hessian."""

    value: float
    gradient: np.ndarray
    hessian: np.ndarray | None = None

    @property
    def flat_gradient(self) -> np.ndarray:
        return self.gradient.ravel()


def _node_gradient(vel, pts, w, ds, g, dg):
    v2 = np.sum(vel**2, axis=1)
    p = np.sum(2.0 * w[:, None] * g, axis=1)  # d^2 e / d ydot^2 = p I
    # d e / d kappa_right and d e / d kappa_left
    dv = (p / ds)[:, None] * vel
    wy = (w * v2)[:, None, None] * dg
    right = dv + np.einsum("q,kqi->ki", _GAUSS_T, wy)
    left = -dv + np.einsum("q,kqi->ki", 1.0 - _GAUSS_T, wy)
    return right[:-1] + left[1:], p, v2


def evaluate(metric: ConformalMetric, x, path: DiscretePath, hessian: bool = True) -> EnergyEvaluation:
    """Energy, gradient and (optionally) the assembled banded Hessian."""
    vel, pts, w = _gauss_geometry(x, path)
    ds = path.ds
    if hessian:
        g, dg, hg = metric.jet(pts)
    else:
        g, dg, _ = metric.jet(pts)
    grad, p, v2 = _node_gradient(vel, pts, w, ds, g, dg)
    value = float(np.sum(w[:, None] * g * v2[:, None]))
    if not hessian:
        return EnergyEvaluation(value, grad)
    d = path.dim
    eye = np.eye(d)
    jv = np.stack([-1.0 / ds, 1.0 / ds], axis=1)  # (N, 2) left/right
    jy = np.stack([1.0 - _GAUSS_T, _GAUSS_T], axis=0)  # (2 nodes, 2 gauss)
    Bq = 2.0 * w[:, None, None, None] * vel[:, None, :, None] * dg[:, :, None, :]  # (N,q,i,j)
    Cq = (w * v2)[:, None, None, None] * hg
    blocks = np.empty((ds.size, 2, 2, d, d))
    for a in range(2):
        for b in range(2):
            blk = (jv[:, a] * jv[:, b] * p)[:, None, None] * eye
            blk = blk + jv[:, a][:, None, None] * np.einsum("q,kqij->kij", jy[b], Bq)
            blk = blk + jv[:, b][:, None, None] * np.einsum("q,kqji->kij", jy[a], Bq)
            blk = blk + np.einsum("q,kqij->kij", jy[a] * jy[b], Cq)
            blocks[:, a, b] = blk
    diag = blocks[:-1, 1, 1] + blocks[1:, 0, 0]  # interior nodes 1..N-1
    off = blocks[1:-1, 0, 1]  # coupling node j -> j+1
    return EnergyEvaluation(value, grad, _blocks_to_band(diag, off))


def energy_gradient(metric: ConformalMetric, x, path: DiscretePath) -> np.ndarray:
    return evaluate(metric, x, path, hessian=False).gradient


def _blocks_to_band(diag, off):
    """Upper band storage (u+1, n) of a symmetric block-tridiagonal matrix."""
    m, d, _ = diag.shape
    n = m * d
    u = 2 * d - 1
    ab = np.zeros((u + 1, n))
    base = np.arange(m) * d
    for i in range(d):
        for j in range(d):
            if i <= j:
                ab[u + i - j, base + j] = diag[:, i, j]
            if off.shape[0]:
                r2 = base[:-1] + i
                c2 = base[:-1] + d + j
                ab[u + r2 - c2, c2] = off[:, i, j]
    return ab


def banded_to_dense(ab) -> np.ndarray:
    u = ab.shape[0] - 1
    n = ab.shape[1]
    a = np.zeros((n, n))
    for k in range(u + 1):
        off = u - k
        idx = np.arange(off, n)
        a[idx - off, idx] = ab[k, off:]
        a[idx, idx - off] = ab[k, off:]
    return a


def band_matvec(ab, v) -> np.ndarray:
    u = ab.shape[0] - 1
    n = ab.shape[1]
    out = ab[u] * v
    for off in range(1, u + 1):
        row = ab[u - off, off:]
        out[:-off] += row * v[off:]
        out[off:] += row * v[:-off]
    return out


def hessian_apply(metric: ConformalMetric, x, path: DiscretePath, h) -> np.ndarray:
    """Hessian applied to an interior direction (flat or (N-1, d))."""
    ev = evaluate(metric, x, path, hessian=True)
    return band_matvec(ev.hessian, np.ravel(h)).reshape(-1, path.dim)


def h1_gram_banded(nodes, dim: int) -> np.ndarray:
    """Band form of the H^1_0 Gram matrix ``sum |h_k - h_{k-1}|^2 / ds_k``."""
    ds = np.diff(np.asarray(nodes, float))
    inv = 1.0 / ds
    diag = (inv[:-1] + inv[1:])[:, None, None] * np.eye(dim)
    off = (-inv[1:-1])[:, None, None] * np.eye(dim)
    return _blocks_to_band(diag, off)


def dual_norm(nodes, grad) -> float:
    """``|| grad ||_{H^-1}`` of a nodal co-vector (N-1, d)."""
    grad = np.asarray(grad, float)
    ds = np.diff(np.asarray(nodes, float))
    inv = 1.0 / ds
    ab = np.zeros((2, grad.shape[0]))
    ab[1] = inv[:-1] + inv[1:]
    ab[0, 1:] = -inv[1:-1]
    sol = solveh_banded(ab, grad)
    return float(np.sqrt(max(np.sum(grad * sol), 0.0)))


def sobolev_norm(path: DiscretePath, p: float = 2.0) -> float:
    """``|| kappa' ||_{L^p}``, the homogeneous W^{1,p}_0 norm."""
    sl = np.linalg.norm(path.slopes(), axis=1)
    if np.isinf(p):
        return float(sl.max())
    return float(np.sum(sl**p * path.ds) ** (1.0 / p))


def hardy_ratio(path: DiscretePath, p: float = 2.0, n_quad: int = 8) -> tuple[float, float]:
    """``(|| kappa / s ||_p, p/(p-1) || kappa' ||_p)``; Hardy says lhs <= rhs."""
    if p <= 1:
        raise ValueError("Hardy inequality needs p > 1")
    t, w = np.polynomial.legendre.leggauss(n_quad)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    s0, s1 = path.nodes[:-1], path.nodes[1:]
    ss = s0[:, None] + (s1 - s0)[:, None] * t[None, :]
    vals = path(ss.ravel()).reshape(ss.shape + (path.dim,))
    q = np.linalg.norm(vals, axis=-1) / ss
    lhs = float(np.sum((s1 - s0)[:, None] * w[None, :] * q**p) ** (1.0 / p))
    return lhs, p / (p - 1.0) * sobolev_norm(path, p)
