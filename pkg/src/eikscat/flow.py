"""Eikonal flow, induced surface measure and the asymptotic direction map.

The flow ``dPhi/ds = f^-2 grad S(Phi)`` (physical normalization,
``f^2 = 2 lam g``) is integrated in characteristic form: along a flow line
``p = grad S(Phi)`` obeys ``dp/ds = grad(f^2) / (2 f^2)``, so trajectories
need only metric jets. The linearized system carries the Jacobi fields
``dPhi/domega`` and ``dp/domega``, which yield ``hess S = dP dX^-1`` and
therefore ``Delta S`` and the density ``m_lam`` along each line. The
variational field ``S_phys`` is used as an independent arc-length monitor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .eikonal import EikonalField
from .errors import ContractionFailure, FlowDivergence, TailNotConverged
from .sphere import sphere_area, sphere_points

__all__ = [
    "FlowTrajectory",
    "FlowBundle",
    "tangent_basis",
    "integrate_flow",
    "integrate_flows",
    "surface_density",
    "radial_density_oracle",
    "GaussianTest",
    "coarea_check",
    "gauss_check",
    "TailFit",
    "asymptotic_direction",
    "free_tail_fit",
    "tail_exponent",
    "SphereMap",
    "build_sphere_map",
    "phase_comparison",
    "gft_constant",
]


def gft_constant(lam: float) -> float:
    """``C(lam) = sqrt(sqrt(2 lam) / (2 pi))``."""
    return math.sqrt(math.sqrt(2.0 * lam) / (2.0 * math.pi))


def tangent_basis(omega) -> np.ndarray:
    """Orthonormal basis of the tangent space at ``omega``, shape (d, d-1).

    In d=2 this is the counterclockwise unit tangent, so derivatives are
    with respect to the polar angle.
    """
    w = np.asarray(omega, float)
    d = w.size
    if d == 2:
        return np.array([[-w[1]], [w[0]]])
    a = np.eye(d)[np.argmin(np.abs(w))]
    basis = []
    for v in [a] + [np.eye(d)[i] for i in range(d)]:
        u = v - w * (w @ v)
        for b in basis:
            u = u - b * (b @ u)
        n = np.linalg.norm(u)
        if n > 1e-8:
            basis.append(u / n)
        if len(basis) == d - 1:
            break
    return np.stack(basis, axis=1)


@dataclass
class FlowTrajectory:
    """Samples of one flow line ``s -> Phi(s, omega)``.

    Attributes
    ----------
    omega : launch direction
    s : sample levels (physical ``S``), increasing
    positions, momenta : (K, d); ``momenta = grad S_phys``
    jacobi : (K, d, d-1) ``dPhi/domega`` in the tangent basis of ``omega``
    density : (K,) ``m_lam`` from the exponent integral of ``f^-2 Delta S``
    density_det : (K,) ``|det[dPhi/ds, dPhi/domega]|``
    laplacian : (K,) ``Delta S_phys`` along the line
    monitor_s, monitor_defect : arc-length monitor ``|S_phys(Phi(s)) - s|``
    """

    omega: np.ndarray
    lam: float
    s: np.ndarray
    positions: np.ndarray
    momenta: np.ndarray
    jacobi: np.ndarray
    density: np.ndarray
    density_det: np.ndarray
    laplacian: np.ndarray
    monitor_s: np.ndarray = field(default_factory=lambda: np.zeros(0))
    monitor_defect: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def eta(self) -> np.ndarray:
        return self.positions / np.linalg.norm(self.positions, axis=1, keepdims=True)

    @property
    def psi(self) -> np.ndarray:
        """``Psi = Phi - s omega / sqrt(2 lam)``."""
        return self.positions - self.s[:, None] * self.omega[None, :] / math.sqrt(2.0 * self.lam)

    @property
    def max_defect(self) -> float:
        return float(np.max(self.monitor_defect)) if self.monitor_defect.size else 0.0

    def rows(self):
        d = self.omega.size
        for k in range(self.s.size):
            yield [self.s[k], *self.positions[k], self.density[k], *self.eta[k]]

    @staticmethod
    def header(d: int):
        return ["s"] + [f"Phi{i + 1}" for i in range(d)] + ["m_lambda"] + [f"eta{i + 1}" for i in range(d)]


@dataclass
class FlowBundle:
    """A family of trajectories sharing the sample levels."""

    trajectories: list

    @property
    def omegas(self) -> np.ndarray:
        return np.array([t.omega for t in self.trajectories])

    def __len__(self):
        return len(self.trajectories)

    def __getitem__(self, i) -> FlowTrajectory:
        return self.trajectories[i]


def _flat_samples(omega, basis, k, s, dim):
    """Exact samples on the straight part ``s <= 1``."""
    pos = s[:, None] * omega[None, :] / k
    mom = np.broadcast_to(k * omega, pos.shape).copy()
    jac = (s / k)[:, None, None] * basis[None, :, :]
    dens = k ** (-dim) * s ** (dim - 1)
    lap = np.where(s > 0, k * (dim - 1) / np.maximum(s / k, 1e-300), np.inf)
    return pos, mom, jac, dens, dens.copy(), lap


def integrate_flows(field: EikonalField, omegas, s_max: float, *, s_eval=None, rtol: float = 1e-12,
                    atol: float = 1e-13, n_monitor: int = 8, tol_flow: float = 1e-6,
                    monitor: bool = True) -> FlowBundle:
    """Integrate the flow from ``Phi(1) = omega / sqrt(2 lam)`` for many directions.

    Parameters
    ----------
    s_eval : array, optional
        Sample levels; default 200 points geometric in ``[1, s_max]``.
        Levels below 1 use the exact straight segment.
    n_monitor : int
        Number of levels (geometric, ending at ``s_max``) where
        ``S_phys(Phi)`` is recomputed by a geodesic solve per trajectory.

    Raises
    ------
    FlowDivergence
        Arc-length defect above ``10 tol_flow``.
    """
    metric = field.metric
    d = metric.dim
    lam = metric.lam
    k = math.sqrt(2.0 * lam)
    omegas = np.asarray(omegas, dtype=float).reshape(-1, d)
    omegas = omegas / np.linalg.norm(omegas, axis=1, keepdims=True)
    n = omegas.shape[0]
    if s_max <= 1.0:
        raise ValueError("s_max must exceed 1")
    if s_eval is None:
        s_eval = np.geomspace(1.0, s_max, 200)
    s_eval = np.unique(np.asarray(s_eval, dtype=float))
    s_lo = s_eval[s_eval <= 1.0]
    s_hi = s_eval[s_eval > 1.0]
    bases = np.array([tangent_basis(w) for w in omegas])  # (n, d, d-1)
    m = d - 1
    sizes = (d, d, d * m, d * m, 1)
    offs = np.cumsum((0,) + sizes)

    def unpack(y):
        y = y.reshape(n, -1)
        x = y[:, offs[0]:offs[1]]
        p = y[:, offs[1]:offs[2]]
        X = y[:, offs[2]:offs[3]].reshape(n, d, m)
        P = y[:, offs[3]:offs[4]].reshape(n, d, m)
        return x, p, X, P

    def rhs_parts(y):
        x, p, X, P = unpack(y)
        g, dg, hg = metric.jet(x)
        f2 = 2.0 * lam * g
        df2 = 2.0 * lam * dg
        hf2 = 2.0 * lam * hg
        xs = p / f2[:, None]
        ps = df2 / (2.0 * f2[:, None])
        dX = np.einsum("ni,nij->nj", df2, X)  # grad f^2 . X
        Xs = P / f2[:, None, None] - p[:, :, None] * dX[:, None, :] / (f2**2)[:, None, None]
        Ps = (np.einsum("nij,njk->nik", hf2, X) / (2.0 * f2)[:, None, None]
              - df2[:, :, None] * dX[:, None, :] / (2.0 * f2**2)[:, None, None])
        Xf = np.concatenate([xs[:, :, None], X], axis=2)
        Pf = np.concatenate([ps[:, :, None], P], axis=2)
        lap = np.trace(np.linalg.solve(Xf.transpose(0, 2, 1), Pf.transpose(0, 2, 1)), axis1=1, axis2=2)
        return xs, ps, Xs, Ps, lap, f2, Xf

    def rhs(_s, y):
        xs, ps, Xs, Ps, lap, f2, _ = rhs_parts(y)
        q = (lap / f2)[:, None]
        return np.concatenate([xs, ps, Xs.reshape(n, -1), Ps.reshape(n, -1), q], axis=1).ravel()

    y0 = np.concatenate([omegas / k, k * omegas, (bases / k).reshape(n, -1), (k * bases).reshape(n, -1),
                         np.zeros((n, 1))], axis=1).ravel()
    if s_hi.size:
        sol = solve_ivp(rhs, (1.0, float(s_hi[-1])), y0, method="DOP853", t_eval=s_hi, rtol=rtol, atol=atol)
        if not sol.success:
            raise FlowDivergence(f"flow integration failed: {sol.message}")
        Y = sol.y.T  # (K, n*state)
    else:
        Y = np.zeros((0, y0.size))
    trajs = []
    K = s_hi.size
    pos_hi = np.empty((n, K, d))
    mom_hi = np.empty((n, K, d))
    jac_hi = np.empty((n, K, d, m))
    dens_hi = np.empty((n, K))
    det_hi = np.empty((n, K))
    lap_hi = np.empty((n, K))
    for j in range(K):
        x, p, X, P = unpack(Y[j])
        _, _, _, _, lap, f2, Xf = rhs_parts(Y[j])
        q = Y[j].reshape(n, -1)[:, -1]
        pos_hi[:, j] = x
        mom_hi[:, j] = p
        jac_hi[:, j] = X
        dens_hi[:, j] = k ** (2 - d) / f2 * np.exp(q)
        det_hi[:, j] = np.abs(np.linalg.det(Xf))
        lap_hi[:, j] = lap
    mon_s = np.zeros(0)
    if monitor and s_hi.size and n_monitor > 0:
        mon_s = s_hi[np.unique(np.round(np.geomspace(1, K, n_monitor)).astype(int) - 1)]
    for i in range(n):
        lo = _flat_samples(omegas[i], bases[i], k, s_lo, d)
        traj = FlowTrajectory(
            omegas[i], lam, np.concatenate([s_lo, s_hi]),
            np.concatenate([lo[0], pos_hi[i]]), np.concatenate([lo[1], mom_hi[i]]),
            np.concatenate([lo[2], jac_hi[i]]), np.concatenate([lo[3], dens_hi[i]]),
            np.concatenate([lo[4], det_hi[i]]), np.concatenate([lo[5], lap_hi[i]]),
        )
        if mon_s.size:
            idx = np.searchsorted(traj.s, mon_s)
            defects = np.array([abs(field.S_phys(traj.positions[j]) - traj.s[j]) for j in idx])
            traj.monitor_s = mon_s.copy()
            traj.monitor_defect = defects
            if defects.max() > 10.0 * tol_flow:
                raise FlowDivergence(
                    f"arc-length defect {defects.max():.3e} > {10 * tol_flow:.1e} for omega={omegas[i].tolist()}"
                )
        trajs.append(traj)
    return FlowBundle(trajs)


def integrate_flow(field: EikonalField, omega, s_max: float, **kw) -> FlowTrajectory:
    """Single trajectory; see :func:`integrate_flows`."""
    return integrate_flows(field, np.asarray(omega, float)[None, :], s_max, **kw)[0]


def surface_density(field: EikonalField, traj: FlowTrajectory) -> np.ndarray:
    """``m_lam(Phi(s, omega)) = f(0)^(2-d) f^-2 exp(int_1^s f^-2 Delta S)``."""
    return traj.density


def radial_density_oracle(oracle, lam: float, s, dim: int) -> np.ndarray:
    """``m_lam = r^(d-1) / f(r)`` at ``S_phys(r) = s`` for a radial metric."""
    k = math.sqrt(2.0 * lam)
    out = []
    for sv in np.atleast_1d(s):
        r = oracle.radius_at_level(sv)
        f = k * oracle.grad_norm(r)
        out.append(r ** (dim - 1) / f)
    return np.array(out)


# ---------------------------------------------------------------------------
# co-area and Gauss identities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianTest:
    """``phi(x) = amp * exp(-|x - c|^2 / (2 l^2))`` with closed-form integrals."""

    center: tuple
    width: float = 1.0 / math.sqrt(2.0)
    amp: float = 1.0

    def __call__(self, x):
        x = np.asarray(x, float)
        c = np.asarray(self.center, float)
        return self.amp * np.exp(-np.sum((x - c) ** 2, axis=-1) / (2.0 * self.width**2))

    def gradient(self, x):
        x = np.asarray(x, float)
        c = np.asarray(self.center, float)
        return -(x - c) / self.width**2 * self(x)[..., None]

    @property
    def integral(self) -> float:
        d = len(self.center)
        return self.amp * (2.0 * math.pi * self.width**2) ** (d / 2)

    def tensor_integral(self, n: int = 200, span: float = 9.0) -> float:
        """Tensor Gauss-Legendre quadrature over ``c +- span * width``."""
        d = len(self.center)
        t, w = np.polynomial.legendre.leggauss(n)
        h = span * self.width
        axes = [c + h * t for c in self.center]
        grids = np.meshgrid(*axes, indexing="ij")
        pts = np.stack(grids, -1)
        W = np.ones([n] * d)
        for i in range(d):
            shape = [1] * d
            shape[i] = n
            W = W * (h * w).reshape(shape)
        return float(np.sum(W * self(pts)))


def _s_quadrature(s_max, n_panels=60, order=8):
    """Gauss–Legendre nodes on geometric panels of ``[0, s_max]``."""
    t, w = np.polynomial.legendre.leggauss(order)
    edges = np.concatenate([[0.0], np.linspace(0.25, 1.0, 4), np.geomspace(1.0, s_max, n_panels + 1)[1:]])
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        nodes.append(0.5 * (a + b) + 0.5 * (b - a) * t)
        weights.append(0.5 * (b - a) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def _sphere_weights(dim, n):
    return np.full(n, sphere_area(dim) / n)


def coarea_check(field: EikonalField, phi: GaussianTest, sphere_nodes=256, s_max: float | None = None,
                 bundle: FlowBundle | None = None):
    """Compare ``int phi dx`` with ``int ds int (phi m)(Phi(s, .)) domega``.

    Returns ``(lhs, rhs, relative defect)``; ``lhs`` by tensor quadrature.
    """
    d = field.dim
    if s_max is None:
        reach = np.linalg.norm(phi.center) + 9.0 * phi.width
        s_max = field.k * reach * 1.2 + 2.0
    s_q, w_q = _s_quadrature(s_max)
    if bundle is None:
        omegas = sphere_points(d, sphere_nodes) if np.isscalar(sphere_nodes) else np.asarray(sphere_nodes)
        bundle = integrate_flows(field, omegas, float(s_max), s_eval=s_q, monitor=False)
    n = len(bundle)
    wd = _sphere_weights(d, n)
    rhs = 0.0
    for i, tr in enumerate(bundle.trajectories):
        idx = np.searchsorted(tr.s, s_q)
        vals = phi(tr.positions[idx]) * tr.density[idx]
        rhs += wd[i] * float(np.sum(w_q * vals))
    lhs = phi.tensor_integral()
    return lhs, rhs, abs(lhs - rhs) / abs(lhs)


def _level_curve(bundle: FlowBundle, s_level: float):
    """Periodic spline ``r(psi)`` of the level set ``{S = s}`` in d=2."""
    pts = []
    for tr in bundle.trajectories:
        j = int(np.argmin(np.abs(tr.s - s_level)))
        if abs(tr.s[j] - s_level) > 1e-12 * max(1.0, s_level):
            raise ValueError("level not among the trajectory samples")
        pts.append(tr.positions[j])
    pts = np.array(pts)
    psi = np.arctan2(pts[:, 1], pts[:, 0])
    r = np.linalg.norm(pts, axis=1)
    order = np.argsort(psi)
    psi, r = psi[order], r[order]
    psi_ext = np.concatenate([psi, [psi[0] + 2.0 * math.pi]])
    r_ext = np.concatenate([r, [r[0]]])
    return CubicSpline(psi_ext, r_ext, bc_type="periodic"), psi[0]


def gauss_check(field: EikonalField, phi: GaussianTest, j: int, s_level: float, sphere_nodes=256,
                bundle: FlowBundle | None = None, n_angle: int = 512, n_radial: int = 96):
    """Divergence identity ``int_{S<=s} d_j phi = int (phi d_j S m)(Phi(s, .)) domega``.

    The volume side integrates in polar coordinates up to the level curve
    (d=2). Returns ``(lhs, rhs, relative defect, absolute defect)``.
    """
    d = field.dim
    if d != 2:
        raise ValueError("gauss_check is implemented for d=2")
    if bundle is None:
        omegas = sphere_points(d, sphere_nodes) if np.isscalar(sphere_nodes) else np.asarray(sphere_nodes)
        bundle = integrate_flows(field, omegas, float(s_level), s_eval=np.array([s_level]), monitor=False)
    wd = _sphere_weights(d, len(bundle))
    rhs = 0.0
    for i, tr in enumerate(bundle.trajectories):
        k = int(np.argmin(np.abs(tr.s - s_level)))
        x = tr.positions[k]
        rhs += wd[i] * float(phi(x) * tr.momenta[k, j] * tr.density[k])
    curve, psi0 = _level_curve(bundle, s_level)
    psi = psi0 + 2.0 * math.pi * (np.arange(n_angle) + 0.5) / n_angle
    R = curve(psi)
    t, w = np.polynomial.legendre.leggauss(n_radial)
    rr = 0.5 * (t[None, :] + 1.0) * R[:, None]
    wr = 0.5 * w[None, :] * R[:, None]
    pts = np.stack([rr * np.cos(psi)[:, None], rr * np.sin(psi)[:, None]], -1)
    integrand = phi.gradient(pts)[..., j] * rr
    lhs = float(np.sum(wr * integrand)) * 2.0 * math.pi / n_angle
    scale = max(abs(lhs), abs(rhs))
    rel = abs(lhs - rhs) / scale if scale > 0 else 0.0
    return lhs, rhs, rel, abs(lhs - rhs)


# ---------------------------------------------------------------------------
# asymptotic direction
# ---------------------------------------------------------------------------

@dataclass
class TailFit:
    """``eta(s) ~ eta_plus + c s^-sigma`` on the last decade of the trajectory."""

    eta_plus: np.ndarray
    error: float
    coefficient: np.ndarray
    exponent: float
    tail_at_end: float


def free_tail_fit(s, Y, bounds=(0.02, 4.0)):
    """Fit ``Y(s) = c0 + c1 s^-beta`` with ``beta`` free (variable projection).

    ``Y`` has shape (K,) or (K, q); the exponent is shared by all columns.
    Returns ``(beta, c0, c1)``.
    """
    from scipy.optimize import minimize_scalar

    Y = np.asarray(Y, float)
    Y2 = Y.reshape(Y.shape[0], -1)

    def solve(beta):
        A = np.stack([np.ones_like(s), s ** (-beta)], 1)
        coef, *_ = np.linalg.lstsq(A, Y2, rcond=None)
        return float(np.sum((A @ coef - Y2) ** 2)), coef

    grid = np.linspace(bounds[0], bounds[1], 80)
    vals = [solve(b)[0] for b in grid]
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = minimize_scalar(lambda b: solve(b)[0], bounds=(lo, hi), method="bounded", options={"xatol": 1e-8})
    coef = solve(res.x)[1]
    shape = Y.shape[1:]
    return float(res.x), coef[0].reshape(shape), coef[1].reshape(shape)


def asymptotic_direction(traj: FlowTrajectory, sigma: float, *, tol: float = 1e-2, decade: float = 10.0) -> TailFit:
    """Extrapolate ``eta_plus = lim eta(s)`` with the two-term model ``c0 + c1 s^-sigma``.

    The tail exponent is fitted separately with a free exponent over the
    same last decade.

    Raises
    ------
    TailNotConverged
        If the fitted remaining tail at ``s_max`` exceeds ``tol``.
    """
    s = traj.s
    eta = traj.eta
    smax = s[-1]
    sel = s >= smax / decade
    if sel.sum() < 4:
        raise TailNotConverged("too few samples in the last decade")
    A = np.stack([np.ones(sel.sum()), s[sel] ** (-sigma)], 1)
    coef, *_ = np.linalg.lstsq(A, eta[sel], rcond=None)
    c0, c1 = coef
    eta_plus = c0 / np.linalg.norm(c0)
    err = float(np.max(np.linalg.norm(A @ coef - eta[sel], axis=1)))
    tail = float(np.linalg.norm(c1) * smax ** (-sigma))
    if tail > tol:
        raise TailNotConverged(f"remaining tail {tail:.3e} > {tol:.1e}")
    expo = free_tail_fit(s[sel], eta[sel])[0] if np.max(np.ptp(eta[sel], axis=0)) > 1e-13 else float("nan")
    return TailFit(eta_plus, err + tail * 1e-2, c1, expo, tail)


def tail_exponent(bundle: "FlowBundle", decade: float = 10.0) -> float:
    """Log-log exponent of ``sup_omega |eta(s, omega) - eta_plus(omega)|``.

    ``eta_plus`` comes from a free-exponent fit per trajectory; the sup curve
    over the last decade is then fitted by a straight line in log-log.
    """
    s = bundle[0].s
    sel = s >= s[-1] / decade
    devs = []
    for tr in bundle.trajectories:
        _, c0, _ = free_tail_fit(s[sel], tr.eta[sel])
        devs.append(np.linalg.norm(tr.eta[sel] - c0[None, :], axis=1))
    sup = np.max(np.array(devs), axis=0)
    if np.max(sup) < 1e-14:
        return float("nan")
    return float(-np.polyfit(np.log(s[sel]), np.log(sup), 1)[0])


# ---------------------------------------------------------------------------
# sphere map
# ---------------------------------------------------------------------------

def _angle(v):
    return np.arctan2(v[..., 1], v[..., 0])


def _wrap(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi


class _SphericalLinear:
    """Linear interpolation of a vector field on a spherical point set (d=3)."""

    def __init__(self, nodes, values):
        from scipy.spatial import ConvexHull

        self.nodes = nodes
        self.values = values
        hull = ConvexHull(nodes)
        self.simplices = hull.simplices
        self.normals = hull.equations[:, :3]
        self.offsets = hull.equations[:, 3]

    def __call__(self, q):
        q = np.asarray(q, float)
        dots = self.normals @ q
        t = np.where(dots > 1e-14, -self.offsets / np.where(dots > 1e-14, dots, 1.0), np.inf)
        f = int(np.argmin(t))
        tri = self.nodes[self.simplices[f]]
        p = t[f] * q
        lam = np.linalg.solve(tri.T, p)
        return lam @ self.values[self.simplices[f]]


@dataclass
class SphereMap:
    """Asymptotic direction map ``eta_plus`` on a node set and its inverse."""

    nodes: np.ndarray
    eta_plus: np.ndarray
    D_measure: np.ndarray
    D_map: np.ndarray
    sigma: float
    lam: float
    tail_exponents: np.ndarray
    bundle: FlowBundle | None = None
    _interp: object = None

    @property
    def dim(self):
        return self.nodes.shape[1]

    @property
    def max_deviation(self) -> float:
        return float(np.max(np.linalg.norm(self.eta_plus - self.nodes, axis=1)))

    def lipschitz_defect(self) -> float:
        """Sampled Lipschitz constant of ``eta_plus - id`` (d=2: in angle)."""
        if self.dim == 2:
            th = _angle(self.nodes)
            dev = _wrap(_angle(self.eta_plus) - th)
            dth = 2.0 * math.pi / th.size
            return float(np.max(np.abs(np.diff(np.concatenate([dev, dev[:1]])))) / dth)
        diff = self.eta_plus - self.nodes
        best = 0.0
        for i, w in enumerate(self.nodes):
            dist = np.linalg.norm(self.nodes - w, axis=1)
            near = np.argsort(dist)[1:7]
            best = max(best, float(np.max(np.linalg.norm(diff[near] - diff[i], axis=1) / dist[near])))
        return best

    def eta(self, omega) -> np.ndarray:
        """``eta_plus`` between nodes by local linear interpolation."""
        omega = np.asarray(omega, float)
        if self.dim == 2:
            th = _angle(self.nodes)
            dev = _wrap(_angle(self.eta_plus) - th)
            order = np.argsort(th)
            th_s = np.concatenate([th[order], [th[order][0] + 2 * math.pi]])
            dv = np.concatenate([dev[order], [dev[order][0]]])
            a = _angle(omega)
            a = np.where(a < th_s[0], a + 2 * math.pi, a)
            out = a + np.interp(a, th_s, dv)
            return np.stack([np.cos(out), np.sin(out)], -1)
        if self._interp is None:
            self._interp = _SphericalLinear(self.nodes, self.eta_plus - self.nodes)
        pts = np.atleast_2d(omega)
        res = np.array([w + self._interp(w / np.linalg.norm(w)) for w in pts])
        res /= np.linalg.norm(res, axis=1, keepdims=True)
        return res[0] if omega.ndim == 1 else res

    def zeta(self, target, tol: float = 1e-13, max_iter: int = 200) -> np.ndarray:
        """``zeta_plus(target)`` by the damped fixed point ``w <- w + (target - eta(w))``."""
        target = np.asarray(target, float)
        w = target.copy()
        for _ in range(max_iter):
            r = target - self.eta(w)
            w = w + r
            w = w / np.linalg.norm(w, axis=-1, keepdims=True)
            if np.max(np.abs(r)) < tol:
                return w
        raise ContractionFailure("inverse direction map did not converge")

    def round_trip(self) -> float:
        z = self.zeta(self.nodes)
        return float(np.max(np.linalg.norm(self.eta(z) - self.nodes, axis=1)))

    def tail_exponent(self) -> float:
        return tail_exponent(self.bundle)

    def D_agreement(self) -> float:
        return float(np.max(np.abs(self.D_measure / self.D_map - 1.0)))

    def D_normalized(self) -> np.ndarray:
        """``D`` rescaled so that its sphere integral is the sphere area."""
        return self.D_measure * self.D_measure.size / np.sum(self.D_measure)

    def rows(self):
        z = self.zeta(self.nodes)
        for i in range(self.nodes.shape[0]):
            yield [*self.nodes[i], *self.eta_plus[i], *z[i], self.D_measure[i], self.D_map[i]]

    def header(self):
        d = self.dim
        return ([f"omega{i + 1}" for i in range(d)] + [f"eta_plus{i + 1}" for i in range(d)]
                + [f"zeta_plus{i + 1}" for i in range(d)] + ["D_measure", "D_map"])


def _map_jacobian_2d(nodes, eta_plus):
    th = _angle(nodes)
    order = np.argsort(th)
    dev = _wrap(_angle(eta_plus) - th)[order]
    n = th.size
    h = 2.0 * math.pi / n
    # fourth-order periodic central difference of the angle deviation
    d1 = (8.0 * (np.roll(dev, -1) - np.roll(dev, 1)) - (np.roll(dev, -2) - np.roll(dev, 2))) / (12.0 * h)
    jac = np.empty(n)
    jac[order] = 1.0 + d1
    return jac


def _map_jacobian_3d(nodes, eta_plus):
    """Least-squares tangent Jacobian of ``eta_plus`` from nearest neighbours."""
    out = np.empty(nodes.shape[0])
    for i, w in enumerate(nodes):
        B = tangent_basis(w)
        dist = np.linalg.norm(nodes - w, axis=1)
        near = np.argsort(dist)[1:13]
        dw = (nodes[near] - w) @ B
        e0 = eta_plus[i]
        Be = tangent_basis(e0)
        de = (eta_plus[near] - e0) @ Be
        # quadratic fit removes curvature bias
        A = np.column_stack([dw, dw[:, 0] ** 2, dw[:, 0] * dw[:, 1], dw[:, 1] ** 2])
        coef, *_ = np.linalg.lstsq(A, de, rcond=None)
        out[i] = abs(np.linalg.det(coef[:2].T))
    return out


def build_sphere_map(field: EikonalField, sphere_nodes=256, s_max: float = 1000.0, *,
                     n_samples: int = 240, monitor: bool = False, bundle: FlowBundle | None = None) -> SphereMap:
    """``eta_plus`` on the node set with both Jacobian computations of ``D``.

    ``D_measure`` is the limit of ``C(lam)^2 (pi/lam) |x|^(d-1) / m_lam``
    along each trajectory (two-term extrapolation); ``D_map`` is
    ``1 / det(d eta_plus / d omega)`` by differencing over the nodes.

    Raises
    ------
    ContractionFailure
        If ``sup |eta_plus - omega| > 1/2``.
    """
    d = field.dim
    lam = field.lam
    sigma = field.metric.model.sigma
    nodes = sphere_points(d, sphere_nodes) if np.isscalar(sphere_nodes) else np.asarray(sphere_nodes, float)
    if bundle is None:
        s_eval = np.geomspace(1.0, s_max, n_samples)
        bundle = integrate_flows(field, nodes, s_max, s_eval=s_eval, monitor=monitor)
    C2 = gft_constant(lam) ** 2
    etas, Dm, expo = [], [], []
    for tr in bundle.trajectories:
        if field.metric.model.is_zero:
            fit = TailFit(tr.omega.copy(), 0.0, np.zeros(d), float("nan"), 0.0)
        else:
            fit = asymptotic_direction(tr, sigma, tol=0.5)
        etas.append(fit.eta_plus)
        expo.append(fit.exponent)
        r = np.linalg.norm(tr.positions, axis=1)
        raw = C2 * (math.pi / lam) * r ** (d - 1) / tr.density
        sel = tr.s >= tr.s[-1] / 10.0
        A = np.stack([np.ones(sel.sum()), tr.s[sel] ** (-sigma)], 1)
        coef, *_ = np.linalg.lstsq(A, raw[sel], rcond=None)
        Dm.append(coef[0] if not field.metric.model.is_zero else raw[-1])
    etas = np.array(etas)
    if np.max(np.linalg.norm(etas - nodes, axis=1)) > 0.5:
        raise ContractionFailure("sup |eta_plus - omega| > 1/2; shrink the cutoff scale")
    if d == 2:
        D_map = 1.0 / _map_jacobian_2d(nodes, etas)
    else:
        D_map = 1.0 / _map_jacobian_3d(nodes, etas)
    return SphereMap(nodes, etas, np.array(Dm), D_map, sigma, lam, np.array(expo), bundle)


# ---------------------------------------------------------------------------
# phase comparison
# ---------------------------------------------------------------------------

def phase_comparison(field: EikonalField, other, sphere_map: SphereMap, omega_plus, *,
                     s_max: float | None = None, n_samples: int = 40, tol: float = 1e-6):
    """``theta_plus(omega_plus) = lim (S(Phi(s, omega)) - S_other(Phi(s, omega)))``.

    ``other`` is a callable ``x -> S`` (physical normalization) and
    ``omega = zeta_plus(omega_plus)``. The difference is extrapolated with
    the model ``theta + c / s``. Returns ``(theta, fit error)``.

    Raises
    ------
    TailNotConverged
        If the tail fit residual exceeds ``tol``.
    """
    omega = sphere_map.zeta(np.asarray(omega_plus, float))
    if s_max is None:
        s_max = float(sphere_map.bundle[0].s[-1]) if sphere_map.bundle is not None else 1000.0
    s = np.geomspace(s_max / 10.0, s_max, n_samples)
    tr = integrate_flow(field, omega, s_max, s_eval=s, monitor=False)
    diff = np.array([sv - other(x) for sv, x in zip(tr.s, tr.positions)])
    A = np.stack([np.ones_like(s), 1.0 / s], 1)
    coef, *_ = np.linalg.lstsq(A, diff, rcond=None)
    err = float(np.max(np.abs(A @ coef - diff)))
    if err > tol * max(1.0, abs(coef[0])):
        raise TailNotConverged(f"phase tail residual {err:.3e}")
    return float(coef[0]), err
