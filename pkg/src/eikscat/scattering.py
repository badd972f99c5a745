"""Two-dimensional limiting-absorption resolvent and far-field diagnostics.

``H = -1/2 Delta_h + V - i W`` on a uniform square grid with Dirichlet walls
and a quartic absorbing frame ``W``. ``u = (H - lam - i eps)^-1 v`` then
approximates the outgoing resolvent ``R(lam + i0) v`` in the interior.

Far-field recipes (``k = sqrt(2 lam)``, ``C(lam) = sqrt(k / 2 pi)``):

* radial:   ``F(omega) = C r^(1/2) e^{-i S} u(r omega)`` as ``r`` grows,
* Cesaro:   mean over ``r in (0, rho]`` of the radial sections,
* eikonal:  ``(2 pi)^(-1/2) (f m^(1/2) e^{-i S} u)(Phi(s, omega))``.

In the free case ``F = e^{i pi/4} vhat(k omega)`` with the unitary Fourier
transform, so ``|F|^2`` integrates to the spectral mass of ``v``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
from scipy.interpolate import CubicSpline, RectBivariateSpline
from scipy.sparse.linalg import splu

from .eikonal import EikonalField
from .errors import ResolutionTooCoarse, SolveFailure
from .flow import FlowBundle, SphereMap, gft_constant, integrate_flows
from .potential import PotentialModel, ramp
from .sphere import circle_points

__all__ = [
    "ScatterGrid",
    "DiscreteHamiltonian",
    "ScatterSolution",
    "build_hamiltonian",
    "solve_resolvent",
    "gaussian_source",
    "epsilon_sweep",
    "ring_source",
    "BesovNorms",
    "besov_norms",
    "theta_weight",
    "theta_derivative",
    "theta_checks",
    "PolarPhase",
    "radiation_observables",
    "radiation_ratios",
    "radiation_bound_ratio",
    "GFTProfile",
    "gft_radial",
    "gft_cesaro",
    "gft_eikonal",
    "fourier_on_circle",
    "profile_correlation",
    "relative_l2",
    "diag_identity_defect",
    "ParsevalResult",
    "parseval_defect",
    "eikonal_level",
    "radial_phase_slope",
]

RESOLUTION_LIMIT = 0.3


# ---------------------------------------------------------------------------
# grid and operator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScatterGrid:
    """Cell-centred grid on ``[-L, L]^2`` with ``n`` points per side.

    ``w`` is the absorber width (default ``L/5``); the absorber strength is
    ``s0 ((|x|_inf - (L - w)) / w)^4`` with ``s0 = 3 lam`` unless given.
    """

    L: float
    n: int
    w: float | None = None
    s0: float | None = None

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def width(self) -> float:
        return self.L / 5.0 if self.w is None else float(self.w)

    @property
    def inner(self) -> float:
        """Half-width of the absorber-free square."""
        return self.L - self.width

    @property
    def axis(self) -> np.ndarray:
        return -self.L + self.h * (np.arange(self.n) + 0.5)

    def mesh(self):
        a = self.axis
        return np.meshgrid(a, a, indexing="ij")

    def points(self) -> np.ndarray:
        X, Y = self.mesh()
        return np.stack([X, Y], -1)

    def radius(self) -> np.ndarray:
        X, Y = self.mesh()
        return np.hypot(X, Y)

    def interior_mask(self) -> np.ndarray:
        X, Y = self.mesh()
        return np.maximum(np.abs(X), np.abs(Y)) <= self.inner

    def absorber(self, lam: float) -> np.ndarray:
        s0 = 3.0 * lam if self.s0 is None else self.s0
        X, Y = self.mesh()
        t = (np.maximum(np.abs(X), np.abs(Y)) - self.inner) / self.width
        return s0 * np.clip(t, 0.0, None) ** 4

    def check_resolution(self, lam: float) -> None:
        hk = self.h * math.sqrt(2.0 * lam)
        if hk > RESOLUTION_LIMIT:
            raise ResolutionTooCoarse(f"h*k = {hk:.3f} > {RESOLUTION_LIMIT} (L={self.L}, n={self.n}, lam={lam})")


def _second_difference(n, h, stencil):
    if stencil == "5pt":
        main = -2.0 * np.ones(n)
        off = np.ones(n - 1)
        return sps.diags([off, main, off], [-1, 0, 1], format="csr") / h**2
    if stencil == "9pt":
        # fourth-order cross stencil; values beyond the walls are zero
        c = [-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0]
        diags = [np.full(n - abs(o), c[o + 2]) for o in range(-2, 3)]
        return sps.diags(diags, list(range(-2, 3)), format="csr") / h**2
    raise ValueError(f"unknown stencil {stencil!r}")


def grid_derivative(u, h, axis):
    """Fourth-order centred first derivative along ``axis`` (zero outside)."""
    pad = [(0, 0), (0, 0)]
    pad[axis] = (2, 2)
    up = np.pad(u, pad)
    sl = lambda a, b: tuple(slice(a, up.shape[axis] - b if b else None) if i == axis else slice(None) for i in range(2))
    return (up[sl(0, 4)] / 12.0 - 2.0 * up[sl(1, 3)] / 3.0 + 2.0 * up[sl(3, 1)] / 3.0 - up[sl(4, 0)] / 12.0) / h


@dataclass
class DiscreteHamiltonian:
    """Sparse ``-1/2 Delta_h + V - i W`` with its pieces kept for diagnostics."""

    grid: ScatterGrid
    lam: float
    matrix: sps.csr_matrix
    potential: np.ndarray
    absorber_values: np.ndarray
    stencil: str

    def apply(self, u) -> np.ndarray:
        return (self.matrix @ np.ravel(u)).reshape(self.grid.n, self.grid.n)


def build_hamiltonian(model: PotentialModel | None, grid: ScatterGrid, lam: float, *,
                      absorber: bool = True, stencil: str = "9pt") -> DiscreteHamiltonian:
    """Discretize ``H`` on the grid.

    Raises
    ------
    ResolutionTooCoarse
        If ``h sqrt(2 lam) > 0.3``.
    """
    if model is not None and model.dim != 2:
        raise ValueError("the scattering module is two-dimensional")
    grid.check_resolution(lam)
    n = grid.n
    D2 = _second_difference(n, grid.h, stencil)
    I = sps.identity(n, format="csr")
    lap = sps.kron(D2, I) + sps.kron(I, D2)
    V = np.zeros((n, n)) if model is None or model.is_zero else model(grid.points())
    W = grid.absorber(lam) if absorber else np.zeros((n, n))
    H = (-0.5 * lap).astype(complex) + sps.diags((V - 1j * W).ravel())
    return DiscreteHamiltonian(grid, float(lam), H.tocsc(), V, W, stencil)


@dataclass
class ScatterSolution:
    """``u ~ (H - lam - i eps)^-1 v`` with its residual certificate."""

    grid: ScatterGrid
    lam: float
    eps: float
    v: np.ndarray
    u: np.ndarray
    residual: float
    _spline: tuple | None = field(default=None, repr=False)

    def interpolate(self, pts) -> np.ndarray:
        """Bicubic interpolation of ``u`` at points (..., 2)."""
        if self._spline is None:
            a = self.grid.axis
            self._spline = (RectBivariateSpline(a, a, self.u.real, kx=3, ky=3),
                            RectBivariateSpline(a, a, self.u.imag, kx=3, ky=3))
        pts = np.asarray(pts, float)
        flat = pts.reshape(-1, 2)
        re = self._spline[0].ev(flat[:, 0], flat[:, 1])
        im = self._spline[1].ev(flat[:, 0], flat[:, 1])
        return (re + 1j * im).reshape(pts.shape[:-1])

    def inner(self, a, b) -> complex:
        return complex(np.sum(np.conj(a) * b) * self.grid.h**2)


def solve_resolvent(H: DiscreteHamiltonian, lam: float, eps: float, v) -> ScatterSolution | list:
    """Sparse direct solve of ``(H - lam - i eps) u = v``.

    ``v`` may be one grid function or a list sharing the factorization.

    Raises
    ------
    SolveFailure
        If the factorization fails or the residual exceeds ``1e-8 |v|``.
    """
    if not 0.0 <= eps <= 0.1:
        raise ValueError("eps must lie in [0, 0.1]")
    n = H.grid.n
    A = (H.matrix - (lam + 1j * eps) * sps.identity(n * n, format="csc")).tocsc()
    try:
        lu = splu(A, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SolveFailure(str(exc)) from exc
    many = isinstance(v, (list, tuple))
    out = []
    for vi in (v if many else [v]):
        vi = np.asarray(vi, dtype=complex)
        b = vi.ravel()
        x = lu.solve(b)
        res = float(np.linalg.norm(A @ x - b) / max(np.linalg.norm(b), 1e-300))
        if not np.isfinite(res) or res > 1e-8:
            raise SolveFailure(f"residual {res:.2e} exceeds certificate")
        out.append(ScatterSolution(H.grid, float(lam), float(eps), vi, x.reshape(n, n), res))
    return out if many else out[0]


def epsilon_sweep(H: DiscreteHamiltonian, lam: float, v, epsilons=(0.1, 0.05, 0.025, 0.0)) -> list[dict]:
    """Spectral density ``pi^-1 Im <v, u_eps>`` and interior norm per ``eps``.

    The ``eps = 0`` value is the reported one; the spread is its error bar.
    """
    mask = H.grid.interior_mask()
    rows = []
    for eps in epsilons:
        sol = solve_resolvent(H, lam, eps, v)
        rows.append({"eps": float(eps), "spectral": sol.inner(v, sol.u).imag / math.pi,
                     "interior_norm": math.sqrt(float(np.sum(np.abs(sol.u[mask]) ** 2)) * H.grid.h**2),
                     "residual": sol.residual})
    return rows


def gaussian_source(grid: ScatterGrid, center=(0.0, 0.0), width: float = 1.0, parity: str | None = None) -> np.ndarray:
    """Gaussian source; ``parity="odd2"`` multiplies by ``x2`` (odd in ``x2``)."""
    X, Y = grid.mesh()
    g = np.exp(-((X - center[0]) ** 2 + (Y - center[1]) ** 2) / (2.0 * width**2))
    if parity == "odd2":
        g = g * Y
    return g.astype(complex)


def ring_source(grid: ScatterGrid, k0: float, dk: float = 0.12, envelope: float = 4.0) -> np.ndarray:
    """Radial source whose spectrum sits near ``|xi| = k0``.

    ``J0(k0 r) exp(-r^2 / (2 envelope^2))``: the Fourier transform is a ring
    of radius ``k0`` and width about ``1/envelope``.
    """
    from scipy.special import j0

    R = grid.radius()
    return (j0(k0 * R) * np.exp(-R**2 / (2.0 * envelope**2))).astype(complex)


# ---------------------------------------------------------------------------
# Besov norms and Theta weights
# ---------------------------------------------------------------------------

@dataclass
class BesovNorms:
    B: float
    B_star: float
    sequence: np.ndarray  # 2^{-m/2} ||F_m psi||
    shell_norms: np.ndarray  # ||F_m psi||

    def decays(self, min_drop: float = 0.3) -> bool:
        """Heuristic ``B*_0`` membership: the sequence drops >= ``min_drop`` per dyad."""
        s = self.sequence[1:]
        s = s[s > 0]
        return bool(np.all(s[1:] <= (1.0 - min_drop) * s[:-1])) if s.size > 1 else True


def besov_norms(psi, grid: ScatterGrid, mask=None, m_max: int | None = None) -> BesovNorms:
    """Dyadic-annulus norms ``B = sum 2^{m/2} |F_m psi|``, ``B* = sup 2^{-m/2} |F_m psi|``.

    ``mask`` restricts to a region (default: whole grid).
    """
    R = grid.radius()
    a = np.abs(np.asarray(psi)) ** 2 * grid.h**2
    if mask is not None:
        a = np.where(mask, a, 0.0)
    rmax = float(R[a > 0].max()) if np.any(a > 0) else 1.0
    if m_max is None:
        m_max = max(0, int(math.ceil(math.log2(max(rmax, 1.0)))) + 1)
    norms = []
    for m in range(m_max + 1):
        sel = R < 1.0 if m == 0 else (R >= 2.0 ** (m - 1)) & (R < 2.0**m)
        norms.append(math.sqrt(float(np.sum(a[sel]))))
    norms = np.array(norms)
    ms = np.arange(m_max + 1)
    B = float(np.sum(2.0 ** (ms / 2) * norms))
    seq = 2.0 ** (-ms / 2) * norms
    return BesovNorms(B, float(seq.max()), seq, norms)


def theta_weight(r, nu: int, delta: float):
    """``Theta = int_0^{r/2^nu} (1+s)^(-1-delta) ds = (1 - (1 + r/2^nu)^-delta) / delta``."""
    u = np.asarray(r, float) / 2.0**nu
    return -np.expm1(-delta * np.log1p(u)) / delta


def theta_derivative(r, nu: int, delta: float, k: int = 1):
    """``d^k Theta / dr^k``."""
    u = np.asarray(r, float) / 2.0**nu
    poch = 1.0
    for j in range(1, k):
        poch *= j + delta
    return (-1.0) ** (k - 1) * poch * 2.0 ** (-nu * k) * (1.0 + u) ** (-k - delta)


def theta_checks(delta: float = 0.1, n_r: int = 1000, nus=range(11), k_max: int = 4) -> dict:
    """Scan ``r in [1, 1e4]`` x ``nu`` for the weight inequalities.

    Constants: ``c1 = 2^(-1-delta)``, ``C = 1/delta``,
    ``c2 = min(1, delta) 2^(-1-delta)``,
    ``C_k = (1+delta)_(k-1) max(2^(1+delta), delta 2^-delta / (1 - 2^-delta))``.
    Returns the worst margins (all must be >= 0) and a boolean ``passed``.
    """
    r = np.geomspace(1.0, 1e4, n_r)
    c1 = 2.0 ** (-1.0 - delta)
    C = 1.0 / delta
    c2 = min(1.0, delta) * 2.0 ** (-1.0 - delta)
    Ck_base = max(2.0 ** (1.0 + delta), delta * 2.0**-delta / (1.0 - 2.0**-delta))
    margins = {"lower": np.inf, "upper": np.inf, "deriv_lower": np.inf, "deriv_upper": np.inf,
               "higher_sign": np.inf, "higher_upper": np.inf, "limit": np.inf}
    count = 0
    for nu in nus:
        T = theta_weight(r, nu, delta)
        T1 = theta_derivative(r, nu, delta, 1)
        tol = 1e-12
        margins["lower"] = min(margins["lower"], float(np.min(T / (c1 / 2.0**nu)) - 1.0 + tol))
        margins["upper"] = min(margins["upper"], float(np.min(1.0 - T / np.minimum(C, r / 2.0**nu))) + tol)
        low = c2 * np.minimum(2.0**nu, r) ** delta * r ** (-1.0 - delta) * T
        margins["deriv_lower"] = min(margins["deriv_lower"], float(np.min(T1 / low)) - 1.0 + tol)
        margins["deriv_upper"] = min(margins["deriv_upper"], float(np.min(1.0 - T1 * r / T)) + tol)
        for k in range(2, k_max + 1):
            Tk = theta_derivative(r, nu, delta, k)
            poch = 1.0
            for j in range(1, k):
                poch *= j + delta
            sgn = (-1.0) ** (k - 1) * Tk
            margins["higher_sign"] = min(margins["higher_sign"], float(np.min(sgn)))
            margins["higher_upper"] = min(margins["higher_upper"],
                                          float(np.min(1.0 - sgn / (poch * Ck_base * r ** (-k) * T))) + tol)
        count += r.size
    big = theta_weight(1e300, 0, delta)
    margins["limit"] = 1e-12 - abs(big * delta - 1.0)
    passed = all(v >= 0 for v in margins.values())
    return {"passed": passed, "margins": margins, "points": count}


# ---------------------------------------------------------------------------
# tabulated eikonal phase on the plane
# ---------------------------------------------------------------------------

class PolarPhase:
    """``S_phys``, ``grad S`` and ``Delta S`` tabulated on a polar grid.

    Built from a fan of flow trajectories, on which ``S = s`` exactly. Inside
    the flat radius ``S = k |x|``. With ``r_in < r_out`` the field is blended
    with the cap ``1 + k |x|^2 / (2 r_in)`` so that ``S >= 1`` and the
    derivatives stay bounded at the origin.
    """

    def __init__(self, field: EikonalField, r_max: float, *, n_dirs: int = 128, n_r: int = 400,
                 regularize: tuple | None = None, bundle: FlowBundle | None = None):
        self.field = field
        self.k = field.k
        self.r_max = float(r_max)
        self.r_flat = 0.95 * field.metric.flat_radius
        self.flat_only = field.metric.model.is_zero or self.r_max <= self.r_flat
        self.reg = regularize
        self.bundle = bundle
        if not self.flat_only:
            self._build(n_dirs, n_r)

    def _build(self, n_dirs, n_r):
        k = self.k
        s_top = k * self.r_max * 1.25 + 5.0
        s_eval = np.concatenate([np.linspace(0.5 * k * self.r_flat, s_top, int(8 * s_top) + 2)])
        if self.bundle is None:
            self.bundle = integrate_flows(self.field, circle_points(n_dirs), s_top, s_eval=s_eval, monitor=False)
        bundle = self.bundle
        s = bundle[0].s
        n_t = 2 * len(bundle)
        psi_t = 2.0 * math.pi * np.arange(n_t) / n_t - math.pi
        X = np.array([tr.positions for tr in bundle.trajectories])  # (n, K, 2)
        P = np.array([tr.momenta for tr in bundle.trajectories])
        Lp = np.array([tr.laplacian for tr in bundle.trajectories])
        K = s.size
        R_t = np.empty((K, n_t))
        P1_t = np.empty((K, n_t))
        P2_t = np.empty((K, n_t))
        L_t = np.empty((K, n_t))
        for j in range(K):
            psi = np.arctan2(X[:, j, 1], X[:, j, 0])
            r = np.hypot(X[:, j, 0], X[:, j, 1])
            o = np.argsort(psi)
            pe = np.concatenate([psi[o], [psi[o][0] + 2 * math.pi]])
            q = psi_t.copy()
            q = np.where(q < pe[0], q + 2 * math.pi, q)
            for arr, vals in ((R_t, r), (P1_t, P[:, j, 0]), (P2_t, P[:, j, 1]), (L_t, Lp[:, j])):
                v = vals[o]
                arr[j] = CubicSpline(pe, np.concatenate([v, v[:1]]), bc_type="periodic")(q)
        r_grid = np.linspace(self.r_flat, self.r_max * 1.2, n_r)
        tabs = {name: np.empty((n_r, n_t)) for name in ("S", "p1", "p2", "lap")}
        for t in range(n_t):
            rr = R_t[:, t]
            tabs["S"][:, t] = CubicSpline(rr, s)(r_grid)
            tabs["p1"][:, t] = CubicSpline(rr, P1_t[:, t])(r_grid)
            tabs["p2"][:, t] = CubicSpline(rr, P2_t[:, t])(r_grid)
            tabs["lap"][:, t] = CubicSpline(rr, L_t[:, t])(r_grid)
        # pad periodic direction for the tensor spline
        pad = 4
        psi_p = np.concatenate([psi_t[-pad:] - 2 * math.pi, psi_t, psi_t[:pad] + 2 * math.pi])
        self._spl = {}
        for name, tab in tabs.items():
            tp = np.concatenate([tab[:, -pad:], tab, tab[:, :pad]], axis=1)
            self._spl[name] = RectBivariateSpline(r_grid, psi_p, tp, kx=3, ky=3)

    def _raw(self, pts):
        pts = np.asarray(pts, float)
        r = np.hypot(pts[..., 0], pts[..., 1])
        rs = np.maximum(r, 1e-300)
        xh = pts / rs[..., None]
        S = self.k * r
        g = self.k * xh
        lap = self.k / rs
        if not self.flat_only:
            far = r > self.r_flat
            if np.any(far):
                psi = np.arctan2(pts[..., 1], pts[..., 0])[far]
                rr = r[far]
                S = S.copy()
                g = g.copy()
                lap = lap.copy()
                S[far] = self._spl["S"].ev(rr, psi)
                g[far, 0] = self._spl["p1"].ev(rr, psi)
                g[far, 1] = self._spl["p2"].ev(rr, psi)
                lap[far] = self._spl["lap"].ev(rr, psi)
        return S, g, lap, r

    def evaluate(self, pts):
        """``(S, grad S, Delta S)`` at points (..., 2), regularized if configured."""
        S, g, lap, r = self._raw(pts)
        if self.reg is None:
            return S, g, lap
        r_in, r_out = self.reg
        k = self.k
        pts = np.asarray(pts, float)
        rs = np.maximum(r, 1e-300)
        xh = pts / rs[..., None]
        cap = 1.0 + k * r**2 / (2.0 * r_in)
        dcap = k * pts / r_in
        lcap = 2.0 * k / r_in
        L = r_out - r_in
        t = (r - r_in) / L
        w = ramp(0, t)
        w1 = ramp(1, t) / L
        w2 = ramp(2, t) / L**2
        diff = S - cap
        S2 = (1 - w) * cap + w * S
        g2 = ((1 - w)[..., None] * dcap + w[..., None] * g + (diff * w1)[..., None] * xh)
        lap2 = ((1 - w) * lcap + w * np.where(r > 0, lap, 0.0)
                + 2.0 * w1 * np.sum(xh * (g - dcap), axis=-1) + diff * (w2 + w1 / rs))
        return S2, g2, lap2

    def S(self, pts):
        return self.evaluate(pts)[0]


# ---------------------------------------------------------------------------
# radiation observables
# ---------------------------------------------------------------------------

def radiation_observables(sol: ScatterSolution, phase: PolarPhase):
    """``gamma_j u = (-i d_j - d_j S) u`` and ``A u = grad S . gamma u - (i/2) Delta S u``."""
    h = sol.grid.h
    S, g, lap = phase.evaluate(sol.grid.points())
    u = sol.u

    def gamma(f, j):
        return -1j * grid_derivative(f, h, j) - g[..., j] * f

    gam = [gamma(u, 0), gamma(u, 1)]
    A = g[..., 0] * gam[0] + g[..., 1] * gam[1] - 0.5j * lap * u
    gg = [[gamma(gam[j], i) for j in range(2)] for i in range(2)]
    p1 = -1j * grid_derivative(u, h, 0)
    return {"gamma": gam, "A": A, "gammagamma": gg, "p1": p1, "S": S, "gradS": g}


def radiation_ratios(sol: ScatterSolution, phase: PolarPhase, beta: float, alpha: float, t: float) -> dict:
    """The three weighted ratios plus the ``p1`` contrast on the absorber-free square."""
    grid = sol.grid
    mask = grid.interior_mask()
    R = grid.radius()
    jx = np.sqrt(1.0 + R**2)
    obs = radiation_observables(sol, phase)
    vB = besov_norms(jx**beta * sol.v, grid, mask).B
    rA = besov_norms(jx**beta * obs["A"], grid, mask).B_star / vB
    rgg = max(besov_norms(jx**beta * obs["gammagamma"][i][j], grid, mask).B_star
              for i in range(2) for j in range(2)) / vB
    h2 = grid.h**2
    vw = math.sqrt(float(np.sum(np.where(mask, np.abs(jx ** (alpha + t) * sol.v) ** 2, 0.0)) * h2))
    rg = max(math.sqrt(float(np.sum(np.where(mask, np.abs(jx ** (alpha - t) * obs["gamma"][j]) ** 2, 0.0)) * h2))
             for j in range(2)) / vw
    rp1 = besov_norms(jx**beta * obs["p1"], grid, mask).B_star / vB
    return {"A": rA, "gammagamma": rgg, "gamma": rg, "p1": rp1}


def radiation_bound_ratio(field: EikonalField, model: PotentialModel | None, lam: float, beta: float, grids,
                          *, alpha: float | None = None, t: float = 0.75, source=None, eps: float = 0.0,
                          n_dirs: int = 128) -> list:
    """Ratio table across grids; see :func:`radiation_ratios`.

    Returns one dict per grid with keys ``L, A, gammagamma, gamma, p1``.
    """
    rho = field.metric.model.rho
    alpha = 0.9 * rho if alpha is None else alpha
    rows = []
    r_in = 1.05 * field.metric.cutoff_radius
    for grid in grids:
        H = build_hamiltonian(model, grid, lam)
        v = gaussian_source(grid) if source is None else source(grid)
        sol = solve_resolvent(H, lam, eps, v)
        phase = PolarPhase(field, math.sqrt(2.0) * grid.L, n_dirs=n_dirs, regularize=(r_in, 1.5 * r_in))
        row = {"L": grid.L, "n": grid.n}
        row.update(radiation_ratios(sol, phase, beta, alpha, t))
        rows.append(row)
    return rows


def radial_phase_slope(sol: ScatterSolution, r_lo: float, r_hi: float, n_dirs: int = 16) -> tuple[float, float]:
    """Mean ``d arg u / dr`` along rays and log-log slope of the angular mean of ``|u|``."""
    r = np.linspace(r_lo, r_hi, 200)
    dirs = circle_points(n_dirs, offset=0.1)
    pts = r[None, :, None] * dirs[:, None, :]
    u = sol.interpolate(pts)
    ph = np.unwrap(np.angle(u), axis=1)
    dph = float(np.mean(np.diff(ph, axis=1) / np.diff(r)[None, :]))
    amp = np.sqrt(np.mean(np.abs(u) ** 2, axis=0))
    slope = float(np.polyfit(np.log(r), np.log(amp), 1)[0])
    return dph, slope


# ---------------------------------------------------------------------------
# generalized Fourier transforms
# ---------------------------------------------------------------------------

@dataclass
class GFTProfile:
    """Angular profile on ``angles`` (launch or far-field directions)."""

    angles: np.ndarray
    values: np.ndarray
    lam: float
    trace: np.ndarray = field(default_factory=lambda: np.zeros(0))
    levels: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sections: np.ndarray | None = field(default=None, repr=False)

    def norm(self) -> float:
        return math.sqrt(float(np.mean(np.abs(self.values) ** 2) * 2.0 * math.pi))

    def __call__(self, angles) -> np.ndarray:
        """Periodic cubic interpolation in angle."""
        a = np.asarray(angles, float)
        th = self.angles
        o = np.argsort(th)
        te = np.concatenate([th[o], [th[o][0] + 2 * math.pi]])
        q = (a - te[0]) % (2 * math.pi) + te[0]
        vals = self.values[o]
        ve = np.concatenate([vals, vals[:1]])
        re = CubicSpline(te, ve.real, bc_type="periodic")(q)
        im = CubicSpline(te, ve.imag, bc_type="periodic")(q)
        return re + 1j * im


def _default_angles(n):
    return 2.0 * math.pi * np.arange(n) / n


def _sections(sol, phase, radii, angles):
    dirs = np.stack([np.cos(angles), np.sin(angles)], -1)
    pts = np.asarray(radii, float)[:, None, None] * dirs[None, :, :]
    u = sol.interpolate(pts)
    S = phase.S(pts)
    C = gft_constant(sol.lam)
    return C * np.sqrt(np.asarray(radii, float))[:, None] * np.exp(-1j * S) * u


def _l2_angles(f, n):
    return math.sqrt(float(np.sum(np.abs(f) ** 2, axis=-1) * 2.0 * math.pi / n))


def gft_radial(sol: ScatterSolution, phase: PolarPhase, radii, n_angles: int = 256) -> GFTProfile:
    """``C(lam) r^(1/2) e^{-iS} u(r omega)`` on circles; profile at the largest radius."""
    radii = np.sort(np.asarray(radii, float))
    if radii[-1] > sol.grid.inner + 1e-9:
        raise ValueError("radii must stay inside the absorber-free square")
    ang = _default_angles(n_angles)
    sec = _sections(sol, phase, radii, ang)
    trace = np.array([_l2_angles(sec[i + 1] - sec[i], n_angles) for i in range(radii.size - 1)])
    return GFTProfile(ang, sec[-1], sol.lam, trace, radii, sec)


def gft_cesaro(sol: ScatterSolution, phase: PolarPhase, rho_max: float, n_angles: int = 256,
               n_r: int | None = None) -> GFTProfile:
    """Cesaro mean ``rho^-1 int_0^rho`` of the radial sections (trapezoid in r)."""
    if rho_max > sol.grid.inner + 1e-9:
        raise ValueError("rho_max must stay inside the absorber-free square")
    if n_r is None:
        n_r = int(math.ceil(rho_max / (0.5 * sol.grid.h))) + 1
    r = np.linspace(0.0, rho_max, n_r)
    ang = _default_angles(n_angles)
    sec = _sections(sol, phase, r, ang)
    mean = np.trapezoid(sec, r, axis=0) / rho_max
    return GFTProfile(ang, mean, sol.lam, levels=np.array([rho_max]))


def gft_eikonal(sol: ScatterSolution, bundle: FlowBundle, s_levels) -> GFTProfile:
    """``(2 pi)^(-1/2) (f m^(1/2) e^{-iS} u)(Phi(s, omega))`` on the launch directions."""
    s_levels = np.sort(np.asarray(s_levels, float))
    omegas = bundle.omegas
    ang = np.arctan2(omegas[:, 1], omegas[:, 0]) % (2 * math.pi)
    profiles = []
    for s in s_levels:
        vals = []
        for tr in bundle.trajectories:
            j = int(np.argmin(np.abs(tr.s - s)))
            if abs(tr.s[j] - s) > 1e-9 * max(1.0, s):
                raise ValueError("level not sampled on the trajectories")
            x = tr.positions[j]
            if np.max(np.abs(x)) > sol.grid.inner * (1.0 + 1e-6):
                raise ValueError("level set leaves the absorber-free square")
            f = float(np.linalg.norm(tr.momenta[j]))
            vals.append(f * math.sqrt(tr.density[j]) * np.exp(-1j * s) * sol.interpolate(x[None, :])[0])
        profiles.append(np.array(vals) / math.sqrt(2.0 * math.pi))
    profiles = np.array(profiles)
    n = omegas.shape[0]
    trace = np.array([_l2_angles(profiles[i + 1] - profiles[i], n) for i in range(len(profiles) - 1)])
    return GFTProfile(ang, profiles[-1], sol.lam, trace, s_levels, profiles)


def fourier_on_circle(v, grid: ScatterGrid, k: float, angles) -> np.ndarray:
    """Unitary Fourier transform ``(2 pi)^-1 sum v(x) e^{-i k omega.x} h^2`` on ``|xi| = k``."""
    X, Y = grid.mesh()
    sel = np.abs(v) > 1e-14 * np.max(np.abs(v))
    xs, ys, vs = X[sel], Y[sel], v[sel]
    out = np.empty(len(angles), dtype=complex)
    for i, a in enumerate(angles):
        out[i] = np.sum(vs * np.exp(-1j * k * (np.cos(a) * xs + np.sin(a) * ys)))
    return out * grid.h**2 / (2.0 * math.pi)


def profile_correlation(a, b) -> float:
    """``|<a, b>| / (|a| |b|)`` on a common angle grid."""
    return float(abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b)))


def relative_l2(a, b) -> float:
    """``|a - b| / |b|`` in discrete L^2 of the angle grid."""
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b))


def diag_identity_defect(F_radial: GFTProfile, F_eik: GFTProfile, sphere_map: SphereMap) -> float:
    """``|F_radial - (D^(1/2) F_eik) o zeta_plus| / |F_radial|`` on the radial angles."""
    ang = F_radial.angles
    targets = np.stack([np.cos(ang), np.sin(ang)], -1)
    z = sphere_map.zeta(targets)
    za = np.arctan2(z[:, 1], z[:, 0]) % (2 * math.pi)
    node_ang = np.arctan2(sphere_map.nodes[:, 1], sphere_map.nodes[:, 0]) % (2 * math.pi)
    D = GFTProfile(node_ang, sphere_map.D_measure.astype(complex), F_eik.lam)(za).real
    g = np.sqrt(D) * F_eik(za)
    return relative_l2(g, F_radial.values)


# ---------------------------------------------------------------------------
# Parseval
# ---------------------------------------------------------------------------

@dataclass
class ParsevalResult:
    lams: np.ndarray
    spectral: np.ndarray  # pi^-1 Im <v, u_lam>
    radial: np.ndarray  # |F_cesaro(lam)|^2
    eikonal: np.ndarray  # |F_eik(lam)|^2
    lhs: float
    rhs_radial: float
    rhs_eik: float

    @property
    def defect_radial(self) -> float:
        return abs(self.rhs_radial - self.lhs) / abs(self.lhs)

    @property
    def defect_eik(self) -> float:
        return abs(self.rhs_eik - self.lhs) / abs(self.lhs)

    @property
    def recipe_agreement(self) -> float:
        return abs(self.rhs_radial - self.rhs_eik) / abs(self.rhs_radial)

    def to_dict(self) -> dict:
        return {"lambdas": self.lams.tolist(), "spectral": self.spectral.tolist(),
                "radial": self.radial.tolist(), "eikonal": self.eikonal.tolist(),
                "lhs": self.lhs, "rhs_radial": self.rhs_radial, "rhs_eik": self.rhs_eik,
                "defect_radial": self.defect_radial, "defect_eik": self.defect_eik}


def parseval_defect(model: PotentialModel | None, field_factory, lam_grid, grid: ScatterGrid, source=None, *,
                    eps: float = 0.0, rho_frac: float = 0.9, n_dirs: int = 128, n_angles: int = 256,
                    eikonal: bool = True) -> ParsevalResult:
    """Spectral mass of ``v`` over ``I`` against the integrated far-field norms.

    ``field_factory(lam)`` returns the :class:`EikonalField` at energy ``lam``.
    """
    lams = np.asarray(lam_grid, float)
    spec, rad, eik = [], [], []
    for lam in lams:
        H = build_hamiltonian(model, grid, lam)
        v = gaussian_source(grid) if source is None else source(grid)
        sol = solve_resolvent(H, lam, eps, v)
        spec.append(sol.inner(v, sol.u).imag / math.pi)
        field = field_factory(lam)
        phase = PolarPhase(field, math.sqrt(2.0) * grid.L, n_dirs=n_dirs)
        rho = rho_frac * grid.inner
        F = gft_cesaro(sol, phase, rho, n_angles)
        rad.append(F.norm() ** 2)
        if eikonal:
            s_level = eikonal_level(phase, rho)
            bundle = integrate_flows(field, circle_points(n_angles), s_level, s_eval=np.array([s_level]),
                                     monitor=False)
            Fe = gft_eikonal(sol, bundle, [s_level])
            eik.append(Fe.norm() ** 2)
        else:
            eik.append(np.nan)
    spec, rad, eik = map(np.array, (spec, rad, eik))
    return ParsevalResult(lams, spec, rad, eik, float(np.trapezoid(spec, lams)), float(np.trapezoid(rad, lams)),
                          float(np.trapezoid(eik, lams)))


def eikonal_level(phase: PolarPhase, rho: float, n_angles: int = 720) -> float:
    """Largest level ``s`` whose level set lies inside the disc of radius ``rho``."""
    ang = _default_angles(n_angles)
    pts = rho * np.stack([np.cos(ang), np.sin(ang)], -1)
    return float(np.min(phase.S(pts)))
