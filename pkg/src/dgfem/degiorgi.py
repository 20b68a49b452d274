"""Level-set iteration tools: iteration lemmas, cutoffs, local bounds, oscillation and Hölder estimates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import conditions, fem
from . import geometry as geo
from .errors import FixedPointError, GeometryError, InvalidDataError, InvalidOperandError, UndefinedOscillationError
from .fem import CoefficientField, FeFunction, LoadData
from .inequalities import InequalityRecord
from .mesh import Ball, Triangulation, neighborhood, prime_neighborhood


# --- iteration lemmas ---------------------------------------------------------------

@dataclass(frozen=True)
class IterationParams:
    C: float = 1.0
    b: float = 2.0
    alpha: float = 1.0
    sigma: float = 0.5
    alpha1: float = 1.0
    alpha2: float = 0.5
    kappa: float = 0.0

    def __post_init__(self):
        if not (self.C > 0 and self.b > 1 and self.alpha > 0):
            raise ValueError("need C > 0, b > 1, alpha > 0")
        if not (0 < self.sigma < 1 and self.alpha1 > self.alpha2 > 0 and self.kappa >= 0):
            raise ValueError("need 0 < sigma < 1, alpha1 > alpha2 > 0, kappa >= 0")

    @property
    def kappa0(self) -> float:
        """Largest kappa for which the contraction ``(σ^α1 + κ)/σ^α2`` stays <= (1 + σ^(α1-α2))/2."""
        return 0.5 * (self.sigma ** self.alpha2 - self.sigma ** self.alpha1)


@dataclass
class GeometricBound:
    converges: bool
    threshold: float
    bounds: np.ndarray
    hypothesis_ok: bool
    first_violation: int | None
    within_bounds: bool


def fast_geometric_bound(a, C: float, b: float, alpha: float, gamma: float | None = None,
                         rtol: float = 1e-12) -> GeometricBound:
    """Check ``a_{k+1} <= C b^k a_k^{1+α}`` and the closed-form envelope.

    With ``gamma`` the recursion is ``a_{k+1} <= C b^k a_k (a_k/γ)^α`` and the
    sequence is rescaled by ``γ`` before applying the plain version.
    """
    a = np.asarray(a, dtype=float)
    if (a < 0).any():
        raise InvalidDataError("sequence must be nonnegative")
    g = 1.0 if gamma is None else float(gamma)
    s = a / g
    k = np.arange(len(s))
    first = None
    for i in range(len(s) - 1):
        if s[i + 1] > C * b ** i * s[i] ** (1 + alpha) * (1 + rtol):
            first = i
            break
    threshold = C ** (-1 / alpha) * b ** (-1 / alpha ** 2)
    bounds = g * C ** (-1 / alpha) * b ** (-(1 + k * alpha) / alpha ** 2)
    applies = first is None and s[0] <= threshold * (1 + rtol)
    within = bool(np.all(a <= bounds * (1 + rtol)))
    return GeometricBound(bool(applies), g * threshold, bounds, first is None, first, within)


@dataclass
class TelescopingBound:
    hypothesis_ok: bool
    first_violation: int | None
    envelope: np.ndarray       # envelope[k-1] bounds a_{k+1}, k >= 1
    within: bool


def telescoping_bound(c, a, rtol: float = 1e-12) -> TelescopingBound:
    """Check ``a_{k+1}² <= c_k (a_k - a_{k+1})`` and the ``1/√k`` envelope.

    ``a[0]`` and ``c[0]`` are ``a_1`` and ``c_1``.
    """
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float)
    if (a < 0).any() or (c < 0).any():
        raise InvalidDataError("sequences must be nonnegative")
    first = None
    for k in range(1, len(a)):
        if a[k] ** 2 > c[k - 1] * (a[k - 1] - a[k]) + rtol * max(a[k] ** 2, 1e-300):
            first = k
            break
    ks = np.arange(1, len(a))
    cmax = np.maximum.accumulate(c[: len(a) - 1]) if len(a) > 1 else np.zeros(0)
    env = np.sqrt(cmax * a[0] / ks) if len(a) > 1 else np.zeros(0)
    within = bool(np.all(a[1:] <= env * (1 + rtol) + 1e-300))
    return TelescopingBound(first is None, first, env, within)


@dataclass
class CalphaFit:
    radii: np.ndarray
    phi: np.ndarray
    theta: float
    C: float
    hypothesis_ok: bool
    kappa0: float
    c_theory: float | None
    c_measured: float
    envelope_ok: bool


def calpha_iteration_fit(phi, R1: float, params: IterationParams, C: float | None = None,
                         steps: int = 30, radii=None) -> CalphaFit:
    """Single-step hypothesis and the resulting envelope on a geometric grid.

    ``phi`` is a callable or an array of samples on ``R1 σ^j`` (``radii`` may
    be passed for an explicit grid). With ``C=None`` the smallest constant
    making the single-step hypothesis hold on the grid is measured. The
    envelope constant ``c`` in ``φ(r) <= c((r/R)^α2 φ(R) + C r^α2)`` is measured
    over all grid pairs and compared with ``σ^-α2/(1-ρ)``, ``ρ = (σ^α1+κ)/σ^α2``.
    """
    sig, a1, a2, kap = params.sigma, params.alpha1, params.alpha2, params.kappa
    if callable(phi):
        r = R1 * sig ** np.arange(steps + 1)
        v = np.asarray([float(phi(x)) for x in r])
    else:
        v = np.asarray(phi, dtype=float)
        r = R1 * sig ** np.arange(len(v)) if radii is None else np.asarray(radii, dtype=float)
        if not np.allclose(r[1:] / r[:-1], sig, rtol=1e-9):
            raise InvalidDataError("samples must lie on a geometric grid with ratio sigma")
    if (v < 0).any():
        raise InvalidDataError("phi must be nonnegative")
    if (np.diff(v) > 1e-14 * max(1.0, float(np.abs(v).max()))).any():
        raise InvalidDataError("phi must be nondecreasing in the radius")
    theta = sig ** a1 + kap
    excess = (v[1:] - theta * v[:-1]) / r[:-1] ** a2
    need = max(0.0, float(excess.max(initial=0.0)))
    C_used = need if C is None else float(C)
    hyp = bool(need <= C_used * (1 + 1e-12) + 1e-300)
    rho = theta / sig ** a2
    c_theory = sig ** (-a2) / (1 - rho) if rho < 1 else None
    cm = 0.0
    for j in range(len(r)):
        for i in range(j, len(r)):
            den = (r[i] / r[j]) ** a2 * v[j] + C_used * r[i] ** a2
            if den > 0:
                cm = max(cm, v[i] / den)
            elif v[i] > 0:
                cm = np.inf
    ok = c_theory is not None and hyp and cm <= c_theory * (1 + 1e-12)
    return CalphaFit(r, v, theta, C_used, hyp, params.kappa0, c_theory, float(cm), bool(ok))


# --- cutoffs --------------------------------------------------------------------------

SMOOTHSTEP_SLOPE = 1.875  # max |d/dt (10t³ - 15t⁴ + 6t⁵)| on [0, 1]


def cutoff_radii(R: float, k: int):
    """``(plateau, support)`` radii: value 1 on the smaller ball, 0 outside the larger."""
    return (1 + 2.0 ** -(k + 1)) * R, (1 + 2.0 ** -k) * R


def smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return 1.0 - t ** 3 * (10.0 - 15.0 * t + 6.0 * t ** 2)


def bump(x, x0, R: float, k: int) -> np.ndarray:
    r_in, r_out = cutoff_radii(R, k)
    d = np.linalg.norm(np.atleast_2d(x) - np.asarray(x0, dtype=float), axis=1)
    return smoothstep((d - r_in) / (r_out - r_in))


def bump_gradient_bound(R: float, k: int) -> float:
    r_in, r_out = cutoff_radii(R, k)
    return SMOOTHSTEP_SLOPE / (r_out - r_in)


def boundary_distance(mesh: Triangulation, x0) -> float:
    F = mesh.boundary_facets
    return float(geo.point_simplex_distance(np.asarray(x0, dtype=float), mesh.points[F]).min())


def check_ball(mesh: Triangulation, x0, R: float, factor: float = 2.0, interior: bool = True) -> int:
    """Validate ``x0 ∈ T``, ``R >= h_T`` and (interior) ``B(x0, factor R) ⊂ Ω``; returns T."""
    T = int(mesh.locate(np.asarray(x0, dtype=float))[0])
    if T < 0:
        raise GeometryError(f"center {tuple(np.ravel(x0))} lies outside the mesh")
    if R < mesh.diameters[T] * (1 - 1e-12):
        raise GeometryError(f"radius {R:g} below the local mesh size {mesh.diameters[T]:g}")
    if interior and boundary_distance(mesh, x0) < factor * R * (1 - 1e-12):
        raise GeometryError(f"ball of radius {factor * R:g} leaves the domain; use the boundary variant")
    return T


def build_cutoff(mesh: Triangulation, x0, R: float, k: int, interior: bool = True,
                 check: bool = True) -> FeFunction:
    """Nodal interpolant of the radial bump with plateau ``(1+2^-(k+1))R`` and support ``(1+2^-k)R``."""
    if check:
        check_ball(mesh, x0, R, interior=interior)
    return FeFunction(mesh, bump(mesh.points, x0, R, k))


@dataclass
class CutoffReport:
    k: int
    gradient_constant: float     # max|∇η_k| R / 2^k
    nested: bool                 # max_T η_{k+1} > 0  ⇒  max_T η_k = 1
    step_constant: float         # max_T |∇η_{k+1}| / (2^{k+1} R^-1 max_T η_k)
    weighted_constant: float     # max_T ⨍a²|∇η_{k+1}|² / (R^-2 4^{k+1} ⨍a²η_k²)
    values_in_range: bool


def check_cutoff(mesh: Triangulation, x0, R: float, k: int, a=None, interior: bool = True) -> CutoffReport:
    """Measure the gradient bound and the nesting properties of consecutive cutoffs.

    ``a`` are P1 vertex values per element (M, n+1) used as polynomial weight;
    default is a fixed non-constant affine function.
    """
    e0 = build_cutoff(mesh, x0, R, k, interior=interior)
    e1 = build_cutoff(mesh, x0, R, k + 1, check=False)
    g0 = np.linalg.norm(e0.cell_gradients, axis=1)
    g1 = np.linalg.norm(e1.cell_gradients, axis=1)
    grad_const = float(g0.max()) * R / 2.0 ** k
    touched = e1.cell_values.max(axis=1) > 0
    nested = bool(np.all(e0.cell_values[touched].max(axis=1) == 1.0))
    m0 = e0.cell_values.max(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where(g1 > 0, g1 / (2.0 ** (k + 1) / R * m0), 0.0)
    if a is None:
        a = 1.0 + mesh.points @ np.linspace(0.3, 0.7, mesh.dim)
        a = a[mesh.cells]
    vol = mesh.volumes
    top = g1 ** 2 * geo.integrate_power(vol, a, 2) / vol
    bot = 4.0 ** (k + 1) / R ** 2 * geo.integrate_products(vol, [a, a, e0.cell_values, e0.cell_values]) / vol
    with np.errstate(divide="ignore", invalid="ignore"):
        weighted = np.where(top > 0, top / bot, 0.0)
    in_range = bool(e0.values.min() >= 0 and e0.values.max() <= 1)
    return CutoffReport(k, grad_const, nested, float(step.max()), float(weighted.max()), in_range)


# --- level-set sequence ----------------------------------------------------------------

def data_size(mesh: Triangulation, load: LoadData) -> float:
    """``‖G‖_p² + ‖f‖_q²`` for the dominated load ``(|f|, G)``."""
    dom = load.dominated()
    n = mesh.dim
    return fem.norm_lp(mesh, dom.G, dom.p(n), vector=True) ** 2 + fem.norm_lp(mesh, dom.f, dom.q(n)) ** 2


@dataclass
class DeGiorgiState:
    x0: tuple
    R: float
    c: float
    lam_inf: float
    levels: np.ndarray = field(repr=False)        # λ_k
    cutoffs: list = field(repr=False)              # η_k
    set_measures: np.ndarray = field(repr=False)   # |A_k|
    energies: np.ndarray = field(repr=False)       # a_k
    mu: float | None = None
    R_k: np.ndarray | None = None

    @property
    def radii(self) -> np.ndarray:
        return (1 + 2.0 ** -np.arange(len(self.levels))) * self.R


def de_giorgi_state(u: FeFunction, x0, R: float, c: float, load: LoadData | None = None,
                    lam_inf: float | None = None, kmax: int = 8, interior: bool = True) -> DeGiorgiState:
    """Truncation levels, cutoffs, level-set measures and energies for k = 0..kmax.

    Without ``lam_inf`` the cap is ``sqrt(max(⨍_{Ω(2B)} (u-c)_+², data R^{2δ}))``.
    """
    mesh = u.mesh
    check_ball(mesh, x0, R, interior=interior)
    load = LoadData() if load is None else load
    region = neighborhood(mesh, Ball(x0, 2 * R))
    vol = mesh.volumes
    area = float(vol[region].sum())
    if lam_inf is None:
        w = fem.nodal_positive_part(u, c).cell_values[region]
        mean = float(geo.integrate_power(vol[region], w, 2).sum()) / area
        lam_inf = float(np.sqrt(max(mean, data_size(mesh, load) * R ** (2 * load.delta))))
        if lam_inf == 0:
            lam_inf = 1.0
    ks = np.arange(kmax + 1)
    lam = (1 - 2.0 ** -ks) * lam_inf
    etas, meas, en = [], [], []
    for k in ks:
        eta = build_cutoff(mesh, x0, R, int(k), check=False)
        w = fem.nodal_positive_part(u, lam[k] + c).cell_values
        e = eta.cell_values
        inside = (e > 0).any(axis=1) & (w > 0).any(axis=1)
        etas.append(eta)
        meas.append(float(vol[inside].sum()))
        en.append(float(geo.integrate_products(vol[region], [e[region], e[region], w[region], w[region]]).sum()) / area)
    return DeGiorgiState(tuple(np.ravel(x0).astype(float)), float(R), float(c), float(lam_inf), lam, etas,
                         np.array(meas), np.array(en))


# --- local bounds -----------------------------------------------------------------------

def local_sup_bound_check(u: FeFunction, x0, R: float, c: float, load: LoadData | None = None,
                          level: int = 0, interior: bool = True) -> InequalityRecord:
    """``max_{Ω'(B(x0,R))}(u-c)_+²`` against ``⨍_{Ω(B(x0,2R))}(u-c)_+² + data R^{2δ}``."""
    mesh = u.mesh
    check_ball(mesh, x0, R, interior=interior)
    load = LoadData() if load is None else load
    w = fem.nodal_positive_part(u, c)
    prime = prime_neighborhood(mesh, Ball(x0, R))
    lhs = float((w.values[np.unique(mesh.cells[prime])] ** 2).max(initial=0.0))
    region = neighborhood(mesh, Ball(x0, 2 * R))
    vol = mesh.volumes[region]
    mean = float(geo.integrate_power(vol, w.cell_values[region], 2).sum() / vol.sum())
    tail = data_size(mesh, load) * R ** (2 * load.delta)
    return InequalityRecord("local_sup", level, lhs, mean + tail,
                            {"x0": list(np.ravel(x0)), "R": R, "c": float(c), "mean": mean, "load_term": tail})


def neighbor_value_bound_check(v: FeFunction, element: int, i: int, j: int, A: CoefficientField,
                               load: LoadData | None = None, system=None, level: int = 0) -> InequalityRecord:
    """``v(x_j) <= 1 - τ^N + τ^N v(x_i) + Σ e_k`` along the acute path from ``x_i`` to ``x_j``.

    ``e_k = max(b_k, 0)/K_kk`` are the load terms of the path nodes; their sum
    divided by ``(‖F‖_p + ‖f‖_q) h_T^δ`` is reported as the measured constant.
    """
    mesh = v.mesh
    if v.values.min() < -1e-12 or v.values.max() > 1 + 1e-12:
        raise InvalidOperandError("function values must lie in [0, 1]")
    verts = mesh.cells[int(element)]
    if mesh.boundary_mask[verts].any():
        raise GeometryError(f"element {element} touches the boundary")
    load = LoadData() if load is None else load
    if system is None:
        system = fem.assemble(mesh, A, load)
    path = conditions.acute_path(mesh, A, element, i, j, K=system.K)
    params = {"element": int(element), "i": int(i), "j": int(j)}
    if not path.found:
        rec = InequalityRecord("neighbor_value", level, 0.0, 0.0, params)
        rec.status = "skipped"
        rec.params["reason"] = "no acute path"
        return rec
    tau, N = path.tau, path.length
    diag = system.K.diagonal()
    steps = np.asarray(path.nodes[1:], dtype=np.int64)
    e = np.maximum(system.b[steps], 0.0) / diag[steps] if N else np.zeros(0)
    rhs = 1 - tau ** N + tau ** N * v.values[i] + float(e.sum())
    n = mesh.dim
    size = (fem.norm_lp(mesh, load.F, load.p(n), vector=True) + fem.norm_lp(mesh, load.f, load.q(n)))
    scale = size * mesh.diameters[int(element)] ** load.delta
    params.update(tau=tau, N=N, load_sum=float(e.sum()), constant=float(e.sum() / scale) if scale > 0 else 0.0)
    rec = InequalityRecord("neighbor_value", level, float(v.values[j]), rhs, params)
    if rec.lhs > rhs + 1e-10:
        rec.status = "violation"
    return rec


# --- oscillation ------------------------------------------------------------------------

def _ball_extrema(u: FeFunction, x0: np.ndarray, r: float, cells: np.ndarray):
    """Exact max and min of ``u`` over ``B(x0, r) ∩ T`` for each cell in ``cells``."""
    mesh = u.mesh
    n = mesh.dim
    P = mesh.coords[cells]
    V = u.cell_values[cells]
    g = u.cell_gradients[cells]
    M = len(cells)
    cands = [P]                                        # vertices
    for a in range(n + 1):                             # edges ∩ sphere
        for b in range(a + 1, n + 1):
            d = P[:, b] - P[:, a]
            f = P[:, a] - x0
            A2 = np.einsum("mk,mk->m", d, d)
            B2 = 2 * np.einsum("mk,mk->m", d, f)
            C2 = np.einsum("mk,mk->m", f, f) - r * r
            disc = B2 * B2 - 4 * A2 * C2
            s = np.sqrt(np.maximum(disc, 0.0))
            for sg in (-1.0, 1.0):
                t = np.clip((-B2 + sg * s) / (2 * A2), 0.0, 1.0)
                cands.append((P[:, a] + t[:, None] * d)[:, None, :])
    gn = np.linalg.norm(g, axis=1)
    dirn = np.where(gn[:, None] > 0, g / np.where(gn > 0, gn, 1.0)[:, None], 0.0)
    for sg in (-1.0, 1.0):                             # sphere critical points
        cands.append((x0 + sg * r * dirn)[:, None, :])
    if n == 3:                                         # face circles
        for face in ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)):
            F = P[:, face]
            nu = np.cross(F[:, 1] - F[:, 0], F[:, 2] - F[:, 0])
            nu /= np.linalg.norm(nu, axis=1)[:, None]
            dist = np.einsum("mk,mk->m", x0 - F[:, 0], nu)
            centre = x0 - dist[:, None] * nu
            rho = np.sqrt(np.maximum(r * r - dist ** 2, 0.0))
            gt = g - np.einsum("mk,mk->m", g, nu)[:, None] * nu
            gtn = np.linalg.norm(gt, axis=1)
            dt = np.where(gtn[:, None] > 0, gt / np.where(gtn > 0, gtn, 1.0)[:, None], 0.0)
            for sg in (-1.0, 1.0):
                cands.append((centre + sg * rho[:, None] * dt)[:, None, :])
    X = np.concatenate(cands, axis=1)                  # (M, K, n)
    K = X.shape[1]
    lam = geo.barycentric_coordinates(X.reshape(-1, n), np.repeat(P, K, axis=0)).reshape(M, K, n + 1)
    h = mesh.diameters[cells][:, None]
    inside = (lam >= -1e-12).all(axis=2) & (np.linalg.norm(X - x0, axis=2) <= r * (1 + 1e-12) + 1e-14 * h)
    vals = np.einsum("mki,mi->mk", np.clip(lam, 0.0, None), V)
    hi = np.where(inside, vals, -np.inf).max(axis=1)
    lo = np.where(inside, vals, np.inf).min(axis=1)
    return hi, lo


def oscillation(u: FeFunction, region) -> float:
    """``sup - inf`` of ``u`` over a closed :class:`Ball` (exact) or a set of elements."""
    mesh = u.mesh
    if isinstance(region, Ball):
        x0 = np.asarray(region.center, dtype=float)
        d = geo.point_simplex_distance(x0, mesh.coords)
        cells = np.nonzero(d <= region.radius)[0]
        if cells.size == 0:
            raise UndefinedOscillationError("ball does not meet the mesh")
        hi, lo = _ball_extrema(u, x0, region.radius, cells)
        ok = np.isfinite(hi)
        if not ok.any():
            raise UndefinedOscillationError("ball does not meet the mesh")
        return float(hi[ok].max() - lo[ok].min())
    cells = np.unique(np.asarray(list(region), dtype=np.int64))
    if cells.size == 0:
        raise UndefinedOscillationError("empty element set")
    vals = u.cell_values[cells]
    return float(vals.max() - vals.min())


@dataclass
class OscillationReport:
    radii: np.ndarray
    osc: np.ndarray
    window: tuple
    alpha: float | None
    alpha_raw: float | None
    constant: float | None
    contractions: np.ndarray
    theta: float | None
    alpha_interior: float | None = None
    alpha_boundary: float | None = None


def _fit(radii, osc, window):
    sel = (radii >= window[0] * (1 - 1e-12)) & (radii <= window[1] * (1 + 1e-12)) & (osc > 0)
    if sel.sum() < 2:
        return None, None
    slope, icpt = np.polyfit(np.log(radii[sel]), np.log(osc[sel]), 1)
    return float(slope), float(np.exp(icpt))


def local_mesh_size(mesh: Triangulation, x0) -> float:
    d = geo.point_simplex_distance(np.asarray(x0, dtype=float), mesh.coords)
    return float(mesh.diameters[d <= 1e-12 * mesh.diameters.max()].max())


def oscillation_decay_study(u: FeFunction, x0, R0: float, ratio: float = 0.5, steps: int | None = None,
                            boundary_center=None) -> OscillationReport:
    """Oscillation on ``B(x0, R0 ratio^j)`` and a log-log fit of the decay exponent.

    The fit uses radii in ``[2 h, R0/2]`` with ``h`` the largest diameter among
    elements touching ``x0``. ``theta`` is one minus the median single-step
    contraction factor in that window.
    """
    mesh = u.mesh
    x0 = np.asarray(x0, dtype=float)
    h = local_mesh_size(mesh, x0)
    if steps is None:
        steps = max(2, int(np.ceil(np.log(h / (2 * R0)) / np.log(ratio))) + 1)
    radii = R0 * ratio ** np.arange(steps + 1)
    osc = np.array([oscillation(u, Ball(x0, r)) for r in radii])
    window = (2 * h, R0 / 2)
    raw, const = _fit(radii, osc, window)
    sel = (radii[1:] >= window[0] * (1 - 1e-12)) & (radii[:-1] <= window[1] * (1 + 1e-12)) & (osc[:-1] > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        contr = np.where(osc[:-1] > 0, osc[1:] / osc[:-1], 0.0)
    theta = float(1 - np.median(contr[sel])) if sel.any() else None
    alpha = None if raw is None else float(min(max(raw, 0.0), 1.0))
    rep = OscillationReport(radii, osc, window, alpha, raw, const, contr, theta, alpha_interior=alpha)
    if boundary_center is not None:
        b = oscillation_decay_study(u, boundary_center, R0, ratio=ratio)
        rep.alpha_boundary = b.alpha
    return rep


# --- Hölder seminorm -----------------------------------------------------------------------

def _bin_level(P, lo, span, level):
    """Morton key of the bin containing each point; the parent key is ``key >> n``."""
    n = P.shape[1]
    ij = np.minimum(((P - lo) / span * (1 << level)).astype(np.int64), (1 << level) - 1)
    key = np.zeros(len(P), dtype=np.int64)
    for bit in range(level):
        for d in range(n):
            key |= ((ij[:, d] >> bit) & 1) << (bit * n + (n - 1 - d))
    return key


def _pair_expand(na, nb, same, strict=False):
    """Enumerate (ia, ib) index pairs for blocks of sizes na x nb; ia <= ib (ia < ib if strict) when same."""
    total = na * nb
    owner = np.repeat(np.arange(len(na)), total)
    off = np.arange(int(total.sum())) - np.repeat(np.cumsum(total) - total, total)
    ia = off // nb[owner]
    ib = off % nb[owner]
    keep = ~same[owner] | ((ia < ib) if strict else (ia <= ib))
    return owner[keep], ia[keep], ib[keep]


def pairwise_holder_sup(P: np.ndarray, V: np.ndarray, alpha: float, chunk: int = 2_000_000) -> float:
    """Exact ``max_{i≠j} |V_i - V_j| / |P_i - P_j|^α`` by bin branch and bound."""
    P = np.asarray(P, dtype=float)
    V = np.asarray(V, dtype=float)
    N, n = P.shape
    if N < 2 or np.ptp(V) == 0:
        return 0.0
    tree = cKDTree(P)
    d, idx = tree.query(P, k=min(9, N))
    d, idx = d[:, 1:], idx[:, 1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(d > 0, np.abs(V[:, None] - V[idx]) / d ** alpha, 0.0)
    best = float(r.max())
    lo = P.min(axis=0)
    span = float(np.ptp(P, axis=0).max()) * (1 + 1e-9)
    hmin = float(d[:, 0][d[:, 0] > 0].min()) if (d[:, 0] > 0).any() else span
    L = int(np.clip(np.ceil(np.log2(span / hmin)) + 1, 1, 20 if n == 2 else 14))

    # per-level bins: ids, value range, bounding boxes, children ranges
    order = np.argsort(_bin_level(P, lo, span, L), kind="stable")
    P, V = P[order], V[order]
    levels = []
    for lev in range(L + 1):
        keys = _bin_level(P, lo, span, lev)
        uk, inv = np.unique(keys, return_inverse=True)
        B = len(uk)
        vmax = np.full(B, -np.inf)
        vmin = np.full(B, np.inf)
        np.maximum.at(vmax, inv, V)
        np.minimum.at(vmin, inv, V)
        bmin = np.full((B, n), np.inf)
        bmax = np.full((B, n), -np.inf)
        for k in range(n):
            np.minimum.at(bmin[:, k], inv, P[:, k])
            np.maximum.at(bmax[:, k], inv, P[:, k])
        argmax = np.full(B, -1)
        argmin = np.full(B, -1)
        hit = V == vmax[inv]
        argmax[inv[hit]] = np.nonzero(hit)[0]
        hit = V == vmin[inv]
        argmin[inv[hit]] = np.nonzero(hit)[0]
        levels.append(dict(keys=uk, inv=inv, vmax=vmax, vmin=vmin, bmin=bmin, bmax=bmax,
                           argmax=argmax, argmin=argmin))
    for lev in range(L):
        child = levels[lev + 1]
        parent = np.searchsorted(levels[lev]["keys"], child["keys"] >> n)
        start = np.searchsorted(parent, np.arange(len(levels[lev]["keys"])))
        count = np.bincount(parent, minlength=len(levels[lev]["keys"]))
        levels[lev]["child_start"], levels[lev]["child_count"] = start, count
    pts_start = np.searchsorted(levels[L]["inv"], np.arange(len(levels[L]["keys"])))
    pts_count = np.bincount(levels[L]["inv"], minlength=len(levels[L]["keys"]))

    def ratio_of(i, j):
        dd = np.linalg.norm(P[i] - P[j], axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(dd > 0, np.abs(V[i] - V[j]) / dd ** alpha, 0.0)

    a = np.zeros(1, dtype=np.int64)
    b = np.zeros(1, dtype=np.int64)
    for lev in range(L + 1):
        S = levels[lev]
        diff = np.maximum(S["vmax"][a] - S["vmin"][b], S["vmax"][b] - S["vmin"][a])
        gap = np.maximum(0.0, np.maximum(S["bmin"][a] - S["bmax"][b], S["bmin"][b] - S["bmax"][a]))
        gap = np.linalg.norm(gap, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            bound = np.where(diff > 0, np.where(gap > 0, diff / gap ** alpha, np.inf), 0.0)
        if a.size:
            cand = np.concatenate([ratio_of(S["argmax"][a], S["argmin"][b]),
                                   ratio_of(S["argmax"][b], S["argmin"][a])])
            best = max(best, float(cand.max(initial=0.0)))
        keep = bound > best
        a, b = a[keep], b[keep]
        if a.size == 0:
            return best
        if lev < L:
            cs, cc = S["child_start"], S["child_count"]
            owner, ia, ib = _pair_expand(cc[a], cc[b], a == b)
            a, b = cs[a][owner] + ia, cs[b][owner] + ib
    # finest level: explicit point pairs, chunked
    na, nb = pts_count[a], pts_count[b]
    work = np.cumsum(na * nb)
    lo_i = 0
    while lo_i < len(a):
        hi_i = int(np.searchsorted(work, (work[lo_i - 1] if lo_i else 0) + chunk, side="right"))
        hi_i = max(hi_i, lo_i + 1)
        sa, sb = a[lo_i:hi_i], b[lo_i:hi_i]
        owner, ia, ib = _pair_expand(pts_count[sa], pts_count[sb], sa == sb, strict=True)
        i = pts_start[sa][owner] + ia
        j = pts_start[sb][owner] + ib
        if i.size:
            best = max(best, float(ratio_of(i, j).max()))
        lo_i = hi_i
    return best


def holder_seminorm(u: FeFunction, alpha: float, mode: str = "global") -> float:
    """``sup |u(x) - u(y)| / |x - y|^α`` over nodes and element barycenters.

    This is a lower estimate of the seminorm of ``u``; the supremum over the
    chosen point set is computed exactly. ``mode="interior"`` drops boundary
    nodes and barycenters of elements touching the boundary.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    mesh = u.mesh
    P = np.concatenate([mesh.points, mesh.barycenters])
    V = np.concatenate([u.values, u.cell_values.mean(axis=1)])
    if mode == "interior":
        keep = np.concatenate([~mesh.boundary_mask, ~mesh.boundary_mask[mesh.cells].any(axis=1)])
        P, V = P[keep], V[keep]
    elif mode != "global":
        raise ValueError("mode must be 'global' or 'interior'")
    return pairwise_holder_sup(P, V, alpha)


# --- quasilinear driver ------------------------------------------------------------------

@dataclass
class QuasilinearResult:
    u: FeFunction
    coefficient: CoefficientField     # a(x, u, ∇u) frozen at the last iterate
    iterations: int
    changes: list
    residuals: list                   # frozen-coefficient Galerkin defect of each iterate


def freeze_coefficient(a, u: FeFunction, bounds=None) -> np.ndarray:
    mesh = u.mesh
    vals = np.asarray(a(mesh.barycenters, u.cell_values.mean(axis=1), u.cell_gradients), dtype=float).reshape(-1)
    if vals.shape[0] != mesh.num_cells or not np.all(np.isfinite(vals)):
        raise InvalidDataError("coefficient must return one finite value per element")
    if (vals <= 0).any():
        t = int(np.nonzero(vals <= 0)[0][0])
        raise InvalidDataError(f"coefficient not positive on element {t}", t)
    if bounds is not None and (vals.min() < bounds[0] * (1 - 1e-12) or vals.max() > bounds[1] * (1 + 1e-12)):
        raise InvalidDataError("coefficient leaves the certified bounds")
    return vals


def _frozen(vals: np.ndarray) -> CoefficientField:
    return CoefficientField.per_cell(vals, name="frozen")


def nonlinear_defect(u: FeFunction, a, load: LoadData) -> float:
    """Relative Galerkin defect of the nonlinear equation at ``u``."""
    system = fem.assemble(u.mesh, _frozen(freeze_coefficient(a, u)), load)
    return system.galerkin_defect(u)


def solve_quasilinear(mesh: Triangulation, a, load: LoadData, bounds=None, damping: float = 0.5,
                      tol: float = 1e-8, maxiter: int = 200) -> QuasilinearResult:
    """Damped Picard iteration for ``-div(a(x, u, ∇u)∇u) = f - div F`` with ``u = 0`` on the boundary.

    ``a(x, u, g)`` receives element barycenters (M, n), mean values (M,) and
    gradients (M, n). The first iterate solves the problem with ``a`` frozen
    at the zero state; iteration stops once the nodal sup-change is below
    ``tol``. A final undamped solve with the coefficient frozen at the last
    iterate is returned, so the result is an exact discrete solution of that
    frozen linear problem.
    """
    b_sys = None

    def linear(vals):
        nonlocal b_sys
        system = fem.assemble(mesh, _frozen(vals), load)
        b_sys = system
        return fem.solve_dirichlet(system), system

    u, _ = linear(freeze_coefficient(a, fem.zero(mesh), bounds))
    changes, residuals = [], []
    for it in range(1, maxiter + 1):
        vals = freeze_coefficient(a, u, bounds)
        s, system = linear(vals)
        residuals.append(system.galerkin_defect(u))
        new = FeFunction(mesh, (1 - damping) * u.values + damping * s.values)
        change = float(np.abs(new.values - u.values).max(initial=0.0))
        changes.append(change)
        u = new
        if change <= tol:
            vals = freeze_coefficient(a, u, bounds)
            final, _ = linear(vals)
            return QuasilinearResult(final, _frozen(vals), it, changes, residuals)
    raise FixedPointError(f"no fixed point within {maxiter} iterations (last change {changes[-1]:.3e})",
                          changes)
