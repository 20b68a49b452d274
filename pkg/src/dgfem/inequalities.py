"""Ratio engines for the discrete inequalities and their implied constants.

Every engine returns an :class:`InequalityRecord`. Integrals of products of
P1 functions are evaluated exactly (sign decomposition of the elements), so
unconditional inequalities can be asserted without quadrature slack.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from functools import lru_cache
from math import factorial

import numpy as np
from scipy.optimize import minimize
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull
from scipy.spatial.distance import pdist

from . import fem
from . import geometry as geo
from .errors import InvalidOperandError
from .fem import FeFunction, LoadData
from .mesh import Triangulation

TOL = 1e-10
CSV_HEADER = ("name", "level", "lhs", "rhs", "ratio", "param_json")


@dataclass
class InequalityRecord:
    name: str
    level: int
    lhs: float
    rhs: float
    ratio: float = field(init=False)
    params: dict = field(default_factory=dict)
    status: str = "ok"          # ok | violation | skipped
    tolerance: float = 1e-12

    def __post_init__(self):
        self.lhs = float(self.lhs)
        self.rhs = float(self.rhs)
        if self.rhs > 0:
            self.ratio = self.lhs / self.rhs
        elif self.lhs <= self.tolerance:
            self.ratio = 0.0
        else:
            self.ratio = float("inf")
            self.status = "violation"

    @property
    def ok(self) -> bool:
        return self.status != "violation"

    def csv_row(self) -> list:
        params = dict(self.params, status=self.status)
        return [self.name, self.level, repr(self.lhs), repr(self.rhs), repr(self.ratio),
                json.dumps(_plain(params), sort_keys=True)]


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow(r.csv_row())
    return buf.getvalue()


def write_records(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(records_to_csv(records))


def uniformity(ratios, head: int = 3, factor: float = 2.0):
    """``(holds, max over all, max over the first head)`` for a level sequence."""
    r = np.asarray(ratios, dtype=float)
    if r.size == 0:
        return True, 0.0, 0.0
    top = float(r.max())
    first = float(r[:head].max())
    return bool(top <= factor * first), top, first


# --- supports and exact integrals -----------------------------------------------------

def support_cells(fn: FeFunction) -> np.ndarray:
    """Mask of closed elements with at least one nonzero vertex value."""
    return (fn.cell_values != 0).any(axis=1)


def _grad_sq(fn: FeFunction) -> np.ndarray:
    return np.einsum("mk,mk->m", fn.cell_gradients, fn.cell_gradients)


def _product_pieces(factors):
    """Split reference simplices so that every factor has a fixed sign on each piece.

    ``factors`` is a list of (B, n+1) vertex-value arrays. Returns piece
    barycentric rows (K, n+1, n+1), parent ids and signs of the product.
    """
    B, n1 = factors[0].shape
    bary = np.broadcast_to(np.eye(n1), (B, n1, n1)).copy()
    parent = np.arange(B)
    sign = np.ones(B)
    for a in factors:
        vals = np.einsum("kij,kj->ki", bary, a[parent])
        nb, npar, nsg = [], [], []
        for s in (1.0, -1.0):
            sub, p = geo.split_positive(s * vals)
            if p.size:
                nb.append(np.einsum("kij,kjl->kil", sub, bary[p]))
                npar.append(parent[p])
                nsg.append(s * sign[p])
        if not nb:
            return np.zeros((0, n1, n1)), np.zeros(0, dtype=int), np.zeros(0)
        bary, parent, sign = np.concatenate(nb), np.concatenate(npar), np.concatenate(nsg)
    return bary, parent, sign


def mean_abs_product(factors) -> np.ndarray:
    """Exact ``⨍_T |∏_j a_j|`` for affine factors given by vertex values (B, n+1)."""
    factors = [np.asarray(a, dtype=float) for a in factors]
    B = factors[0].shape[0]
    bary, parent, sign = _product_pieces(factors)
    out = np.zeros(B)
    if parent.size:
        frac = np.abs(np.linalg.det(bary))
        sub = [np.einsum("kij,kj->ki", bary, a[parent]) for a in factors]
        np.add.at(out, parent, sign * geo.integrate_products(frac, sub))
    return out


def prod_rearrange_ratio(factors) -> np.ndarray:
    """``∏_j max_T |a_j| / ⨍_T |∏_j a_j|`` per simplex (0 when both vanish).

    Both sides are invariant under affine maps, so for affine factors the
    ratio depends on vertex values only and not on the simplex shape.
    """
    factors = [np.asarray(a, dtype=float) for a in factors]
    top = np.prod([np.abs(a).max(axis=1) for a in factors], axis=0)
    mean = mean_abs_product(factors)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(mean > 0, top / mean, np.where(top > 0, np.inf, 0.0))


@lru_cache(maxsize=None)
def prod_rearrange_constant(n: int, m: int, samples: int = 20000, refine: int = 4, seed: int = 0) -> float:
    """Largest ratio of :func:`prod_rearrange_ratio` for m affine factors on an n-simplex.

    A vectorized random scan over vertex values picks starting points for a
    Nelder-Mead refinement of the smallest normalized mean.
    """
    rng = np.random.default_rng(seed)
    n1 = n + 1

    def normalized_mean(Z):
        a = Z.reshape(len(Z), m, n1)
        top = np.abs(a).max(axis=2)
        bad = (top == 0).any(axis=1)
        a = a / np.where(top > 0, top, 1.0)[..., None]
        out = mean_abs_product([a[:, j] for j in range(m)])
        return np.where(bad, 1.0, out)

    Z = rng.uniform(-1, 1, (samples, m * n1))
    Z[0] = np.tile(np.eye(n1)[0], m)
    vals = normalized_mean(Z)
    best = float(vals.min())
    for z0 in Z[np.argsort(vals)[:refine]]:
        res = minimize(lambda z: float(normalized_mean(z[None])[0]), z0, method="Nelder-Mead",
                       options={"xatol": 1e-9, "fatol": 1e-13, "maxiter": 400 * m * n1})
        best = min(best, float(res.fun))
    return 1.0 / best


# --- Caccioppoli ---------------------------------------------------------------------

def caccioppoli_ratio(u: FeFunction, c: float, eta: FeFunction, load: LoadData | None = None,
                      A=None, level: int = 0, sign: int = 1) -> InequalityRecord:
    """Energy of ``(±u - c)_+`` weighted by ``eta²`` against the cutoff terms.

    lhs = ∫|∇w|²η², rhs = ∫w²|∇η|² + (‖G‖_p² + ‖f‖_q²)(‖η‖²_{L^{2*}(S)} +
    ‖∇η‖²_{L²(S)}) |supp η ∩ S|^{2δ/n} with ``w = (±u - c)_+`` and ``S = supp w``.
    The squared gradient norm is used throughout.
    """
    fem._check_same_mesh(u, eta)
    if (eta.values < 0).any():
        raise InvalidOperandError("cutoff must be nonnegative")
    mesh = u.mesh
    n = mesh.dim
    load = LoadData() if load is None else load
    w = fem.nodal_positive_part(u if sign > 0 else -u, c)
    vol = mesh.volumes
    eta_sq = geo.integrate_power(vol, eta.cell_values, 2)
    lhs = float(_grad_sq(w) @ eta_sq)
    gw = _grad_sq(eta)
    main = float(gw @ geo.integrate_power(vol, w.cell_values, 2))
    S = support_cells(w)
    dom = load.dominated()
    data = fem.norm_lp(mesh, dom.G, dom.p(n), vector=True) ** 2 + fem.norm_lp(mesh, dom.f, dom.q(n)) ** 2
    two_star = LoadData.two_star(n)
    eta_star = float(geo.integrate_power(vol[S], eta.cell_values[S], int(two_star)).sum()) ** (2.0 / two_star)
    eta_grad = float(gw[S] @ vol[S])
    overlap = float(vol[S & support_cells(eta)].sum())
    tail = data * (eta_star + eta_grad) * overlap ** (2 * dom.delta / n) if overlap > 0 else 0.0
    params = {"c": float(c), "sign": int(sign), "main": main, "load_term": tail, "delta": dom.delta,
              "ratio_without_load": lhs / main if main > 0 else 0.0}
    if A is not None:
        lo, hi = A.certificate(mesh)
        params["contrast"] = hi / lo
    return InequalityRecord("caccioppoli", level, lhs, main + tail, params, tolerance=1e-12 * max(lhs, 1e-300))


# --- Poincaré --------------------------------------------------------------------

def poincare_patch_ratio(v: FeFunction, node: int, level: int = 0) -> InequalityRecord:
    """``∫_P|v| / (h_i ∫_P|∇v|)`` on the patch of ``node``; ``h_i`` is the largest diameter there."""
    mesh = v.mesh
    cells = mesh.cells_of_node(int(node))
    verts = np.unique(mesh.cells[cells])
    if not (v.values[verts] == 0).any():
        raise InvalidOperandError(f"function has no zero node on the closed patch of node {node}")
    vol = mesh.volumes[cells]
    lhs = float(geo.integrate_abs(vol, v.cell_values[cells]).sum())
    h = float(mesh.diameters[cells].max())
    rhs = h * float(np.linalg.norm(v.cell_gradients[cells], axis=1) @ vol)
    return InequalityRecord("poincare_patch", level, lhs, rhs, {"node": int(node), "h": h})


def set_diameter(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    try:
        pts = points[ConvexHull(points).vertices]
    except Exception:  # degenerate hull: fall back to all points
        pts = points
    return float(pdist(pts).max())


def zero_patch_fraction(v: FeFunction, cells: np.ndarray) -> float:
    """``|A ∩ ⋃_{v(x_i)=0} P_i| / |A|`` for the element set ``A``."""
    mesh = v.mesh
    touched = (v.cell_values[cells] == 0).any(axis=1)
    vol = mesh.volumes[cells]
    return float(vol[touched].sum() / vol.sum())


def _connected(mesh: Triangulation, cells: np.ndarray) -> bool:
    inc = mesh.incidence[cells]
    adj = inc @ inc.T
    return connected_components(adj, directed=False)[0] == 1


def poincare_vh_ratio(v: FeFunction, cells=None, gamma: float = 0.25, level: int = 0) -> InequalityRecord:
    """``∫_A|v| / (R ∫_A|∇v|)`` with ``R = diam A`` for nonnegative ``v``.

    Skipped when the zero-patch fraction of ``A`` is below ``gamma`` or ``A``
    is not connected.
    """
    mesh = v.mesh
    if (v.values < 0).any():
        raise InvalidOperandError("function must be nonnegative")
    cells = np.arange(mesh.num_cells) if cells is None else np.unique(np.asarray(cells, dtype=np.int64))
    frac = zero_patch_fraction(v, cells)
    R = set_diameter(mesh.points[np.unique(mesh.cells[cells])])
    vol = mesh.volumes[cells]
    lhs = float(vol @ v.cell_values[cells].mean(axis=1))
    rhs = R * float(np.linalg.norm(v.cell_gradients[cells], axis=1) @ vol)
    params = {"gamma_required": gamma, "gamma_measured": frac, "R": R, "cells": int(cells.size)}
    rec = InequalityRecord("poincare_vh", level, lhs, rhs, params)
    if frac < gamma or not _connected(mesh, cells):
        rec.status = "skipped"
        rec.params["reason"] = "zero-patch fraction below gamma" if frac < gamma else "region not connected"
    return rec


# --- weak-type ---------------------------------------------------------------------

def weak_type_constant(n: int) -> float:
    """Constant that makes the level-set bound hold for P1 data.

    On an element of the level set, the cutoff is 1 at one vertex and the
    truncation exceeds half the level gap at another, so the weighted energy
    is at least ``4 n!/(n+4)!`` of ``|T| (gap/2)²``.
    """
    return factorial(n + 4) / factorial(n)


def weak_type_check(u: FeFunction, c0: float, k: int, lam_inf: float, eta_k: FeFunction,
                    eta_k1: FeFunction, level: int = 0) -> InequalityRecord:
    """``|A_{k+1}|`` against ``2^{2k}/λ∞² ∫ |η_k (u - λ_k - c0)_+|²``.

    The record fails only when ``lhs > C·rhs`` with ``C = weak_type_constant(n)``;
    whether the inequality also holds with constant 1 is reported in
    ``params["unit_constant_holds"]``.
    """
    fem._check_same_mesh(u, eta_k, eta_k1)
    if lam_inf <= 0:
        raise InvalidOperandError("truncation cap must be positive")
    mesh = u.mesh
    lam_k = (1 - 2.0 ** -k) * lam_inf
    lam_k1 = (1 - 2.0 ** -(k + 1)) * lam_inf
    w_k = fem.nodal_positive_part(u, lam_k + c0).cell_values
    w_k1 = fem.nodal_positive_part(u, lam_k1 + c0).cell_values
    in_set = (eta_k1.cell_values > 0).any(axis=1) & (w_k1 > 0).any(axis=1)
    if not np.all(eta_k.cell_values[in_set].max(axis=1) == 1.0):
        raise InvalidOperandError("cutoffs are not nested: eta_k must reach 1 on every element where eta_k1 > 0")
    lhs = float(mesh.volumes[in_set].sum())
    ek = eta_k.cell_values
    energy = float(geo.integrate_products(mesh.volumes, [ek, ek, w_k, w_k]).sum())
    rhs = 4.0 ** k / lam_inf ** 2 * energy
    C = weak_type_constant(mesh.dim)
    rec = InequalityRecord("weak_type", level, lhs, rhs,
                           {"k": k, "c0": float(c0), "lambda_inf": float(lam_inf), "constant": C},
                           tolerance=0.0)
    rec.params["unit_constant_holds"] = bool(lhs <= rhs * (1 + TOL))
    if rec.status != "violation" and lhs > C * rhs * (1 + TOL):
        rec.status = "violation"
    return rec


# --- Jensen and interpolation stability ------------------------------------------

def _lattice(n: int, m: int) -> np.ndarray:
    pts = [np.array(b) / m for b in geo._compositions(m, n + 1)]
    return np.array(pts)


def jensen_audit(eta: FeFunction, q: float, samples: int = 6, level: int = 0) -> InequalityRecord:
    """``min (Πh(η^q) - η^q)`` over a barycentric lattice in every element.

    lhs is the largest negative defect (0 when the inequality holds).
    """
    if (eta.values < 0).any():
        raise InvalidOperandError("nodal values must be nonnegative")
    lam = _lattice(eta.mesh.dim, samples)
    vals = eta.cell_values @ lam.T
    interp = (eta.cell_values ** q) @ lam.T
    defect = interp - vals ** q
    worst = float(defect.min())
    scale = max(1.0, float((eta.values ** q).max(initial=0.0)))
    rec = InequalityRecord("jensen", level, max(0.0, -worst), 1e-12 * scale, {"q": q, "min_defect": worst})
    if rec.lhs > rec.rhs:
        rec.status = "violation"
    return rec


def interpolation_stability(mesh: Triangulation, g, grad_g, samples: int = 4, level: int = 0) -> InequalityRecord:
    """Largest per-element ``(max|g - Πh g| + h max|∇Πh g|) / (h max|∇g|)`` (sampled)."""
    lam = _lattice(mesh.dim, samples)
    X = np.einsum("qi,mik->mqk", lam, mesh.coords)
    gv = fem._call_field(g, X, (), "probe")
    gg = fem._call_field(grad_g, X, (mesh.dim,), "probe gradient")
    Pg = fem.interpolate(mesh, g)
    h = mesh.diameters
    top = np.abs(gv - Pg.cell_values @ lam.T).max(axis=1) + h * np.linalg.norm(Pg.cell_gradients, axis=1)
    bottom = h * np.linalg.norm(gg, axis=2).max(axis=1)
    ok = bottom > 0
    if not ok.any():
        return InequalityRecord("interpolation_stability", level, float(top.max()), 0.0)
    t = int(np.argmax(np.where(ok, top / np.where(ok, bottom, 1.0), -np.inf)))
    return InequalityRecord("interpolation_stability", level, top[t], bottom[t], {"element": t})


def jensen_and_stability_audit(eta: FeFunction, q: float, probe=None, probe_grad=None,
                               level: int = 0) -> InequalityRecord:
    rec = jensen_audit(eta, q, level=level)
    if probe is not None:
        rec.params["stability_ratio"] = interpolation_stability(eta.mesh, probe, probe_grad).ratio
    return rec
