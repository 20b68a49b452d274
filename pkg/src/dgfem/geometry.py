"""Batched simplex geometry and exact integration of P1 products.

All routines work on stacks of simplices given as arrays of vertex
coordinates with shape ``(M, n + 1, n)``.
"""
from __future__ import annotations

import itertools
from functools import lru_cache
from math import factorial

import numpy as np


def edge_matrix(P: np.ndarray) -> np.ndarray:
    """Columns ``x_k - x_0`` for k = 1..n, shape ``(M, n, n)``."""
    return np.swapaxes(P[:, 1:, :] - P[:, :1, :], 1, 2)


def signed_volumes(P: np.ndarray) -> np.ndarray:
    n = P.shape[2]
    return np.linalg.det(edge_matrix(P)) / factorial(n)


def diameters(P: np.ndarray) -> np.ndarray:
    k = P.shape[1]
    best = np.zeros(P.shape[0])
    for a, b in itertools.combinations(range(k), 2):
        best = np.maximum(best, np.linalg.norm(P[:, a] - P[:, b], axis=1))
    return best


def facet_measures(P: np.ndarray) -> np.ndarray:
    """(n-1)-dimensional measure of the facet opposite each vertex, ``(M, n+1)``."""
    n = P.shape[2]
    out = np.empty(P.shape[:2])
    for i in range(n + 1):
        F = np.delete(P, i, axis=1)
        if n == 2:
            out[:, i] = np.linalg.norm(F[:, 1] - F[:, 0], axis=1)
        elif n == 3:
            out[:, i] = 0.5 * np.linalg.norm(np.cross(F[:, 1] - F[:, 0], F[:, 2] - F[:, 0]), axis=1)
        else:
            E = F[:, 1:] - F[:, :1]
            G = np.einsum("mik,mjk->mij", E, E)
            out[:, i] = np.sqrt(np.abs(np.linalg.det(G))) / factorial(n - 1)
    return out


def inradii(P: np.ndarray) -> np.ndarray:
    n = P.shape[2]
    return n * np.abs(signed_volumes(P)) / facet_measures(P).sum(axis=1)


def barycentric_gradients(P: np.ndarray) -> np.ndarray:
    """Constant gradients of the barycentric coordinates, shape ``(M, n+1, n)``.

    Row k of the inverse edge matrix is the gradient of the k-th coordinate
    (k >= 1); the first one is minus their sum.
    """
    inv = np.linalg.inv(edge_matrix(P))
    return np.concatenate([-inv.sum(axis=1, keepdims=True), inv], axis=1)


def barycentric_coordinates(x: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of points ``x`` (M, n) w.r.t. simplices ``P``."""
    t = np.linalg.solve(edge_matrix(P), (x - P[:, 0])[..., None])[..., 0]
    return np.concatenate([1.0 - t.sum(axis=1, keepdims=True), t], axis=1)


def point_simplex_distance(x: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Euclidean distance from points ``x`` (M, n) to closed simplices ``S`` (M, k+1, n).

    Exact: the closest point lies in the relative interior of some face, so
    projecting onto every face and keeping feasible projections suffices.
    """
    x = np.asarray(x, dtype=float)
    M, k1, _ = S.shape
    if x.ndim == 1:
        x = np.broadcast_to(x, (M, S.shape[2]))
    best = np.full(M, np.inf)
    for size in range(1, k1 + 1):
        for face in itertools.combinations(range(k1), size):
            V = S[:, face, :]
            if size == 1:
                d = np.linalg.norm(x - V[:, 0], axis=1)
                best = np.minimum(best, d)
                continue
            E = V[:, 1:, :] - V[:, :1, :]
            G = np.einsum("mik,mjk->mij", E, E)
            rhs = np.einsum("mik,mk->mi", E, x - V[:, 0])
            ok = np.abs(np.linalg.det(G)) > 1e-300
            t = np.zeros((M, size - 1))
            if ok.any():
                t[ok] = np.linalg.solve(G[ok], rhs[ok][..., None])[..., 0]
            feasible = ok & (t >= 0).all(axis=1) & (t.sum(axis=1) <= 1)
            proj = V[:, 0] + np.einsum("mi,mik->mk", t, E)
            d = np.linalg.norm(x - proj, axis=1)
            best = np.where(feasible, np.minimum(best, d), best)
    return best


# --- sign decomposition -------------------------------------------------------

# Vertex specs refer to positions in the value-sorted (descending) order.
# ("v", a) is a vertex, ("e", a, b) the zero crossing on edge a-b.
_PIECES = {
    2: {
        1: [[("v", 0), ("e", 0, 1), ("e", 0, 2)]],
        2: [[("v", 0), ("v", 1), ("e", 1, 2)], [("v", 0), ("e", 1, 2), ("e", 0, 2)]],
        3: [[("v", 0), ("v", 1), ("v", 2)]],
    },
    3: {
        1: [[("v", 0), ("e", 0, 1), ("e", 0, 2), ("e", 0, 3)]],
        2: [
            [("v", 0), ("e", 0, 2), ("e", 0, 3), ("v", 1)],
            [("e", 0, 2), ("e", 0, 3), ("v", 1), ("e", 1, 2)],
            [("e", 0, 3), ("v", 1), ("e", 1, 2), ("e", 1, 3)],
        ],
        3: [
            [("v", 0), ("v", 1), ("v", 2), ("e", 0, 3)],
            [("v", 1), ("v", 2), ("e", 0, 3), ("e", 1, 3)],
            [("v", 2), ("e", 0, 3), ("e", 1, 3), ("e", 2, 3)],
        ],
        4: [[("v", 0), ("v", 1), ("v", 2), ("v", 3)]],
    },
}


def split_positive(values: np.ndarray):
    """Decompose ``{v > 0}`` inside each simplex into sub-simplices.

    Parameters
    ----------
    values : (B, n+1) vertex values of an affine function per simplex.

    Returns
    -------
    bary : (K, n+1, n+1) barycentric coordinates (rows) of the piece vertices
        relative to their parent simplex.
    parent : (K,) index of the parent simplex.
    """
    values = np.asarray(values, dtype=float)
    B, n1 = values.shape
    n = n1 - 1
    order = np.argsort(-values, axis=1, kind="stable")
    sv = np.take_along_axis(values, order, axis=1)
    npos = (sv > 0).sum(axis=1)
    eye = np.eye(n1)
    out_b, out_p = [], []
    for count, templates in _PIECES[n].items():
        idx = np.nonzero(npos == count)[0]
        if idx.size == 0:
            continue
        o = order[idx]
        s = sv[idx]
        for tmpl in templates:
            rows = []
            for spec in tmpl:
                if spec[0] == "v":
                    rows.append(eye[o[:, spec[1]]])
                else:
                    a, b = spec[1], spec[2]
                    t = s[:, a] / (s[:, a] - s[:, b])
                    rows.append((1 - t)[:, None] * eye[o[:, a]] + t[:, None] * eye[o[:, b]])
            out_b.append(np.stack(rows, axis=1))
            out_p.append(idx)
    if not out_b:
        return np.zeros((0, n1, n1)), np.zeros(0, dtype=int)
    return np.concatenate(out_b), np.concatenate(out_p)


@lru_cache(maxsize=None)
def moment_tensor(n: int, m: int) -> np.ndarray:
    """``W[i1..im] = ∫_T λ_{i1}···λ_{im} / |T|`` on an n-simplex."""
    W = np.empty((n + 1,) * m)
    for idx in itertools.product(range(n + 1), repeat=m):
        counts = np.bincount(np.array(idx, dtype=int), minlength=n + 1)
        W[idx] = factorial(n) * np.prod([factorial(int(c)) for c in counts]) / factorial(n + m)
    W.setflags(write=False)
    return W


def integrate_products(volumes: np.ndarray, factors) -> np.ndarray:
    """Exact ``∫_T ∏_k f_k`` for affine factors given by vertex values (B, n+1)."""
    factors = list(factors)
    volumes = np.asarray(volumes, dtype=float)
    if not factors:
        return volumes.copy()
    n = factors[0].shape[1] - 1
    W = moment_tensor(n, len(factors))
    letters = "abcdefgh"[: len(factors)]
    expr = ",".join(f"z{c}" for c in letters) + "," + letters + "->z"
    return volumes * np.einsum(expr, *factors, W, optimize=True)


def integrate_power(volumes: np.ndarray, values: np.ndarray, m: int) -> np.ndarray:
    """Exact ``∫_T v^m`` for affine ``v``: ``|T| n! m!/(n+m)! h_m(v_0..v_n)``."""
    values = np.asarray(values, dtype=float)
    n = values.shape[1] - 1
    h = np.zeros((m + 1, values.shape[0]))
    h[0] = 1.0
    for j in range(n + 1):
        for k in range(1, m + 1):
            h[k] = h[k] + values[:, j] * h[k - 1]
    return volumes * factorial(n) * factorial(m) / factorial(n + m) * h[m]


def integrate_positive_products(volumes, level, factors) -> np.ndarray:
    """Exact ``∫_{T ∩ {level > 0}} ∏_k f_k`` per simplex.

    ``level`` and every factor are affine, given by vertex values (B, n+1).
    """
    volumes = np.asarray(volumes, dtype=float)
    level = np.asarray(level, dtype=float)
    bary, parent = split_positive(level)
    out = np.zeros(len(volumes))
    if parent.size == 0:
        return out
    sub_vol = volumes[parent] * np.abs(np.linalg.det(bary))
    sub = [np.einsum("kij,kj->ki", bary, np.asarray(f, dtype=float)[parent]) for f in factors]
    np.add.at(out, parent, integrate_products(sub_vol, sub))
    return out


def integrate_abs(volumes, values) -> np.ndarray:
    """Exact ``∫_T |v|`` for affine ``v`` (vertex values (B, n+1))."""
    values = np.asarray(values, dtype=float)
    return (integrate_positive_products(volumes, values, [values])
            + integrate_positive_products(volumes, -values, [-values]))


@lru_cache(maxsize=None)
def simplex_quadrature(n: int, degree: int):
    """Grundmann–Möller rule exact for polynomials of total degree ``degree``.

    Returns barycentric points (K, n+1) and weights (K,) summing to one, so
    that ``∫_T g ≈ |T| Σ w_k g(x_k)``.
    """
    s = max(0, int(degree) // 2)
    d = 2 * s + 1
    pts, wts = [], []
    for i in range(s + 1):
        w = (-1) ** i * 2.0 ** (-2 * s) * (d + n - 2 * i) ** d / (factorial(i) * factorial(d + n - i))
        for beta in _compositions(s - i, n + 1):
            pts.append([(2 * b + 1) / (d + n - 2 * i) for b in beta])
            wts.append(w * factorial(n))
    P = np.array(pts)
    W = np.array(wts)
    P.setflags(write=False)
    W.setflags(write=False)
    return P, W


def _compositions(total, parts):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first, *rest)
