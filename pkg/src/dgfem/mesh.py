"""Simplicial meshes: Kuhn generation, newest vertex bisection, neighborhoods, audits."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from math import factorial

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from . import geometry as geo
from .errors import DegenerateElementError, RefinementError, UnsupportedDimensionError

DEGENERACY_FACTOR = 1e-14


@dataclass(frozen=True, eq=False)
class Triangulation:
    """Immutable simplicial mesh.

    ``cells`` holds vertex ids per simplex. ``nvb_order`` lists the same
    vertices in bisection order; with ``k = nvb_tag`` in ``1..n`` the
    refinement edge joins entries 0 and k.
    """

    points: np.ndarray
    cells: np.ndarray
    nvb_order: np.ndarray | None = None
    nvb_tag: np.ndarray | None = None

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=float)
        cells = np.ascontiguousarray(self.cells, dtype=np.int64)
        if pts.ndim != 2 or pts.shape[1] not in (2, 3):
            raise UnsupportedDimensionError(f"dimension {pts.shape[-1]} not supported (use 2 or 3)")
        if cells.ndim != 2 or cells.shape[1] != pts.shape[1] + 1:
            raise ValueError("cells must have n+1 vertices each")
        pts.setflags(write=False)
        cells.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "cells", cells)
        if self.nvb_order is not None:
            order = np.ascontiguousarray(self.nvb_order, dtype=np.int64)
            tag = np.ascontiguousarray(self.nvb_tag, dtype=np.int64)
            order.setflags(write=False)
            tag.setflags(write=False)
            object.__setattr__(self, "nvb_order", order)
            object.__setattr__(self, "nvb_tag", tag)

    # -- sizes -------------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def num_nodes(self) -> int:
        return self.points.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    # -- geometry ----------------------------------------------------------
    @cached_property
    def coords(self) -> np.ndarray:
        return self.points[self.cells]

    @cached_property
    def signed_volumes(self) -> np.ndarray:
        return geo.signed_volumes(self.coords)

    @cached_property
    def volumes(self) -> np.ndarray:
        return np.abs(self.signed_volumes)

    @cached_property
    def diameters(self) -> np.ndarray:
        return geo.diameters(self.coords)

    @cached_property
    def inradii(self) -> np.ndarray:
        return geo.inradii(self.coords)

    @cached_property
    def barycenters(self) -> np.ndarray:
        return self.coords.mean(axis=1)

    @cached_property
    def gradients(self) -> np.ndarray:
        """Gradients of the hat functions restricted to each cell, ``(M, n+1, n)``."""
        self.check_nondegenerate()
        return geo.barycentric_gradients(self.coords)

    def check_nondegenerate(self):
        eps = DEGENERACY_FACTOR * self.diameters ** self.dim
        bad = np.nonzero(self.volumes <= eps)[0]
        if bad.size:
            raise DegenerateElementError(f"{bad.size} degenerate simplices", bad)

    @cached_property
    def gamma(self) -> float:
        return float(shape_regularity(self)[1])

    @cached_property
    def bbox(self) -> np.ndarray:
        return np.stack([self.points.min(axis=0), self.points.max(axis=0)])

    # -- topology ----------------------------------------------------------
    @cached_property
    def _facet_table(self):
        n1 = self.dim + 1
        local = [tuple(j for j in range(n1) if j != i) for i in range(n1)]
        F = np.sort(self.cells[:, local].reshape(-1, self.dim), axis=1)
        uniq, inv, counts = np.unique(F, axis=0, return_inverse=True, return_counts=True)
        return uniq, inv.reshape(-1), counts

    @cached_property
    def boundary_facets(self) -> np.ndarray:
        uniq, _, counts = self._facet_table
        return uniq[counts == 1]

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.num_nodes, dtype=bool)
        mask[self.boundary_facets.ravel()] = True
        mask.setflags(write=False)
        return mask

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        return np.nonzero(~self.boundary_mask)[0]

    @cached_property
    def boundary_cells(self) -> np.ndarray:
        """Mask of cells having at least one vertex on the boundary."""
        return self.boundary_mask[self.cells].any(axis=1)

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        """Cell-node incidence matrix, shape ``(M, N)``."""
        M, n1 = self.cells.shape
        rows = np.repeat(np.arange(M), n1)
        return sp.csr_matrix((np.ones(M * n1), (rows, self.cells.ravel())), shape=(M, self.num_nodes))

    @cached_property
    def node_cells(self) -> sp.csr_matrix:
        return self.incidence.T.tocsr()

    def cells_of_node(self, i: int) -> np.ndarray:
        nc = self.node_cells
        return np.sort(nc.indices[nc.indptr[i]:nc.indptr[i + 1]])

    @cached_property
    def cell_tree(self) -> cKDTree:
        return cKDTree(self.barycenters)

    def locate(self, x) -> np.ndarray:
        """Index of a cell containing each point, -1 if none."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.full(len(x), -1, dtype=np.int64)
        k = min(self.num_cells, 16)
        _, cand = self.cell_tree.query(x, k=k)
        cand = cand.reshape(len(x), k)
        tol = 1e-10
        for j in range(k):
            todo = np.nonzero(out < 0)[0]
            if todo.size == 0:
                break
            c = cand[todo, j]
            lam = geo.barycentric_coordinates(x[todo], self.coords[c])
            hit = (lam >= -tol).all(axis=1)
            out[todo[hit]] = c[hit]
        for p in np.nonzero(out < 0)[0]:
            lam = geo.barycentric_coordinates(np.broadcast_to(x[p], (self.num_cells, self.dim)), self.coords)
            hit = np.nonzero((lam >= -tol).all(axis=1))[0]
            if hit.size:
                out[p] = hit[0]
        return out


# --- generation -----------------------------------------------------------------

def _as_box(dim, domain):
    if domain is None:
        return np.array([[0.0, 1.0]] * dim)
    box = np.asarray(domain, dtype=float).reshape(dim, 2)
    if not np.all(box[:, 1] > box[:, 0]):
        raise ValueError("degenerate box")
    return box


def kuhn_triangulate(dim: int, cells_per_side: int, domain=None) -> Triangulation:
    """Split each cube of a uniform grid into ``dim!`` path simplices.

    Every simplex runs from the lower corner of its cube to the upper corner
    along a monotone lattice path; the refinement edge is the cube diagonal.
    """
    if dim not in (2, 3):
        raise UnsupportedDimensionError(f"dimension {dim} not supported (use 2 or 3)")
    if int(cells_per_side) < 1:
        raise ValueError("cells_per_side must be >= 1")
    m = int(cells_per_side)
    box = _as_box(dim, domain)
    axes = [np.linspace(lo, hi, m + 1) for lo, hi in box]
    grid = np.meshgrid(*axes, indexing="ij")
    points = np.stack([g.ravel() for g in grid], axis=1)
    shape = (m + 1,) * dim
    corners = np.stack(np.meshgrid(*[np.arange(m)] * dim, indexing="ij"), axis=-1).reshape(-1, dim)
    cells = []
    for perm in itertools.permutations(range(dim)):
        path = [corners.copy()]
        cur = corners.copy()
        for axis in perm:
            cur = cur.copy()
            cur[:, axis] += 1
            path.append(cur)
        ids = [np.ravel_multi_index(tuple(v.T), shape) for v in path]
        cells.append(np.stack(ids, axis=1))
    order = np.concatenate(cells)
    # cube-major ordering keeps cells of one cube contiguous
    k = len(corners)
    order = order.reshape(-1, k, dim + 1).transpose(1, 0, 2).reshape(-1, dim + 1)
    tag = np.full(len(order), dim)
    return Triangulation(points, _orient(points, order), order, tag)


def _orient(points, order):
    cells = np.array(order, dtype=np.int64, copy=True)
    vol = geo.signed_volumes(points[cells])
    neg = vol < 0
    cells[neg, -2], cells[neg, -1] = cells[neg, -1], cells[neg, -2].copy()
    return cells


def _default_nvb(mesh: Triangulation):
    """Longest-edge refinement labels for meshes without bisection history."""
    n = mesh.dim
    order = np.empty_like(mesh.cells)
    for t, verts in enumerate(mesh.cells):
        best = None
        for a, b in itertools.combinations(range(n + 1), 2):
            d = np.linalg.norm(mesh.points[verts[a]] - mesh.points[verts[b]])
            key = (-round(d, 12), min(verts[a], verts[b]), max(verts[a], verts[b]))
            if best is None or key < best[0]:
                best = (key, a, b)
        _, a, b = best
        rest = [verts[j] for j in range(n + 1) if j not in (a, b)]
        order[t] = [verts[a], *sorted(rest), verts[b]]  # tag n: edge (0, n)
    return order, np.full(mesh.num_cells, n)


def _children(order, tag, mid, n):
    x = order
    k = tag
    c1 = (*x[:k], mid, *x[k + 1:])
    c2 = (*x[1:k + 1], mid, *x[k + 1:])
    t = k - 1 if k > 1 else n
    return (c1, t), (c2, t)


def _edges(order):
    return [(a, b) if a < b else (b, a) for a, b in itertools.combinations(order, 2)]


def bisect(mesh: Triangulation, marked, max_passes: int | None = None) -> Triangulation:
    """Newest vertex bisection of the marked cells followed by conforming closure.

    Cells are bisected through their refinement edge; any cell that then
    carries a midpoint on one of its edges is bisected in the next pass until
    no hanging node remains.
    """
    marked = {int(t) for t in marked}
    if not marked:
        return mesh
    if min(marked) < 0 or max(marked) >= mesh.num_cells:
        raise ValueError("marked ids outside the mesh")
    n = mesh.dim
    if mesh.nvb_order is None:
        order, tag = _default_nvb(mesh)
    else:
        order, tag = mesh.nvb_order, mesh.nvb_tag
    points = [p for p in mesh.points]
    cells = [(tuple(int(v) for v in o), int(g)) for o, g in zip(order, tag)]
    mids: dict[tuple[int, int], int] = {}
    active = marked
    limit = max_passes if max_passes is not None else 64 * n
    passes = 0
    while active:
        passes += 1
        if passes > limit:
            raise RefinementError("conforming closure did not terminate", sorted(active)[:50])
        nxt = []
        for idx, (o, g) in enumerate(cells):
            if idx not in active:
                nxt.append((o, g))
                continue
            a, b = o[0], o[g]
            key = (a, b) if a < b else (b, a)
            mid = mids.get(key)
            if mid is None:
                mid = len(points)
                points.append(0.5 * (points[a] + points[b]))
                mids[key] = mid
            nxt.extend(_children(o, g, mid, n))
        cells = nxt
        active = {idx for idx, (o, _) in enumerate(cells) if any(e in mids for e in _edges(o))}
    pts = np.array(points)
    order = np.array([o for o, _ in cells], dtype=np.int64)
    tag = np.array([g for _, g in cells], dtype=np.int64)
    return Triangulation(pts, _orient(pts, order), order, tag)


def refine_uniform(mesh: Triangulation, times: int = 1) -> Triangulation:
    for _ in range(times):
        mesh = bisect(mesh, range(mesh.num_cells))
    return mesh


# --- quality --------------------------------------------------------------------

def shape_regularity(mesh: Triangulation):
    """Per-cell ratio ``h_T / R_T`` of diameter to inradius, and its maximum."""
    mesh.check_nondegenerate()
    per = mesh.diameters / mesh.inradii
    return per, float(per.max())


def comparability_ratio(mesh: Triangulation) -> float:
    """Largest ``h_T / h_S`` over pairs of cells sharing a vertex."""
    h = mesh.diameters
    nc = mesh.node_cells
    hmax = np.maximum.reduceat(h[nc.indices], nc.indptr[:-1])
    hmin = np.minimum.reduceat(h[nc.indices], nc.indptr[:-1])
    return float((hmax / hmin).max())


def _segment_distance(p0, p1, q0, q1):
    """Distance between segments [p0,p1] and [q0,q1] (row-wise)."""
    d1, d2, r = p1 - p0, q1 - q0, p0 - q0
    a = (d1 * d1).sum(1)
    e = (d2 * d2).sum(1)
    b = (d1 * d2).sum(1)
    c = (d1 * r).sum(1)
    f = (d2 * r).sum(1)
    den = a * e - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(den > 1e-300, np.clip((b * f - c * e) / den, 0, 1), 0.0)
        t = np.where(e > 0, (b * s + f) / e, 0.0)
        t = np.clip(t, 0, 1)
        s = np.where(a > 0, np.clip((b * t - c) / a, 0, 1), 0.0)
    return np.linalg.norm(p0 + s[:, None] * d1 - q0 - t[:, None] * d2, axis=1)


def simplex_distance(S: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Distance between closed simplices of dimension n <= 3 (row-wise)."""
    k = S.shape[1]
    best = np.full(len(S), np.inf)
    for i in range(k):
        best = np.minimum(best, geo.point_simplex_distance(S[:, i], T))
        best = np.minimum(best, geo.point_simplex_distance(T[:, i], S))
    if S.shape[2] == 3:
        for a, b in itertools.combinations(range(k), 2):
            for c, d in itertools.combinations(range(k), 2):
                best = np.minimum(best, _segment_distance(S[:, a], S[:, b], T[:, c], T[:, d]))
    return best


def patch_separation(mesh: Triangulation) -> float:
    """Smallest ``dist(T, Ω \\ Ω(T)) / h_T`` over all cells."""
    C = mesh.incidence
    A1 = (C @ C.T).tocsr()
    A1.data[:] = 1
    A2 = (A1 @ A1).tocsr()
    A2.data[:] = 1
    ring = (A2 - A1).tocoo()
    keep = ring.data > 0
    t, s = ring.row[keep], ring.col[keep]
    if t.size == 0:
        return float("inf")
    d = simplex_distance(mesh.coords[t], mesh.coords[s])
    best = np.full(mesh.num_cells, np.inf)
    np.minimum.at(best, t, d)
    return float((best / mesh.diameters).min())


# --- neighborhoods ----------------------------------------------------------------

@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.ravel(self.center)))
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")


def patch(mesh: Triangulation, node: int) -> np.ndarray:
    """Cells containing ``node``."""
    return mesh.cells_of_node(int(node))


def ball_distances(mesh: Triangulation, center) -> np.ndarray:
    x = np.asarray(center, dtype=float)
    return geo.point_simplex_distance(x, mesh.coords)


def neighborhood(mesh: Triangulation, seed) -> np.ndarray:
    """Cells touching ``seed`` (a node id, a collection of cell ids, or a :class:`Ball`)."""
    if isinstance(seed, Ball):
        d = ball_distances(mesh, seed.center)
        return np.nonzero(d < seed.radius)[0]
    if np.isscalar(seed):
        return patch(mesh, seed)
    ids = np.unique(np.asarray(list(seed), dtype=np.int64))
    if ids.size == 0:
        return ids
    nodes = np.unique(mesh.cells[ids])
    touched = mesh.node_cells[nodes].indices
    return np.unique(touched)


def nodes_in_ball(mesh: Triangulation, ball: Ball) -> np.ndarray:
    d = np.linalg.norm(mesh.points - np.asarray(ball.center), axis=1)
    return np.nonzero(d < ball.radius)[0]


def prime_neighborhood(mesh: Triangulation, ball: Ball) -> np.ndarray:
    """Union of the patches of all nodes inside ``ball``."""
    nodes = nodes_in_ball(mesh, ball)
    if nodes.size == 0:
        return nodes
    return np.unique(mesh.node_cells[nodes].indices)


@dataclass(frozen=True)
class NeighborhoodConstants:
    Q: float
    kappa: float
    samples: int = 0


def sample_points(mesh: Triangulation, count: int, rng) -> np.ndarray:
    w = mesh.volumes / mesh.volumes.sum()
    cells = rng.choice(mesh.num_cells, size=count, p=w)
    lam = rng.dirichlet(np.ones(mesh.dim + 1), size=count)
    return np.einsum("mi,mik->mk", lam, mesh.coords[cells])


def neighborhood_constants(mesh: Triangulation, samples: int = 64, factors=(1, 2, 4), seed: int = 0):
    """Measure the overlap constant Q and the inclusion constant kappa.

    Centers are sampled uniformly in the domain; radii are ``factor * h_T``
    for the cell containing the center.
    """
    rng = np.random.default_rng(seed)
    centers = sample_points(mesh, samples, rng)
    owner = mesh.locate(centers)
    Q, kappa, used = 1.0, 1.0, 0
    for x0, t in zip(centers, owner):
        dcell = ball_distances(mesh, x0)
        far = np.linalg.norm(mesh.coords - x0, axis=2).max(axis=1)
        for f in factors:
            R = f * mesh.diameters[t]
            inside = dcell < R
            Q = max(Q, float(far[inside].max() / R))
            prime = np.zeros(mesh.num_cells, dtype=bool)
            prime[prime_neighborhood(mesh, Ball(x0, R))] = True
            rest = ~prime
            if rest.any():
                kappa = min(kappa, float(dcell[rest].min() / R))
            used += 1
    return NeighborhoodConstants(Q=Q, kappa=kappa, samples=used)


# --- conformity -------------------------------------------------------------------

@dataclass
class ConformityReport:
    inverted: list = field(default_factory=list)
    duplicate_nodes: list = field(default_factory=list)
    hanging_nodes: list = field(default_factory=list)
    face_mismatches: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.inverted or self.duplicate_nodes or self.hanging_nodes or self.face_mismatches)

    def violations(self) -> list[str]:
        out = [f"inverted element {t}" for t in self.inverted]
        out += [f"duplicate nodes {a} {b}" for a, b in self.duplicate_nodes]
        out += [f"hanging node {v} on element {t}" for v, t in self.hanging_nodes]
        out += [f"facet {tuple(f)} shared by {c} elements" for f, c in self.face_mismatches]
        return out


def validate_conformity(mesh: Triangulation) -> ConformityReport:
    rep = ConformityReport()
    h = mesh.diameters
    eps = DEGENERACY_FACTOR * h ** mesh.dim
    rep.inverted = [int(t) for t in np.nonzero(mesh.signed_volumes <= eps)[0]]
    scale = float(np.ptp(mesh.points, axis=0).max()) or 1.0
    tree = cKDTree(mesh.points)
    rep.duplicate_nodes = sorted((int(a), int(b)) for a, b in tree.query_pairs(1e-12 * scale))
    good = np.setdiff1d(np.arange(mesh.num_cells), rep.inverted)
    if good.size:
        near = tree.query_ball_point(mesh.barycenters[good], r=h[good] * (1 + 1e-9))
        tt = np.repeat(good, [len(v) for v in near])
        vv = np.fromiter(itertools.chain.from_iterable(near), dtype=np.int64, count=len(tt))
        not_vertex = ~(mesh.cells[tt] == vv[:, None]).any(axis=1)
        tt, vv = tt[not_vertex], vv[not_vertex]
        if tt.size:
            lam = geo.barycentric_coordinates(mesh.points[vv], mesh.coords[tt])
            inside = (lam >= -1e-10).all(axis=1)
            rep.hanging_nodes = sorted(zip(vv[inside].tolist(), tt[inside].tolist()))
    uniq, _, counts = mesh._facet_table
    rep.face_mismatches = [(tuple(int(v) for v in uniq[i]), int(counts[i])) for i in np.nonzero(counts > 2)[0]]
    return rep


def simplex_count_per_cube(dim: int) -> int:
    return factorial(dim)
