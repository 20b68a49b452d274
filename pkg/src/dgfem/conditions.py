"""Audits of the structural hypotheses: sign structure, acuteness, subsolutions, domination."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .errors import InvalidDataError, InvalidOperandError
from .fem import CoefficientField, FeFunction, LoadData
from .mesh import Triangulation

COUPLING_TOL = 1e-12
SUBSOLUTION_TOL = 1e-10


def _text(pairs) -> str:
    return "\n".join(f"{k}: {v}" for k, v in pairs) + "\n"


@dataclass
class NonobtuseCertificate:
    passed: bool
    worst: np.ndarray                       # per element max_{i≠j} coupling
    offending: list = field(default_factory=list)  # (element, node i, node j, coupling)

    def to_text(self) -> str:
        return _text([
            ("certificate", "nonobtuse"),
            ("pass", str(self.passed).lower()),
            ("elements", len(self.worst)),
            ("max_coupling", repr(float(self.worst.max(initial=-np.inf)))),
            ("tolerance", repr(COUPLING_TOL)),
            ("offending", len(self.offending)),
        ] + [(f"offending_{k}", f"{t} {i} {j} {c!r}") for k, (t, i, j, c) in enumerate(self.offending[:20])])


def _local(mesh: Triangulation, A: CoefficientField) -> np.ndarray:
    return fem.local_stiffness(mesh, A.on_mesh(mesh))


def check_nonobtuse(mesh: Triangulation, A: CoefficientField) -> NonobtuseCertificate:
    loc = _local(mesh, A)
    n1 = mesh.dim + 1
    off = loc.copy()
    off[:, np.arange(n1), np.arange(n1)] = -np.inf
    worst = off.max(axis=(1, 2))
    offending = []
    for t in np.nonzero(worst > COUPLING_TOL)[0]:
        for a, b in itertools.combinations(range(n1), 2):
            if loc[t, a, b] > COUPLING_TOL:
                i, j = mesh.cells[t, a], mesh.cells[t, b]
                offending.append((int(t), int(i), int(j), float(loc[t, a, b])))
    return NonobtuseCertificate(not offending, worst, offending)


@dataclass
class AcutenessCertificate:
    gamma: float
    tau: float
    N_max: int
    normalization: str

    def to_text(self) -> str:
        return _text([("certificate", "uniformly-acute"), ("gamma", repr(self.gamma)),
                      ("tau", repr(self.tau)), ("N_max", self.N_max), ("normalization", self.normalization)])


def check_uniform_acute(mesh: Triangulation, A: CoefficientField, normalization: str = "energy",
                        with_paths: bool = True) -> AcutenessCertificate:
    """Largest margin gamma with coupling <= -gamma * (norm product) on every element.

    ``normalization="energy"`` divides by ``sqrt(K_ii K_jj)`` (A-weighted,
    invariant under scaling of A); ``"l2"`` uses unweighted gradient norms.
    Identical for A = I.
    """
    loc = _local(mesh, A)
    n1 = mesh.dim + 1
    if normalization == "energy":
        d = np.sqrt(np.einsum("mii->mi", loc))
    elif normalization == "l2":
        d = np.sqrt(mesh.volumes[:, None]) * np.linalg.norm(mesh.gradients, axis=2)
    else:
        raise ValueError("normalization must be 'energy' or 'l2'")
    iu = np.triu_indices(n1, 1)
    ratio = -loc[:, iu[0], iu[1]] / (d[:, iu[0]] * d[:, iu[1]])
    gamma = max(0.0, float(ratio.min()))
    tau, nmax = 1.0, 0
    if with_paths:
        K = fem.scatter_matrix(mesh, loc)
        K = 0.5 * (K + K.T)
        for t in range(mesh.num_cells):
            verts = mesh.cells[t]
            for i, j in itertools.combinations(verts, 2):
                path = _best_path(K, verts, int(i), int(j))
                if path is None:
                    tau, nmax = 0.0, max(nmax, mesh.dim + 1)
                    continue
                tau = min(tau, path.tau)
                nmax = max(nmax, path.length)
    return AcutenessCertificate(gamma, tau, nmax, normalization)


@dataclass
class AcutePath:
    nodes: list
    margins: list
    found: bool = True

    @property
    def length(self) -> int:
        return len(self.nodes) - 1

    @property
    def tau(self) -> float:
        return min(self.margins) if self.margins else 1.0


def _margin(K, a, b) -> float:
    # both step normalizations at once: -K_ab >= tau * max(K_aa, K_bb)
    return -K[a, b] / max(K[a, a], K[b, b])


def _best_path(K, verts, i, j):
    if i == j:
        return AcutePath([i], [])
    others = [int(v) for v in verts if v not in (i, j)]
    best = None
    for r in range(len(others) + 1):
        for mid in itertools.permutations(others, r):
            seq = [i, *mid, j]
            m = [_margin(K, a, b) for a, b in zip(seq, seq[1:])]
            if min(m) <= 0:
                continue
            key = (min(m), -len(seq))
            if best is None or key > best[0]:
                best = (key, seq, m)
    if best is None:
        return None
    return AcutePath(best[1], best[2])


def acute_path(mesh: Triangulation, A: CoefficientField, element: int, i: int, j: int,
               K=None) -> AcutePath:
    """Chain of vertices of ``element`` from ``i`` to ``j`` with negative global couplings.

    Among all chains through vertices of the element the one maximizing the
    smallest step margin ``-K_ab / max(K_aa, K_bb)`` is returned (ties go to
    the shorter chain). ``found`` is false when no chain exists.
    """
    verts = mesh.cells[int(element)]
    if i not in verts or j not in verts:
        raise InvalidOperandError("nodes must be vertices of the element")
    if K is None:
        K = fem.assemble(mesh, A, LoadData()).K
    path = _best_path(K, verts, int(i), int(j))
    if path is None:
        return AcutePath([int(i), int(j)], [], found=False)
    return path


@dataclass
class SubsolutionReport:
    passed: bool
    max_violation: float
    residuals: np.ndarray
    scale: float
    tolerance: float

    @property
    def worst_node(self) -> int:
        return int(np.argmax(self.residuals)) if len(self.residuals) else -1

    def to_text(self) -> str:
        return _text([("certificate", "subsolution"), ("pass", str(self.passed).lower()),
                      ("max_violation", repr(self.max_violation)), ("scale", repr(self.scale)),
                      ("tolerance", repr(self.tolerance))])


def verify_subsolution(u: FeFunction, A: CoefficientField, load: LoadData, system=None) -> SubsolutionReport:
    """Test the Galerkin inequality against every interior hat function.

    Nonnegative elements of the zero-trace space are exactly nonnegative
    combinations of interior hat functions, so this test is complete.
    """
    if not u.is_zero_on_boundary():
        raise InvalidOperandError("function must vanish on the boundary")
    if system is None:
        system = fem.assemble(u.mesh, A, load)
    r_all = system.residual(u)
    free = system.free
    r = np.full(u.mesh.num_nodes, -np.inf)
    r[free] = r_all[free]
    scale = system.scale(u)
    tol = SUBSOLUTION_TOL * scale
    worst = float(r[free].max(initial=-np.inf))
    return SubsolutionReport(bool(worst <= tol), worst, r, scale, tol)


def pointwise_max(f1, f2):
    if f1 is None and f2 is None:
        return None
    f1 = 0.0 if f1 is None else f1
    f2 = 0.0 if f2 is None else f2
    if np.isscalar(f1) and np.isscalar(f2):
        return max(float(f1), float(f2))

    def ev(f, x):
        return np.full(len(x), float(f)) if np.isscalar(f) else np.asarray(f(x), dtype=float)
    return lambda x: np.maximum(ev(f1, x), ev(f2, x))


def field_sum(G1, G2):
    if G1 is None:
        return G2
    if G2 is None:
        return G1
    return lambda x: np.asarray(G1(x), dtype=float) + np.asarray(G2(x), dtype=float)


def max_load(load1: LoadData, load2: LoadData) -> LoadData:
    """The load ``(f1 ∨ f2, G1 + G2)`` for the nodal maximum of two subsolutions."""
    for ld in (load1, load2):
        if ld.F is not None and ld.G is None:
            raise InvalidDataError("each load with a field F needs its dominating G")
    G = field_sum(load1.G, load2.G)
    return LoadData(pointwise_max(load1.f, load2.f), G, G, min(load1.delta, load2.delta))


def verify_nodal_max_theorem(u: FeFunction, v: FeFunction, load1: LoadData, load2: LoadData,
                             A: CoefficientField) -> SubsolutionReport:
    return verify_subsolution(fem.nodal_max(u, v), A, max_load(load1, load2))


@dataclass
class StarReport:
    passed: bool
    max_violation: float
    basis_violation: float
    combo_violation: float
    worst_node: int
    note: str = "discrete necessary-condition audit; does not prove the distributional inequality"

    def to_text(self) -> str:
        return _text([("certificate", "domination"), ("pass", str(self.passed).lower()),
                      ("max_violation", repr(self.max_violation)), ("worst_node", self.worst_node),
                      ("note", self.note)])


def verify_assumption_star(F, G, mesh: Triangulation, combos: int = 100, seed: int = 0,
                           tol: float = 1e-10) -> StarReport:
    """Check ``∫ G·∇φ >= |∫ F·∇φ|`` for interior hat functions and random nonnegative combinations."""
    grads = mesh.gradients
    gF = fem.scatter_vector(mesh, np.einsum("mik,mk->mi", grads, fem.field_integrals(mesh, F)))
    gG = fem.scatter_vector(mesh, np.einsum("mik,mk->mi", grads, fem.field_integrals(mesh, G)))
    free = mesh.interior_nodes
    scale = max(float(np.abs(gF[free]).max(initial=0.0)), float(np.abs(gG[free]).max(initial=0.0)), 1e-300)
    viol = (np.abs(gF[free]) - gG[free]) / scale
    basis = float(viol.max(initial=-np.inf))
    worst = int(free[np.argmax(viol)]) if free.size else -1
    rng = np.random.default_rng(seed)
    combo = -np.inf
    for _ in range(combos):
        c = rng.random(free.size) * (rng.random(free.size) < rng.random())
        if not c.any():
            continue
        s = c.sum()
        combo = max(combo, float((abs(c @ gF[free]) - c @ gG[free]) / (scale * s)))
    worst_val = max(basis, combo)
    return StarReport(bool(worst_val <= tol), worst_val, basis, combo, worst)

