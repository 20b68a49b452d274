"""P1 Lagrange elements: functions, coefficients, loads, assembly and the Dirichlet solver."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import geometry as geo
from .errors import IncompatibleOperandsError, InvalidDataError, SolverError
from .mesh import Triangulation

# order-2 symmetric rules in barycentric coordinates, weights sum to 1
_A2, _B2 = 2.0 / 3.0, 1.0 / 6.0
_A3, _B3 = 0.5854101966249685, 0.1381966011250105
QUAD2 = {
    2: (np.array([[_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2]]), np.full(3, 1.0 / 3.0)),
    3: (np.array([[_A3, _B3, _B3, _B3], [_B3, _A3, _B3, _B3],
                  [_B3, _B3, _A3, _B3], [_B3, _B3, _B3, _A3]]), np.full(4, 0.25)),
}


# --- functions ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FeFunction:
    """Continuous piecewise affine function given by its nodal values."""

    mesh: Triangulation
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True).reshape(-1)
        if v.shape[0] != self.mesh.num_nodes:
            raise IncompatibleOperandsError(f"{v.shape[0]} values for {self.mesh.num_nodes} nodes")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @cached_property
    def cell_values(self) -> np.ndarray:
        return self.values[self.mesh.cells]

    @cached_property
    def cell_gradients(self) -> np.ndarray:
        return np.einsum("mi,mik->mk", self.cell_values, self.mesh.gradients)

    def is_zero_on_boundary(self, atol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.values[self.mesh.boundary_mask]) <= atol))

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cells = self.mesh.locate(x)
        if (cells < 0).any():
            raise InvalidDataError("evaluation point outside the mesh")
        lam = geo.barycentric_coordinates(x, self.mesh.coords[cells])
        return (lam * self.cell_values[cells]).sum(axis=1)

    def _same(self, other):
        if isinstance(other, FeFunction):
            _check_same_mesh(self, other)
            return other.values
        return float(other)

    def __add__(self, other):
        return FeFunction(self.mesh, self.values + self._same(other))

    __radd__ = __add__

    def __sub__(self, other):
        return FeFunction(self.mesh, self.values - self._same(other))

    def __rsub__(self, other):
        return FeFunction(self.mesh, self._same(other) - self.values)

    def __mul__(self, s):
        return FeFunction(self.mesh, self.values * float(s))

    __rmul__ = __mul__

    def __neg__(self):
        return FeFunction(self.mesh, -self.values)


def _check_same_mesh(*fs):
    m = fs[0].mesh
    for f in fs[1:]:
        if f.mesh is not m:
            raise IncompatibleOperandsError("functions live on different meshes")


def zero(mesh: Triangulation) -> FeFunction:
    return FeFunction(mesh, np.zeros(mesh.num_nodes))


def interpolate(mesh: Triangulation, g) -> FeFunction:
    """Nodal interpolant: values ``g(x_i)`` at every node."""
    if np.isscalar(g):
        vals = np.full(mesh.num_nodes, float(g))
    else:
        try:
            vals = np.asarray(g(mesh.points), dtype=float).reshape(-1)
            if vals.shape[0] != mesh.num_nodes:
                raise ValueError
        except (TypeError, ValueError, IndexError):
            vals = np.array([float(g(p)) for p in mesh.points])
    bad = np.nonzero(~np.isfinite(vals))[0]
    if bad.size:
        raise InvalidDataError(f"non-finite value at node {int(bad[0])}")
    return FeFunction(mesh, vals)


def nodal_max(u: FeFunction, v: FeFunction) -> FeFunction:
    _check_same_mesh(u, v)
    return FeFunction(u.mesh, np.maximum(u.values, v.values))


def nodal_positive_part(u: FeFunction, c: float = 0.0) -> FeFunction:
    """``(u - c)_+`` taken node by node."""
    return FeFunction(u.mesh, np.maximum(u.values - float(c), 0.0))


# --- data -----------------------------------------------------------------------

def _call_field(fn, X, shape_tail, what):
    """Evaluate ``fn`` on points ``X`` (M, K, n); returns (M, K, *shape_tail)."""
    M, K, n = X.shape
    flat = X.reshape(-1, n)
    if np.isscalar(fn):
        out = np.full((M * K, *shape_tail), float(fn))
    else:
        out = np.asarray(fn(flat), dtype=float)
        if out.ndim == 0:
            out = np.full((M * K, *shape_tail), float(out))
        out = out.reshape(M * K, *shape_tail)
    out = out.reshape(M, K, *shape_tail)
    bad = ~np.isfinite(out).reshape(M, -1).all(axis=1)
    if bad.any():
        t = int(np.nonzero(bad)[0][0])
        raise InvalidDataError(f"non-finite {what} on element {t}", element_id=t)
    return out


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Symmetric uniformly elliptic matrix field, constant on each element.

    ``rule`` maps points (K, n) to scalars (K,) when ``scalar`` is true and to
    matrices (K, n, n) otherwise; it is sampled at element barycenters.
    ``cell_values`` bypasses sampling for one specific mesh.
    """

    rule: Callable | float | None = None
    scalar: bool = True
    cell_values: np.ndarray | None = None
    name: str = ""

    @classmethod
    def identity(cls):
        return cls(1.0, True, name="identity")

    @classmethod
    def constant(cls, value):
        value = np.asarray(value, dtype=float)
        if value.ndim == 0:
            return cls(float(value), True, name=f"constant {float(value)!r}")
        return cls(lambda x: np.broadcast_to(value, (len(x), *value.shape)), False, name="constant matrix")

    @classmethod
    def scalar_field(cls, fn, name=""):
        return cls(fn, True, name=name)

    @classmethod
    def matrix_field(cls, fn, name=""):
        return cls(fn, False, name=name)

    @classmethod
    def per_cell(cls, values, name="per-cell"):
        values = np.asarray(values, dtype=float)
        return cls(None, values.ndim == 1, values, name=name)

    def on_mesh(self, mesh: Triangulation) -> np.ndarray:
        """Per-element matrices (M, n, n)."""
        n = mesh.dim
        if self.cell_values is not None:
            vals = self.cell_values
            if vals.shape[0] != mesh.num_cells:
                raise IncompatibleOperandsError("per-cell coefficient does not match the mesh")
            vals = vals[:, None, None] * np.eye(n) if vals.ndim == 1 else vals
            bad = ~np.isfinite(vals).reshape(len(vals), -1).all(axis=1)
            if bad.any():
                t = int(np.nonzero(bad)[0][0])
                raise InvalidDataError(f"non-finite coefficient on element {t}", element_id=t)
            return vals
        X = mesh.barycenters[:, None, :]
        if self.scalar:
            s = _call_field(self.rule, X, (), "coefficient")[:, 0]
            return s[:, None, None] * np.eye(n)
        A = _call_field(self.rule, X, (n, n), "coefficient")[:, 0]
        asym = np.abs(A - np.swapaxes(A, 1, 2)).max(axis=(1, 2))
        scale = np.abs(A).max(axis=(1, 2))
        bad = np.nonzero(asym > 1e-12 * np.maximum(scale, 1.0))[0]
        if bad.size:
            raise InvalidDataError(f"non-symmetric coefficient on element {int(bad[0])}", int(bad[0]))
        return A

    def certificate(self, mesh: Triangulation):
        """Smallest and largest eigenvalue over all elements."""
        ev = np.linalg.eigvalsh(self.on_mesh(mesh))
        return float(ev.min()), float(ev.max())


@dataclass(frozen=True, eq=False)
class LoadData:
    """Right-hand side ``f - div F`` with optional dominating field ``G``.

    ``f`` maps points (K, n) to (K,), ``F`` and ``G`` map to (K, n). Scalars
    are accepted for ``f``. ``delta`` fixes the integrability exponents.
    """

    f: Callable | float | None = None
    F: Callable | None = None
    G: Callable | None = None
    delta: float = 0.5

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")

    def p(self, n: int) -> float:
        return n / (1.0 - self.delta)

    def q(self, n: int) -> float:
        return n / (2.0 - self.delta)

    @staticmethod
    def two_star(n: int) -> float:
        return 8.0 if n == 2 else 2.0 * n / (n - 2)

    def dominated(self) -> "LoadData":
        """The load ``(|f|, G)`` used for truncated subsolutions."""
        if self.F is not None and self.G is None:
            raise InvalidDataError("a dominating field G is required when F is present")
        f = self.f
        absf = None if f is None else (abs(float(f)) if np.isscalar(f) else (lambda x, f=f: np.abs(f(x))))
        return LoadData(absf, self.G, self.G, self.delta)

    def scaled(self, s: float) -> "LoadData":
        def mul(fn):
            if fn is None:
                return None
            if np.isscalar(fn):
                return s * float(fn)
            return lambda x, fn=fn: s * np.asarray(fn(x), dtype=float)
        return LoadData(mul(self.f), mul(self.F), mul(self.G), self.delta)


def quadrature_points(mesh: Triangulation, rule=None):
    lam, w = rule if rule is not None else QUAD2[mesh.dim]
    X = np.einsum("qi,mik->mqk", lam, mesh.coords)
    return X, lam, w


def field_integrals(mesh: Triangulation, F) -> np.ndarray:
    """``∫_T F`` per element with the order-2 rule, shape (M, n)."""
    if F is None:
        return np.zeros((mesh.num_cells, mesh.dim))
    X, _, w = quadrature_points(mesh)
    vals = _call_field(F, X, (mesh.dim,), "vector field")
    return mesh.volumes[:, None] * np.einsum("q,mqk->mk", w, vals)


def scalar_moments(mesh: Triangulation, f) -> np.ndarray:
    """``∫_T f ψ_i`` per element and local vertex, shape (M, n+1)."""
    if f is None:
        return np.zeros((mesh.num_cells, mesh.dim + 1))
    X, lam, w = quadrature_points(mesh)
    vals = _call_field(f, X, (), "source")
    return mesh.volumes[:, None] * np.einsum("q,mq,qi->mi", w, vals, lam)


def norm_lp(mesh: Triangulation, fn, p: float, vector: bool = False) -> float:
    """``‖fn‖_{L^p(Ω)}`` with a degree-5 rule per element (exact for piecewise constants)."""
    if fn is None:
        return 0.0
    lam, w = geo.simplex_quadrature(mesh.dim, 5)
    X = np.einsum("qi,mik->mqk", lam, mesh.coords)
    vals = _call_field(fn, X, (mesh.dim,) if vector else (), "field")
    mag = np.linalg.norm(vals, axis=2) if vector else np.abs(vals)
    return float((mesh.volumes @ (mag ** p @ w)) ** (1.0 / p))


# --- assembly -------------------------------------------------------------------

def local_stiffness(mesh: Triangulation, Acell: np.ndarray) -> np.ndarray:
    """``∫_T A∇ψ_j·∇ψ_i`` for every element, shape (M, n+1, n+1)."""
    G = mesh.gradients
    return mesh.volumes[:, None, None] * np.einsum("mik,mkl,mjl->mij", G, Acell, G)


def scatter_matrix(mesh: Triangulation, local: np.ndarray) -> sp.csr_matrix:
    n1 = mesh.dim + 1
    rows = np.repeat(mesh.cells, n1, axis=1).ravel()
    cols = np.tile(mesh.cells, (1, n1)).ravel()
    N = mesh.num_nodes
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(N, N)).tocsr()


def scatter_vector(mesh: Triangulation, local: np.ndarray) -> np.ndarray:
    return np.bincount(mesh.cells.ravel(), weights=local.ravel(), minlength=mesh.num_nodes)


def load_vector(mesh: Triangulation, load: LoadData) -> np.ndarray:
    """``b_i = ∫ f ψ_i + ∫ F·∇ψ_i``."""
    local = scalar_moments(mesh, load.f)
    if load.F is not None:
        local = local + np.einsum("mik,mk->mi", mesh.gradients, field_integrals(mesh, load.F))
    return scatter_vector(mesh, local)


@dataclass(eq=False)
class StiffnessSystem:
    mesh: Triangulation
    K: sp.csr_matrix
    b: np.ndarray
    Acell: np.ndarray
    local: np.ndarray = field(repr=False)

    @property
    def boundary(self) -> np.ndarray:
        return np.nonzero(self.mesh.boundary_mask)[0]

    @property
    def free(self) -> np.ndarray:
        return self.mesh.interior_nodes

    def residual(self, u) -> np.ndarray:
        """``K u - b`` on all nodes (only interior entries are meaningful)."""
        vals = getattr(u, "values", u)
        return self.K @ vals - self.b

    def scale(self, u) -> float:
        vals = getattr(u, "values", u)
        knorm = float(abs(self.K).sum(axis=1).max()) if self.K.nnz else 0.0
        return knorm * float(np.abs(vals).max(initial=0.0)) + float(np.abs(self.b).max(initial=0.0))

    def galerkin_defect(self, u) -> float:
        """Largest interior residual relative to ``‖K‖∞‖u‖∞ + ‖b‖∞``."""
        r = self.residual(u)[self.free]
        s = self.scale(u)
        return float(np.abs(r).max(initial=0.0) / s) if s > 0 else 0.0


def assemble(mesh: Triangulation, A: CoefficientField, load: LoadData) -> StiffnessSystem:
    Acell = A.on_mesh(mesh)
    ev = np.linalg.eigvalsh(Acell)
    bad = np.nonzero(ev[:, 0] <= 0)[0]
    if bad.size:
        raise InvalidDataError(f"coefficient not elliptic on element {int(bad[0])}", int(bad[0]))
    local = local_stiffness(mesh, Acell)
    K = scatter_matrix(mesh, local)
    K = 0.5 * (K + K.T)
    return StiffnessSystem(mesh, K.tocsr(), load_vector(mesh, load), Acell, local)


# --- solver ---------------------------------------------------------------------

def pcg(K, b, rtol=1e-10, maxiter=None):
    """Jacobi-preconditioned conjugate gradients; returns (x, residual history)."""
    n = len(b)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n), [0.0]
    cap = maxiter if maxiter is not None else int(np.ceil(20 * np.sqrt(n)))
    dinv = 1.0 / K.diagonal()
    Minv = spla.LinearOperator(K.shape, matvec=lambda r: dinv * r, dtype=float)
    history = [1.0]

    def track(xk):
        history.append(float(np.linalg.norm(b - K @ xk)) / bnorm)

    x, info = spla.cg(K, b, rtol=rtol, atol=0.0, maxiter=cap, M=Minv, callback=track)
    rel = float(np.linalg.norm(b - K @ x)) / bnorm
    if info != 0 or rel > rtol * (1 + 1e-6):
        raise SolverError(f"CG did not reach rtol={rtol:g} within {cap} iterations (rel. residual {rel:.3e})", history)
    return x, history


def solve_dirichlet(system: StiffnessSystem, rtol: float = 1e-10, maxiter=None) -> FeFunction:
    """Solve ``K u = b`` on interior nodes with ``u = 0`` on the boundary."""
    free = system.free
    u = np.zeros(system.mesh.num_nodes)
    if free.size:
        Kff = system.K[free][:, free].tocsr()
        u[free], _ = pcg(Kff, system.b[free], rtol=rtol, maxiter=maxiter)
    return FeFunction(system.mesh, u)


def solve(mesh: Triangulation, A: CoefficientField, load: LoadData, **kw) -> FeFunction:
    return solve_dirichlet(assemble(mesh, A, load), **kw)


# --- norms and errors -----------------------------------------------------------

def l2_error(u: FeFunction, exact, degree: int = 5) -> float:
    mesh = u.mesh
    lam, w = geo.simplex_quadrature(mesh.dim, degree)
    X = np.einsum("qi,mik->mqk", lam, mesh.coords)
    ex = _call_field(exact, X, (), "exact solution")
    uh = u.cell_values @ lam.T
    return float(np.sqrt(mesh.volumes @ (((uh - ex) ** 2) @ w)))


def cell_energy(u: FeFunction, Acell: np.ndarray) -> np.ndarray:
    g = u.cell_gradients
    return u.mesh.volumes * np.einsum("mk,mkl,ml->m", g, Acell, g)


# --- product commutator ---------------------------------------------------------

@dataclass(frozen=True)
class CommutatorDefect:
    value: np.ndarray      # max_T |uw - Πh(uw)|
    gradient: np.ndarray   # h_T max_T |∇(uw - Πh(uw))|
    constant: np.ndarray   # value / (h_T |∇u| ⨍_T |w - <w>_T|), 0 where both vanish


def _quadratic_extrema(Mq: np.ndarray) -> np.ndarray:
    """max over the simplex of |λᵀ M λ| for symmetric M with zero diagonal (batched)."""
    B, n1, _ = Mq.shape
    best = np.zeros(B)
    for size in range(2, n1 + 1):
        for face in itertools.combinations(range(n1), size):
            S = Mq[:, face][:, :, face]
            sys_ = np.zeros((B, size + 1, size + 1))
            sys_[:, :size, :size] = 2 * S
            sys_[:, :size, size] = 1.0
            sys_[:, size, :size] = 1.0
            rhs = np.zeros(size + 1)
            rhs[size] = 1.0
            det = np.linalg.det(sys_)
            scale = np.abs(sys_).max(axis=(1, 2)) ** (size + 1)
            ok = np.abs(det) > 1e-13 * scale
            if not ok.any():
                continue
            sol = np.linalg.solve(sys_[ok], np.broadcast_to(rhs, (int(ok.sum()), size + 1))[..., None])[..., 0]
            lam = sol[:, :size]
            feas = (lam >= -1e-14).all(axis=1)
            val = np.abs(np.einsum("bi,bij,bj->b", lam, S[ok], lam))
            idx = np.nonzero(ok)[0][feas]
            best[idx] = np.maximum(best[idx], val[feas])
    return best


def product_commutator_defect(u: FeFunction, w: FeFunction) -> CommutatorDefect:
    """Per-element size of ``uw - Πh(uw)`` and of its scaled gradient.

    On each element ``uw - Πh(uw) = -Σ_{i<j} (u_i-u_j)(w_i-w_j) λ_i λ_j``, a
    quadratic form in the barycentric coordinates that depends on nodal
    differences only.
    """
    _check_same_mesh(u, w)
    mesh = u.mesh
    U, W = u.cell_values, w.cell_values
    Mq = -0.5 * (U[:, :, None] - U[:, None, :]) * (W[:, :, None] - W[:, None, :])
    value = _quadratic_extrema(Mq)
    grad_at_vertex = 2 * np.einsum("mkj,mjd->mkd", Mq, mesh.gradients)
    h = mesh.diameters
    gradient = h * np.linalg.norm(grad_at_vertex, axis=2).max(axis=1)
    wdev = W - W.mean(axis=1, keepdims=True)
    mean_abs = geo.integrate_abs(mesh.volumes, wdev) / mesh.volumes
    denom = h * np.linalg.norm(u.cell_gradients, axis=1) * mean_abs
    with np.errstate(divide="ignore", invalid="ignore"):
        const = np.where(denom > 0, value / denom, 0.0)
    return CommutatorDefect(value, gradient, const)
