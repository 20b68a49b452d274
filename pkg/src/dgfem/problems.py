"""Benchmark problems: coefficient fields, loads and reference exponents."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .errors import InvalidDataError
from .fem import CoefficientField, LoadData
from .mesh import Triangulation, kuhn_triangulate


@dataclass(frozen=True, eq=False)
class BenchmarkProblem:
    name: str
    domain: np.ndarray                 # (2, n): lower and upper corner
    A: CoefficientField
    load: LoadData
    reference_exponent: float | None = None
    exact_solution: Callable | None = None
    cells_multiple: int = 1            # cells per side must be a multiple of this
    params: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.domain.shape[1]

    def mesh(self, cells_per_side: int) -> Triangulation:
        if cells_per_side % self.cells_multiple:
            raise ValueError(f"{self.name}: cells per side must be a multiple of {self.cells_multiple}")
        return kuhn_triangulate(self.dim, cells_per_side, self.domain.T)

    def cells_at_level(self, level: int) -> int:
        """Cells per side giving ``2**level`` cells per unit length."""
        side = float(np.ptp(self.domain, axis=0).max())
        return max(self.cells_multiple, int(round(side * 2 ** int(level))))

    def level_mesh(self, level: int) -> Triangulation:
        return self.mesh(self.cells_at_level(level))

    def ellipticity(self, mesh: Triangulation):
        return self.A.certificate(mesh)


def _box(lo, hi, dim=2):
    return np.array([[lo] * dim, [hi] * dim], dtype=float)


# --- checkerboard -----------------------------------------------------------------------

def _sector_transfer(a: float, g: float, phi: float) -> np.ndarray:
    """Map (value, a·angular derivative) across a sector of opening ``phi``.

    Inside the sector the angular profile solves ``w'' = -g² w``.
    """
    c, s = np.cos(g * phi), np.sin(g * phi)
    return np.array([[c, s / (a * g)], [-a * g * s, c]])


def kellogg_characteristic(g: float, s: float) -> float:
    """``tr(M(g)) - 2`` for the monodromy of the four quadrant sectors.

    ``r^g w(θ)`` is a local solution around the cross point exactly when the
    monodromy has eigenvalue 1, i.e. when this function vanishes.
    """
    M = np.eye(2)
    for a in (s, 1.0, s, 1.0):
        M = _sector_transfer(a, g, np.pi / 2) @ M
    return float(np.trace(M) - 2.0)


def kellogg_exponent(s: float, grid: int = 4000) -> float:
    """Smallest positive singular exponent of the checkerboard with ratio ``s``."""
    if s <= 0:
        raise ValueError("ratio must be positive")
    if np.isclose(s, 1.0, rtol=0, atol=1e-14):
        return 1.0
    gs = np.linspace(1e-6, 1.0, grid + 1)
    vals = np.array([kellogg_characteristic(g, s) for g in gs])
    hit = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)[0]
    if hit.size == 0:
        return 1.0
    i = int(hit[0])
    if vals[i] == 0:
        return float(gs[i])
    return float(brentq(kellogg_characteristic, gs[i], gs[i + 1], args=(s,), xtol=1e-15, rtol=1e-15))


def ratio_for_exponent(gamma: float) -> float:
    """Coefficient ratio ``s > 1`` whose checkerboard exponent is ``gamma`` (root-found)."""
    if not 0 < gamma < 1:
        raise ValueError("exponent must lie in (0, 1)")
    f = lambda ls: kellogg_exponent(np.exp(ls)) - gamma  # noqa: E731
    return float(np.exp(brentq(f, 1e-4, 20.0, xtol=1e-14)))


def checkerboard(ratio: float) -> BenchmarkProblem:
    """``A = ratio·I`` on the first and third quadrant of (-1, 1)², ``I`` elsewhere; ``f = x + y``.

    The load is odd under point reflection so it excites the singular mode.
    """
    s = float(ratio)
    if s <= 0:
        raise ValueError("ratio must be positive")

    def coef(x):
        return np.where(x[..., 0] * x[..., 1] > 0, s, 1.0)

    A = CoefficientField.scalar_field(coef, name=f"checkerboard({s:g})")
    load = LoadData(f=lambda x: x[..., 0] + x[..., 1])
    return BenchmarkProblem("checkerboard", _box(-1, 1), A, load, kellogg_exponent(s), None, 2,
                            {"ratio": s, "ellipticity": (min(1.0, s), max(1.0, s))})


# --- sign-changing divergence -------------------------------------------------------------

def _sign_changing_fields():
    def F(x):
        out = np.zeros(x.shape)
        out[..., 0] = np.where(np.abs(x[..., 0]) >= 1, -1.0, 1.0)
        return out

    def G(x):
        out = np.zeros(x.shape)
        x1 = x[..., 0]
        out[..., 0] = np.where(x1 <= -1, 3.0, np.where(x1 < 1, 1.0, -1.0))
        return out

    return F, G


def sign_changing_F(f: float = 1.0) -> BenchmarkProblem:
    """``F = ∓e1`` split at ``|x1| = 1`` on (-2, 2)² with its piecewise dominating field."""
    F, G = _sign_changing_fields()
    return BenchmarkProblem("sign-changing-F", _box(-2, 2), CoefficientField.identity(),
                            LoadData(f=f, F=F, G=G), None, None, 4, {"f": f})


def reflect(problem: BenchmarkProblem, axis: int = 0) -> BenchmarkProblem:
    """Mirror ``x_axis -> -x_axis``: scalars are composed, vector fields also flip that component."""
    n = problem.dim

    def mirror(x):
        y = np.array(x, dtype=float, copy=True)
        y[..., axis] *= -1
        return y

    def vec(fn):
        if fn is None:
            return None
        return lambda x: mirror(np.asarray(fn(mirror(x)), dtype=float))

    def scal(fn):
        if fn is None or np.isscalar(fn):
            return fn
        return lambda x: fn(mirror(x))

    ld = problem.load
    load = LoadData(scal(ld.f), vec(ld.F), vec(ld.G), ld.delta)
    A = problem.A
    if A.scalar and callable(A.rule):
        A = CoefficientField.scalar_field(lambda x, r=A.rule: r(mirror(x)), name=f"mirror({A.name})")
    elif callable(A.rule):
        P = np.eye(n)
        P[axis, axis] = -1
        A = CoefficientField.matrix_field(lambda x, r=A.rule: P @ r(mirror(x)) @ P, name=f"mirror({A.name})")
    dom = problem.domain.copy()
    dom[:, axis] = -dom[::-1, axis]
    return BenchmarkProblem(problem.name + "-mirrored", dom, A, load, problem.reference_exponent, None,
                            problem.cells_multiple, dict(problem.params, mirrored_axis=axis))


# --- manufactured solutions ----------------------------------------------------------------

def _fd_check(fn, dfn, X, shape, h=1e-5, tol=1e-4, what="derivative"):
    n = X.shape[1]
    ref = np.asarray(dfn(X), dtype=float).reshape(len(X), *shape)
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        fd = (np.asarray(fn(X + e), dtype=float) - np.asarray(fn(X - e), dtype=float)) / (2 * h)
        fd = fd.reshape(len(X), *shape[:-1]) if len(shape) > 1 else fd.reshape(len(X))
        got = ref[..., k]
        scale = max(1.0, float(np.abs(ref).max()))
        if np.abs(fd - got).max() > tol * scale:
            raise InvalidDataError(f"{what} callback disagrees with finite differences (component {k})")


def manufactured(u, grad, hess, A=None, domain=None, name: str = "manufactured",
                 seed: int = 0) -> BenchmarkProblem:
    """Problem with exact solution ``u``; ``f = -div(A∇u) = -tr(A Hess u)`` for constant ``A``.

    ``grad`` and ``hess`` map points (K, n) to (K, n) and (K, n, n); both are
    cross-checked against central differences at random interior points.
    """
    domain = _box(0, 1) if domain is None else np.asarray(domain, dtype=float)
    n = domain.shape[1]
    if A is None:
        Amat = np.eye(n)
    elif np.isscalar(A):
        Amat = float(A) * np.eye(n)
    else:
        Amat = np.asarray(A, dtype=float)
    if not np.allclose(Amat, Amat.T) or np.linalg.eigvalsh(Amat).min() <= 0:
        raise InvalidDataError("coefficient must be symmetric positive definite")
    rng = np.random.default_rng(seed)
    lo, hi = domain
    X = lo + (hi - lo) * rng.uniform(0.05, 0.95, (32, n))
    _fd_check(u, grad, X, (n,), what="gradient")
    _fd_check(grad, hess, X, (n, n), what="hessian")
    # boundary trace must vanish
    B = lo + (hi - lo) * rng.uniform(0, 1, (64, n))
    B[np.arange(64), rng.integers(0, n, 64)] = np.where(rng.random(64) < 0.5, lo[0], hi[0])
    if np.abs(np.asarray(u(B), dtype=float)).max() > 1e-12:
        raise InvalidDataError("exact solution must vanish on the boundary")

    def f(x):
        H = np.asarray(hess(x.reshape(-1, n)), dtype=float)
        return -np.einsum("ij,kji->k", Amat, H).reshape(x.shape[:-1])

    coef = CoefficientField.constant(Amat)
    return BenchmarkProblem(name, domain, coef, LoadData(f=f), None, u, 1, {"A": Amat.tolist()})


def bubble(A=None) -> BenchmarkProblem:
    """``u = x(1-x)y(1-y)`` on the unit square."""
    def u(x):
        return x[..., 0] * (1 - x[..., 0]) * x[..., 1] * (1 - x[..., 1])

    def grad(x):
        a, b = x[..., 0], x[..., 1]
        return np.stack([(1 - 2 * a) * b * (1 - b), a * (1 - a) * (1 - 2 * b)], axis=-1)

    def hess(x):
        a, b = x[..., 0], x[..., 1]
        H = np.empty(x.shape[:-1] + (2, 2))
        H[..., 0, 0] = -2 * b * (1 - b)
        H[..., 1, 1] = -2 * a * (1 - a)
        H[..., 0, 1] = H[..., 1, 0] = (1 - 2 * a) * (1 - 2 * b)
        return H

    return manufactured(u, grad, hess, A, name="bubble")


def laplace(dim: int = 2, f: float = 1.0) -> BenchmarkProblem:
    return BenchmarkProblem("laplace", _box(0, 1, dim), CoefficientField.identity(), LoadData(f=f))


# --- config-driven custom problems -----------------------------------------------------------

def _floats(text, count=None):
    vals = [float(t) for t in str(text).replace(",", " ").split()]
    if count is not None and len(vals) != count:
        raise InvalidDataError(f"expected {count} numbers, got {text!r}")
    return vals


def field_primitive(spec: dict, prefix: str, dim: int):
    """Scalar field from ``<prefix> = constant|halfspace|radial`` and its parameters.

    constant:  ``<prefix>_value``
    halfspace: ``<prefix>_normal``, ``<prefix>_offset``, ``<prefix>_inside``, ``<prefix>_outside``
               (inside where ``normal·x < offset``)
    radial:    ``<prefix>_center``, ``<prefix>_radius``, ``<prefix>_inside``, ``<prefix>_outside``
    """
    kind = spec.get(prefix, "constant").strip()
    get = lambda key, default=None: spec.get(f"{prefix}_{key}", default)  # noqa: E731
    if kind == "constant":
        v = float(get("value", 1.0))
        return v
    inside, outside = float(get("inside", 1.0)), float(get("outside", 1.0))
    if kind == "halfspace":
        nrm = np.array(_floats(get("normal", " ".join(["1"] + ["0"] * (dim - 1))), dim))
        off = float(get("offset", 0.0))
        return lambda x: np.where(x @ nrm < off, inside, outside)
    if kind == "radial":
        c = np.array(_floats(get("center", " ".join(["0"] * dim)), dim))
        r = float(get("radius", 0.5))
        return lambda x: np.where(np.linalg.norm(x - c, axis=-1) < r, inside, outside)
    raise InvalidDataError(f"unknown field primitive {kind!r} for {prefix}")


def custom_problem(spec: dict) -> BenchmarkProblem:
    """Problem from a flat ``key = value`` mapping (``domain``, ``coef*``, ``source*``)."""
    dom = _floats(spec.get("domain", "0 0 1 1"))
    if len(dom) % 2 or len(dom) // 2 not in (2, 3):
        raise InvalidDataError("domain needs the lower and upper corner")
    dim = len(dom) // 2
    domain = np.array([dom[:dim], dom[dim:]])
    coef = field_primitive(spec, "coef", dim)
    A = (CoefficientField.constant(coef) if np.isscalar(coef)
         else CoefficientField.scalar_field(coef, name=spec.get("coef", "custom")))
    f = field_primitive(spec, "source", dim)
    mult = int(spec.get("cells_multiple", 1))
    return BenchmarkProblem(spec.get("name", "custom"), domain, A, LoadData(f=f), None, None, mult, dict(spec))


def get_problem(name: str, ratio: float | None = None) -> BenchmarkProblem:
    if name == "checkerboard":
        return checkerboard(ratio if ratio is not None else ratio_for_exponent(0.5))
    if name in ("sign-changing-F", "sign_changing_F"):
        return sign_changing_F()
    if name in ("bubble", "manufactured"):
        return bubble()
    if name == "laplace":
        return laplace()
    raise InvalidDataError(f"unknown problem {name!r} (checkerboard, sign-changing-F, bubble, laplace)")


PROBLEM_NAMES = ("checkerboard", "sign-changing-F", "bubble", "laplace")
