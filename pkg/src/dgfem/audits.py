"""Seeded randomized batteries for the unconditional statements.

Each battery draws ``count`` independent instances and returns one summary
:class:`InequalityRecord`: ``lhs`` is the worst excess over the allowed
bound, ``rhs`` the tolerance, and the status is ``violation`` as soon as a
single instance fails.
"""
from __future__ import annotations

import numpy as np

from . import conditions, fem
from .degiorgi import build_cutoff, fast_geometric_bound, telescoping_bound
from .fem import FeFunction, LoadData
from .inequalities import (InequalityRecord, jensen_audit, prod_rearrange_constant, prod_rearrange_ratio,
                           weak_type_check)
from .mesh import kuhn_triangulate
from .problems import sign_changing_F


def _summary(name: str, excesses, tol: float, params: dict) -> InequalityRecord:
    ex = np.asarray(excesses, dtype=float)
    worst = float(ex.max(initial=-np.inf))
    violations = int((ex > tol).sum())
    rec = InequalityRecord(name, 0, max(worst, 0.0), tol,
                           dict(params, instances=int(ex.size), violations=violations, worst_excess=worst))
    rec.status = "violation" if violations else "ok"
    return rec


def _perturbed_kuhn(rng, dim: int, cells: int, jitter: float = 0.2):
    mesh = kuhn_triangulate(dim, cells)
    pts = mesh.points.copy()
    inner = mesh.interior_nodes
    pts[inner] += rng.uniform(-jitter, jitter, (inner.size, dim)) / cells
    return type(mesh)(pts, mesh.cells, mesh.nvb_order, mesh.nvb_tag)


def jensen_battery(count: int = 1000, seed: int = 0) -> InequalityRecord:
    """``η^q <= Πh(η^q)`` for random nonnegative nodal values, q in {2, 3, 4}."""
    rng = np.random.default_rng(seed)
    meshes = [_perturbed_kuhn(rng, 2, 3), _perturbed_kuhn(rng, 3, 2)]
    ex = []
    for _ in range(count):
        mesh = meshes[int(rng.integers(2))]
        vals = rng.uniform(0, 1, mesh.num_nodes) * (rng.random(mesh.num_nodes) < 0.8)
        rec = jensen_audit(FeFunction(mesh, vals), int(rng.integers(2, 5)), samples=4)
        ex.append(rec.lhs - rec.rhs)
    return _summary("jensen_battery", ex, 0.0, {"seed": seed})


def weak_type_battery(count: int = 1000, seed: int = 0, cells: int = 16) -> InequalityRecord:
    """Level-set measure bound with the dimensional constant on random smooth functions."""
    rng = np.random.default_rng(seed)
    mesh = kuhn_triangulate(2, cells)
    x0 = np.array([0.5, 0.5])
    cut = {k: build_cutoff(mesh, x0, 0.2, k) for k in range(6)}
    X = mesh.points
    ex, unit = [], 0
    for _ in range(count):
        w = rng.normal(size=(3, 2)) * 4
        ph = rng.uniform(0, 2 * np.pi, 3)
        vals = sum(np.sin(X @ w[j] + ph[j]) for j in range(3)) / 3
        u = FeFunction(mesh, vals)
        k = int(rng.integers(0, 5))
        rec = weak_type_check(u, float(rng.uniform(-0.5, 0.3)), k, float(rng.uniform(0.05, 1.0)), cut[k], cut[k + 1])
        C = rec.params["constant"]
        ex.append(rec.lhs - C * rec.rhs * (1 + 1e-10))
        unit += bool(rec.params["unit_constant_holds"])
    return _summary("weak_type_battery", ex, 0.0, {"seed": seed, "unit_constant_holds": unit})


def shift_battery(count: int = 1000, seed: int = 0, rtol: float = 1e-10) -> InequalityRecord:
    """The commutator defect is unchanged when constants are added to either factor."""
    rng = np.random.default_rng(seed)
    meshes = [_perturbed_kuhn(rng, 2, 3), _perturbed_kuhn(rng, 3, 2)]
    ex = []
    for _ in range(count):
        mesh = meshes[int(rng.integers(2))]
        u = FeFunction(mesh, rng.normal(size=mesh.num_nodes))
        w = FeFunction(mesh, rng.normal(size=mesh.num_nodes))
        a, b = rng.uniform(-10, 10, 2)
        d0 = fem.product_commutator_defect(u, w)
        d1 = fem.product_commutator_defect(u + a, w - b)
        scale = max(1.0, float(d0.value.max()), float(d0.gradient.max()))
        diff = max(float(np.abs(d0.value - d1.value).max()), float(np.abs(d0.gradient - d1.gradient).max()))
        ex.append(diff / scale)
    return _summary("proj_product_shift_battery", ex, rtol, {"seed": seed})


def prod_rearrange_battery(count: int = 1000, seed: int = 0, cases=((2, 1), (2, 2), (3, 1), (3, 2))) -> InequalityRecord:
    """``1 <= ∏ max|a_j| / ⨍|∏ a_j| <= C(n, m)`` for random affine factors."""
    rng = np.random.default_rng(seed)
    consts = {c: prod_rearrange_constant(*c) for c in cases}
    ex = []
    per = -(-count // len(cases))
    for (n, m) in cases:
        factors = [rng.uniform(-1, 1, (per, n + 1)) for _ in range(m)]
        r = prod_rearrange_ratio(factors)
        r = r[np.isfinite(r) & (r > 0)]
        ex.extend(np.maximum(1.0 - r, r / consts[(n, m)] - 1.0))
    return _summary("prod_rearrange_battery", ex[:max(count, len(ex))], 1e-9,
                    {"seed": seed, "constants": {f"{n},{m}": v for (n, m), v in consts.items()}})


def geometric_battery(count: int = 1000, seed: int = 0) -> InequalityRecord:
    """Sequences obeying the fast-geometric recursion stay below the closed-form envelope."""
    rng = np.random.default_rng(seed)
    ex = []
    for _ in range(count):
        C, b, alpha = rng.uniform(0.2, 5), rng.uniform(1.1, 8), rng.uniform(0.2, 2)
        gamma = float(rng.uniform(0.1, 10)) if rng.random() < 0.5 else None
        g = 1.0 if gamma is None else gamma
        thr = C ** (-1 / alpha) * b ** (-1 / alpha ** 2)
        s = [thr * rng.uniform(0, 1)]
        for k in range(30):
            s.append(C * b ** k * s[-1] ** (1 + alpha) * rng.uniform(0, 1))
        res = fast_geometric_bound(g * np.array(s), C, b, alpha, gamma)
        excess = np.max(g * np.array(s) / res.bounds - 1.0)
        ex.append(excess if res.hypothesis_ok else np.inf)
    return _summary("fast_geometric_battery", ex, 1e-10, {"seed": seed})


def telescoping_battery(count: int = 1000, seed: int = 0) -> InequalityRecord:
    """Sequences with ``a_{k+1}² <= c_k (a_k - a_{k+1})`` obey the ``1/√k`` envelope."""
    rng = np.random.default_rng(seed)
    ex = []
    for _ in range(count):
        K = int(rng.integers(5, 60))
        c = rng.uniform(0.01, 10, K)
        a = [float(rng.uniform(0.1, 10))]
        for k in range(K - 1):
            top = 0.5 * (-c[k] + np.sqrt(c[k] ** 2 + 4 * c[k] * a[-1]))
            a.append(top * rng.uniform(0.5, 1.0))
        res = telescoping_bound(c, np.array(a))
        excess = np.max(np.array(a[1:]) / res.envelope - 1.0) if K > 1 else 0.0
        ex.append(excess if res.hypothesis_ok else np.inf)
    return _summary("telescoping_battery", ex, 1e-10, {"seed": seed})


def _random_load(rng, base: LoadData) -> LoadData:
    a, b, c = rng.uniform(-1, 1, 3)
    s = float(rng.uniform(-1, 1))
    f = lambda x, a=a, b=b, c=c: a + b * x[..., 0] + c * x[..., 1]  # noqa: E731
    return LoadData(f, base.F and (lambda x, s=s: s * base.F(x)), base.G and (lambda x, s=s: abs(s) * base.G(x)))


def nodal_max_battery(trials: int = 100, seed: int = 0, level: int = 3) -> list[InequalityRecord]:
    """Nodal maxima and positive parts of discrete solutions on the sign-changing problem."""
    rng = np.random.default_rng(seed)
    prob = sign_changing_F()
    mesh = prob.level_mesh(level)
    A = prob.A
    ex_max, ex_pos = [], []
    for _ in range(trials):
        l1, l2 = _random_load(rng, prob.load), _random_load(rng, prob.load)
        u, v = fem.solve(mesh, A, l1), fem.solve(mesh, A, l2)
        rep = conditions.verify_nodal_max_theorem(u, v, l1, l2, A)
        ex_max.append(rep.max_violation / rep.scale if rep.scale > 0 else 0.0)
        c = float(rng.uniform(0, 1)) * float(np.abs(u.values).max())
        rep = conditions.verify_subsolution(fem.nodal_positive_part(u, c), A, l1.dominated())
        ex_pos.append(rep.max_violation / rep.scale if rep.scale > 0 else 0.0)
    tol = conditions.SUBSOLUTION_TOL
    return [_summary("nodal_max_battery", ex_max, tol, {"seed": seed, "level": level}),
            _summary("positive_part_battery", ex_pos, tol, {"seed": seed, "level": level})]


def unconditional_batteries(count: int = 1000, seed: int = 0) -> list[InequalityRecord]:
    return [jensen_battery(count, seed), weak_type_battery(count, seed), shift_battery(count, seed),
            prod_rearrange_battery(count, seed), geometric_battery(count, seed), telescoping_battery(count, seed)]
