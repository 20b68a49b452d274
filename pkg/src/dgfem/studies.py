"""Refinement families and the study drivers behind the CLI and the acceptance suite."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fem
from .degiorgi import (build_cutoff, holder_seminorm, oscillation_decay_study, solve_quasilinear)
from .errors import GeometryError
from .fem import FeFunction
from .inequalities import InequalityRecord, caccioppoli_ratio, poincare_vh_ratio, uniformity
from .mesh import Triangulation, bisect
from .problems import BenchmarkProblem

DEFAULT_FRACTION = 0.3
BASE_LEVEL = 2
ALPHA_TOLERANCE = 0.2      # relative distance of the fitted exponent from the reference
GROWTH_ENVELOPE = 0.05     # admissible seminorm growth per level
UNIFORMITY_FACTOR = 2.0


def dorfler_mark(indicators: np.ndarray, fraction: float = DEFAULT_FRACTION) -> np.ndarray:
    """Smallest set of cells (largest indicators first) carrying ``fraction`` of the total."""
    if not 0 < fraction <= 1:
        raise ValueError("marking fraction must lie in (0, 1]")
    eta = np.asarray(indicators, dtype=float)
    order = np.argsort(-eta, kind="stable")
    total = eta.sum()
    if total <= 0:
        return order[:0]
    k = int(np.searchsorted(np.cumsum(eta[order]), fraction * total * (1 - 1e-14))) + 1
    return np.sort(order[:k])


def adaptive_step(problem: BenchmarkProblem, mesh: Triangulation, fraction: float = DEFAULT_FRACTION):
    u = fem.solve(mesh, problem.A, problem.load)
    energy = fem.cell_energy(u, problem.A.on_mesh(mesh))
    return bisect(mesh, dorfler_mark(energy, fraction)), u


def uniform_family(problem: BenchmarkProblem, levels) -> dict[int, Triangulation]:
    return {int(L): problem.level_mesh(int(L)) for L in levels}


def level_diameter(problem: BenchmarkProblem, level: int) -> float:
    """Diameter of every cell of the uniform Kuhn mesh at ``level``."""
    side = float(np.ptp(problem.domain, axis=0).max())
    return side / problem.cells_at_level(level) * np.sqrt(problem.dim)


def adaptive_family(problem: BenchmarkProblem, levels, fraction: float = DEFAULT_FRACTION,
                    base: int = BASE_LEVEL, max_cycles: int = 200) -> dict[int, Triangulation]:
    """Nested graded meshes from Dörfler marking on the uniform mesh at ``base``.

    Level ``L`` is the first mesh of the marking loop whose finest cell is as
    small as the cells of the uniform mesh at ``L``.
    """
    levels = sorted(int(L) for L in levels)
    mesh = problem.level_mesh(min(base, levels[0]))
    out, cycles = {}, 0
    for L in levels:
        target = level_diameter(problem, L) * (1 + 1e-9)
        while mesh.diameters.min() > target:
            if cycles >= max_cycles:
                raise RuntimeError(f"graded level {L} not reached within {max_cycles} marking cycles")
            mesh, _ = adaptive_step(problem, mesh, fraction)
            cycles += 1
        out[L] = mesh
    return out


def family(problem: BenchmarkProblem, levels, adaptive: bool = False,
           fraction: float = DEFAULT_FRACTION) -> dict[int, Triangulation]:
    return adaptive_family(problem, levels, fraction) if adaptive else uniform_family(problem, levels)


def study_center(problem: BenchmarkProblem) -> np.ndarray:
    return problem.domain.mean(axis=0)


def study_radius(problem: BenchmarkProblem) -> float:
    """Largest ``R0`` with ``B(center, 2 R0)`` inside the box."""
    return float(np.ptp(problem.domain, axis=0).min()) / 4


# --- Hölder study ----------------------------------------------------------------------------

@dataclass
class HolderLevel:
    level: int
    cells: int
    nodes: int
    h_min: float
    alpha: float | None
    theta: float | None
    radii: np.ndarray
    osc: np.ndarray


@dataclass
class HolderStudy:
    problem: str
    reference_exponent: float | None
    levels: list
    alpha: float | None                     # exponent from the finest level with a fit
    seminorms: dict = field(default_factory=dict)

    @property
    def growth(self) -> np.ndarray:
        s = np.array([self.seminorms[L] for L in sorted(self.seminorms)])
        return s[1:] / s[:-1] - 1 if len(s) > 1 else np.zeros(0)

    def records(self, alpha_tolerance: float = ALPHA_TOLERANCE,
                growth: float = GROWTH_ENVELOPE) -> list[InequalityRecord]:
        """Exponent and seminorm-growth envelopes as records (status ``violation`` when broken)."""
        out = []
        gamma = self.reference_exponent
        for lv in self.levels:
            if lv.alpha is None:
                continue
            params = {"alpha": lv.alpha, "theta": lv.theta, "cells": lv.cells, "reference": gamma,
                      "kind": "envelope"}
            if gamma is None:
                out.append(InequalityRecord("oscillation_alpha", lv.level, lv.alpha, 1.0, params))
                continue
            rec = InequalityRecord("oscillation_alpha", lv.level, abs(lv.alpha - gamma),
                                   alpha_tolerance * gamma, params)
            rec.status = "ok" if rec.ratio <= 1 else "violation"
            out.append(rec)
        keys = sorted(self.seminorms)
        for a, b in zip(keys, keys[1:]):
            rec = InequalityRecord("holder_seminorm_growth", b, self.seminorms[b],
                                   (1 + growth) * self.seminorms[a],
                                   {"alpha": self.alpha, "previous": self.seminorms[a], "kind": "envelope"})
            rec.status = "ok" if rec.ratio <= 1 else "violation"
            out.append(rec)
        return out


def holder_study(problem: BenchmarkProblem, solutions: dict[int, FeFunction], x0=None, R0=None,
                 alpha_levels=None, seminorm_levels=None) -> HolderStudy:
    """Fitted decay exponents per level and the global seminorm at the finest fitted exponent."""
    x0 = study_center(problem) if x0 is None else np.asarray(x0, dtype=float)
    R0 = study_radius(problem) if R0 is None else float(R0)
    keys = sorted(solutions)
    alpha_levels = keys if alpha_levels is None else sorted(alpha_levels)
    seminorm_levels = keys if seminorm_levels is None else sorted(seminorm_levels)
    rows = []
    for L in alpha_levels:
        u = solutions[L]
        rep = oscillation_decay_study(u, x0, R0)
        rows.append(HolderLevel(L, u.mesh.num_cells, u.mesh.num_nodes, float(u.mesh.diameters.min()),
                                rep.alpha, rep.theta, rep.radii, rep.osc))
    fitted = [r.alpha for r in rows if r.alpha is not None]
    alpha = fitted[-1] if fitted else None
    seminorms = {}
    if alpha is not None and alpha > 0:
        seminorms = {L: holder_seminorm(solutions[L], alpha) for L in seminorm_levels}
    return HolderStudy(problem.name, problem.reference_exponent, rows, alpha, seminorms)


def solve_family(problem: BenchmarkProblem, meshes: dict[int, Triangulation]) -> dict[int, FeFunction]:
    return {L: fem.solve(m, problem.A, problem.load) for L, m in meshes.items()}


# --- inequality studies -----------------------------------------------------------------------

def caccioppoli_study(problem: BenchmarkProblem, solutions: dict[int, FeFunction], x0=None, R=None,
                      c: float | None = None, k: int = 0) -> list[InequalityRecord]:
    """Caccioppoli ratio of ``(u - c)_+`` against the level-``k`` cutoff on ``B(x0, R)``.

    Defaults: the box center, half the study radius (the cutoff then lives on
    the central quarter) and ``c`` the median nodal value. Levels too coarse
    for the ball are recorded as skipped.
    """
    x0 = study_center(problem) if x0 is None else np.asarray(x0, dtype=float)
    R = study_radius(problem) / 2 if R is None else float(R)
    out = []
    for L, u in sorted(solutions.items()):
        level_c = float(np.median(u.values)) if c is None else float(c)
        try:
            eta = build_cutoff(u.mesh, x0, R, k)
        except GeometryError as exc:
            out.append(InequalityRecord("caccioppoli", L, 0.0, 0.0, {"reason": str(exc)}, status="skipped"))
            continue
        out.append(caccioppoli_ratio(u, level_c, eta, problem.load, problem.A, level=L))
    return out


def poincare_study(solutions: dict[int, FeFunction], c: float | None = None, gamma: float = 0.25,
                   region=None) -> list[InequalityRecord]:
    """Poincaré ratio of ``(u - c)_+`` on ``region(mesh)`` (all cells by default, ``c`` the median)."""
    out = []
    for L, u in sorted(solutions.items()):
        level_c = float(np.median(u.values)) if c is None else float(c)
        v = fem.nodal_positive_part(u, level_c)
        cells = None if region is None else region(u.mesh)
        out.append(poincare_vh_ratio(v, cells, gamma, level=L))
    return out


def envelope_holds(records: list[InequalityRecord], head: int = 3, factor: float = UNIFORMITY_FACTOR):
    ratios = [r.ratio for r in records if r.status != "skipped"]
    return uniformity(ratios, head, factor)


# --- quasilinear study ------------------------------------------------------------------------

def bounded_coefficient(x, values, gradients):
    """``a(x, u, ∇u) = 1 + 1 / (1 + |∇u|²) + u² / (1 + u²)``, with values in [1, 3]."""
    g2 = np.einsum("mk,mk->m", gradients, gradients)
    return 1.0 + 1.0 / (1.0 + g2) + values ** 2 / (1.0 + values ** 2)


QUASILINEAR_BOUNDS = (1.0, 3.0)


def quasilinear_family(problem: BenchmarkProblem, meshes: dict[int, Triangulation], a=bounded_coefficient,
                       bounds=QUASILINEAR_BOUNDS, **kw):
    return {L: solve_quasilinear(m, a, problem.load, bounds=bounds, **kw) for L, m in meshes.items()}
