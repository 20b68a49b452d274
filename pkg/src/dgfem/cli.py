"""Command line entry point: ``dgfem <subcommand> [options]``."""
from __future__ import annotations

import argparse
import configparser
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import audits, conditions, fem, report, studies
from .errors import DgfemError, FixedPointError, MeshFormatError, SolverError, UnsupportedDimensionError
from .fem import CoefficientField, LoadData
from .inequalities import InequalityRecord
from .mesh import shape_regularity
from .meshio import read_mesh, write_function
from .problems import PROBLEM_NAMES, BenchmarkProblem, custom_problem, get_problem

log = logging.getLogger("dgfem")

EXIT_OK, EXIT_FAIL, EXIT_PARSE = 0, 1, 2


@dataclass
class ExperimentConfig:
    problem: str = "checkerboard"
    ratio: float | None = None
    problem_params: dict = field(default_factory=dict)
    mesh: str | None = None
    coef: str = "identity"
    levels: list = field(default_factory=lambda: list(range(1, 7)))
    adaptive: bool = False
    mark_fraction: float = studies.DEFAULT_FRACTION
    out: str = "dgfem-out"
    seed: int = 0
    svg: bool = False
    count: int = 1000

    def __post_init__(self):
        if not self.levels or min(self.levels) < 1:
            raise ValueError("levels must be >= 1")
        if not 0 < self.mark_fraction <= 1:
            raise ValueError("mark fraction must lie in (0, 1]")

    def build_problem(self) -> BenchmarkProblem:
        if self.problem == "custom" or (self.problem_params and self.problem not in PROBLEM_NAMES):
            return custom_problem(dict(self.problem_params, name=self.problem))
        return get_problem(self.problem, self.ratio)


def parse_levels(text: str) -> list[int]:
    """``"6"`` means 1..6, ``"4:7"`` or ``"4-7"`` a closed range, ``"3,5,7"`` a list."""
    text = str(text).strip()
    for sep in (":", "-"):
        if sep in text:
            a, b = text.split(sep, 1)
            return list(range(int(a), int(b) + 1))
    if "," in text:
        return sorted({int(t) for t in text.split(",")})
    return list(range(1, int(text) + 1))


def _coefficient(spec: str) -> CoefficientField:
    if spec == "identity":
        return CoefficientField.identity()
    try:
        return CoefficientField.constant(float(spec))
    except ValueError:
        pass
    return get_problem(spec).A


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    values: dict = {}
    params: dict = {}
    if getattr(args, "config", None):
        cp = configparser.ConfigParser()
        if not cp.read(args.config, encoding="utf-8"):
            raise FileNotFoundError(args.config)
        if cp.has_section("problem"):
            params = dict(cp.items("problem"))
            values["problem"] = params.pop("name", "custom")
            if "ratio" in params:
                values["ratio"] = float(params.pop("ratio"))
        if cp.has_section("study"):
            st = cp["study"]
            for key in ("mesh", "coef", "out"):
                if key in st:
                    values[key] = st[key]
            if "levels" in st:
                values["levels"] = parse_levels(st["levels"])
            if "adaptive" in st:
                values["adaptive"] = st.getboolean("adaptive")
            if "mark_fraction" in st:
                values["mark_fraction"] = st.getfloat("mark_fraction")
            if "seed" in st:
                values["seed"] = st.getint("seed")
            if "svg" in st:
                values["svg"] = st.getboolean("svg")
            if "count" in st:
                values["count"] = st.getint("count")
    for key in ("problem", "ratio", "mesh", "coef", "out", "seed", "count", "mark_fraction"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if getattr(args, "levels", None) is not None:
        values["levels"] = parse_levels(args.levels)
    if getattr(args, "adaptive", False):
        values["adaptive"] = True
    if getattr(args, "svg", False):
        values["svg"] = True
    return ExperimentConfig(problem_params=params, **values)


def _finish(records: list[InequalityRecord], paths: dict) -> int:
    for kind, p in paths.items():
        print(f"{kind}: {p}")
    bad = [r for r in records if r.status == "violation"]
    print("result:", "pass" if not bad else f"FAIL ({len(bad)} violated checks)")
    return EXIT_OK if not bad else EXIT_FAIL


# --- subcommands ----------------------------------------------------------------------------

def cmd_solve(cfg: ExperimentConfig) -> int:
    problem = cfg.build_problem()
    if cfg.mesh:
        mesh = read_mesh(cfg.mesh)
        A, load = (_coefficient(cfg.coef), problem.load) if cfg.coef != "problem" else (problem.A, problem.load)
    else:
        mesh = problem.level_mesh(max(cfg.levels))
        A, load = problem.A, problem.load
    system = fem.assemble(mesh, A, load)
    u = fem.solve_dirichlet(system)
    cert = conditions.check_nonobtuse(mesh, A)
    rec = InequalityRecord("galerkin_defect", max(cfg.levels), system.galerkin_defect(u), 1e-9,
                           {"nodes": mesh.num_nodes, "cells": mesh.num_cells})
    rec.status = "ok" if rec.lhs <= rec.rhs else "violation"
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_function(u.values, out / "solution.txt")
    lines = [("problem", problem.name), ("nodes", mesh.num_nodes), ("cells", mesh.num_cells),
             ("min", float(u.values.min())), ("max", float(u.values.max())),
             ("galerkin_defect", rec.lhs), ("nonobtuse", cert.passed)]
    summary = report.summarize("solve", lines, [rec])
    print(summary, end="")
    paths = report.write_report(out, "solve", [rec], summary)
    paths["solution"] = out / "solution.txt"
    return _finish([rec], paths)


def cmd_audit_mesh(cfg: ExperimentConfig) -> int:
    if cfg.mesh:
        mesh = read_mesh(cfg.mesh)
    else:
        mesh = cfg.build_problem().level_mesh(max(cfg.levels))
    A = _coefficient(cfg.coef)
    cert = conditions.check_nonobtuse(mesh, A)
    _, gamma_max = shape_regularity(mesh)
    print(cert.to_text(), end="")
    print(f"shape_regularity: {gamma_max!r}")
    print(f"ellipticity: {A.certificate(mesh)}")
    return EXIT_OK if cert.passed else EXIT_FAIL


def _subsolution_records(problem, solutions) -> list[InequalityRecord]:
    out = []
    for L, u in sorted(solutions.items()):
        rep = conditions.verify_subsolution(u, problem.A, problem.load)
        rec = InequalityRecord("discrete_subsolution", L, max(rep.max_violation, 0.0), rep.tolerance,
                               {"scale": rep.scale, "kind": "unconditional"})
        rec.status = "ok" if rep.passed else "violation"
        out.append(rec)
    return out


def _envelope_record(name: str, records, factor=studies.UNIFORMITY_FACTOR) -> InequalityRecord:
    holds, top, first = studies.envelope_holds(records, factor=factor)
    rec = InequalityRecord(name, max((r.level for r in records), default=0), top, factor * first,
                           {"max_first_three": first, "factor": factor, "kind": "envelope"})
    rec.status = "ok" if holds else "violation"
    return rec


def _holder_records(problem, solutions, growth_levels=4):
    keys = sorted(solutions)
    st = studies.holder_study(problem, solutions, seminorm_levels=keys[-growth_levels:])
    recs = st.records()
    if st.alpha is None:
        recs.append(InequalityRecord("oscillation_alpha", keys[-1], 0.0, 1.0,
                                     {"reason": "no level resolves the fit window", "kind": "envelope"},
                                     status="violation"))
    return st, recs


def _holder_tables(st) -> str:
    rows = [[lv.level, lv.cells, lv.h_min, lv.alpha, lv.theta] for lv in st.levels]
    text = report.table(["level", "cells", "h_min", "alpha", "theta"], rows)
    if st.seminorms:
        text += "\n" + report.table(["level", f"seminorm(alpha={st.alpha:.4f})"],
                                    [[L, s] for L, s in sorted(st.seminorms.items())])
    return text


def _osc_svg(st, title):
    series = {f"level {lv.level}": (list(lv.radii), list(lv.osc)) for lv in st.levels}
    return report.loglog_svg(series, title=title, xlabel="radius", ylabel="oscillation")


def cmd_degiorgi_study(cfg: ExperimentConfig) -> int:
    problem = cfg.build_problem()
    meshes = studies.family(problem, cfg.levels, cfg.adaptive, cfg.mark_fraction)
    solutions = studies.solve_family(problem, meshes)
    records = _subsolution_records(problem, solutions)
    st, hrec = _holder_records(problem, solutions)
    records += hrec
    cac = studies.caccioppoli_study(problem, solutions)
    records += cac + [_envelope_record("caccioppoli_uniformity", cac)]
    poi = studies.poincare_study(solutions)
    records += poi + [_envelope_record("poincare_uniformity", poi)]
    lines = [("problem", problem.name), ("ratio", problem.params.get("ratio")),
             ("reference_exponent", problem.reference_exponent), ("family", "adaptive" if cfg.adaptive else "uniform"),
             ("levels", cfg.levels), ("fitted_alpha", st.alpha)]
    summary = report.summarize("degiorgi-study", lines, records) + "\n" + _holder_tables(st)
    print(summary, end="")
    svg = _osc_svg(st, f"{problem.name}: oscillation decay") if cfg.svg else None
    return _finish(records, report.write_report(cfg.out, "degiorgi_study", records, summary, svg))


def cmd_verify_inequalities(cfg: ExperimentConfig) -> int:
    records = audits.unconditional_batteries(cfg.count, cfg.seed)
    records += audits.nodal_max_battery(max(1, cfg.count // 10), cfg.seed)
    lines = [(r.name, f"{r.status} ({r.params['violations']}/{r.params['instances']} violations)") for r in records]
    summary = report.summarize("verify-inequalities", [("seed", cfg.seed), ("instances", cfg.count)] + lines, records)
    print(summary, end="")
    return _finish(records, report.write_report(cfg.out, "verify_inequalities", records, summary))


def _scalar_rule(problem: BenchmarkProblem):
    rule = problem.A.rule
    if not problem.A.scalar:
        raise DgfemError("the quasilinear study needs a scalar coefficient")
    return (lambda x: np.full(len(x), float(rule))) if not callable(rule) else rule


def quasilinear_coefficient(problem: BenchmarkProblem):
    base = _scalar_rule(problem)

    def a(x, values, gradients):
        return np.asarray(base(x), dtype=float).reshape(-1) * studies.bounded_coefficient(x, values, gradients)
    return a


def quasilinear_bounds(problem: BenchmarkProblem, mesh):
    lo, hi = problem.A.certificate(mesh)
    return lo * studies.QUASILINEAR_BOUNDS[0], hi * studies.QUASILINEAR_BOUNDS[1]


def truncation_records(problem, level, res, quantiles=(0.25, 0.5, 0.75)) -> list[InequalityRecord]:
    """Positive parts of ``±u - c`` against the frozen coefficient of the final solve."""
    A = res.coefficient
    out = []
    for sign, load in ((1, problem.load), (-1, problem.load.scaled(-1.0))):
        v = res.u if sign > 0 else -res.u
        for q in quantiles:
            c = max(0.0, float(np.quantile(v.values, q)))
            rep = conditions.verify_subsolution(fem.nodal_positive_part(v, c), A, load.dominated())
            rec = InequalityRecord("truncation_subsolution", level, max(rep.max_violation, 0.0), rep.tolerance,
                                   {"sign": sign, "c": c, "scale": rep.scale, "kind": "unconditional"})
            rec.status = "ok" if rep.passed else "violation"
            out.append(rec)
    return out


def cmd_quasilinear_study(cfg: ExperimentConfig) -> int:
    problem = cfg.build_problem()
    meshes = studies.family(problem, cfg.levels, cfg.adaptive, cfg.mark_fraction)
    a = quasilinear_coefficient(problem)
    records, solutions, rows = [], {}, []
    for L, mesh in sorted(meshes.items()):
        try:
            res = studies.solve_quasilinear(mesh, a, problem.load, bounds=quasilinear_bounds(problem, mesh))
        except FixedPointError as exc:
            records.append(InequalityRecord("picard_convergence", L, float(len(exc.history)), 200.0,
                                            {"reason": str(exc), "kind": "unconditional"}, status="violation"))
            continue
        rec = InequalityRecord("picard_convergence", L, float(res.iterations), 200.0,
                               {"final_change": res.changes[-1] if res.changes else 0.0, "kind": "unconditional"})
        rec.status = "ok" if res.iterations <= 200 else "violation"
        records.append(rec)
        records += truncation_records(problem, L, res)
        solutions[L] = res.u
        rows.append([L, mesh.num_cells, res.iterations, res.changes[-1] if res.changes else 0.0])
    frozen = BenchmarkProblem(problem.name + "-quasilinear", problem.domain, problem.A, problem.load,
                              None, None, problem.cells_multiple, problem.params)
    st = None
    if solutions:
        st, hrec = _holder_records(frozen, solutions)
        records += hrec
        if st.alpha is not None:
            rec = InequalityRecord("positive_alpha", max(solutions), st.alpha, 1.0, {"kind": "envelope"})
            rec.status = "ok" if st.alpha > 0 else "violation"
            records.append(rec)
    lines = [("problem", problem.name), ("levels", cfg.levels),
             ("family", "adaptive" if cfg.adaptive else "uniform"), ("fitted_alpha", st.alpha if st else None)]
    summary = (report.summarize("quasilinear-study", lines, records) + "\n"
               + report.table(["level", "cells", "picard_steps", "last_change"], rows))
    if st is not None:
        summary += "\n" + _holder_tables(st)
    print(summary, end="")
    svg = _osc_svg(st, f"{problem.name}: quasilinear oscillation decay") if (cfg.svg and st) else None
    return _finish(records, report.write_report(cfg.out, "quasilinear_study", records, summary, svg))


COMMANDS = {
    "solve": cmd_solve,
    "audit-mesh": cmd_audit_mesh,
    "degiorgi-study": cmd_degiorgi_study,
    "verify-inequalities": cmd_verify_inequalities,
    "quasilinear-study": cmd_quasilinear_study,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dgfem", description="P1 finite elements and discrete De Giorgi diagnostics")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value file with [problem] and [study] sections")
        p.add_argument("--problem", help=f"one of {', '.join(PROBLEM_NAMES)}")
        p.add_argument("--ratio", type=float, help="checkerboard coefficient ratio")
        p.add_argument("--mesh", help="mesh file (dgfem-mesh v1)")
        p.add_argument("--coef", help="identity, a number, or a problem name")
        p.add_argument("--levels", help="N (1..N), A:B, or a comma list")
        p.add_argument("--adaptive", action="store_true", help="graded family by Dörfler marking")
        p.add_argument("--mark-fraction", dest="mark_fraction", type=float)
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--svg", action="store_true", help="write a log-log chart")
        if name == "verify-inequalities":
            p.add_argument("--count", type=int, help="instances per battery")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg)
    except (MeshFormatError, UnsupportedDimensionError) as exc:
        print(f"error: mesh parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (configparser.Error, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (SolverError, DgfemError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
