"""Experiment drivers: convergence studies, the small-cut sweep and the
boundary-layer comparison, with CSV/SVG/VTK outputs.

Configs are flat key = value text files (see configs/ in the repository).
Reruns with the same config are byte-identical.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, problems, solver, svgplot
from .fem import Discretization
from .mesh import SpaceTimeBox, build_cartesian_simplicial_mesh, uniform_refine
from .vtk import write_vtk

logger = logging.getLogger(__name__)

# per-problem defaults: background cells, refinements, depth, error depth
# (None = depth + 2; the 3D runs use depth + 1 to stay at desk scale)
_DEFAULT_SETUP = {
    "stefan": ((12, 8), 4, 4, None),
    "oscillating_interval": ((14, 14), 3, 4, None),
    "moving_circle": ((12, 12, 12), 2, 3, 4),
    "flower": ((16, 16, 8), 2, 3, 4),
    "small_cut": ((9, 9), 0, 4, None),
    "boundary_layer": ((7, 7), 4, 4, None),
}


@dataclass
class ExperimentConfig:
    problem: str
    n_cells: tuple[int, ...]
    refinements: int
    depth: int
    error_depth: int | None = None
    gamma: float | None = None
    gamma1: float | None = None
    delta: float | None = None
    solver_tol: float = 1e-10
    out: str = "out"
    shifts: tuple[float, ...] | None = None  # small_cut sweep
    delta_c: tuple[float, ...] = (0.0, 0.3)  # boundary_layer cases
    compute_kappa: bool = True

    def __post_init__(self):
        if self.problem not in problems.REGISTRY:
            raise ValueError(f"unknown problem '{self.problem}'")
        if self.refinements < 0 or self.depth < 1:
            raise ValueError("refinements must be >= 0 and depth >= 1")


def default_config(problem: str, out: str = "out") -> ExperimentConfig:
    n_cells, refinements, depth = _DEFAULT_SETUP[problem]
    return ExperimentConfig(problem=problem, n_cells=n_cells,
                            refinements=refinements, depth=depth, out=out)


def load_config(path) -> ExperimentConfig:
    """Parse a flat key = value config file ('#' starts a comment)."""
    raw: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"malformed config line: {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        raw[key.lower()] = value

    if "problem" not in raw:
        raise ValueError("config must set 'problem'")
    cfg = default_config(raw.pop("problem"))

    def ints(s):
        return tuple(int(v) for v in s.split())

    def floats(s):
        return tuple(float(v) for v in s.split())

    converters = {
        "n_cells": ints,
        "refinements": int,
        "depth": int,
        "error_depth": int,
        "gamma": float,
        "gamma1": float,
        "delta": float,
        "solver_tol": float,
        "out": str,
        "shifts": floats,
        "delta_c": floats,
        "compute_kappa": lambda s: s.lower() in ("1", "true", "yes"),
    }
    updates = {}
    for key, value in raw.items():
        if key not in converters:
            raise ValueError(f"unknown config key '{key}'")
        updates[key] = converters[key](value)
    return dataclasses.replace(cfg, **updates)


def _build_problem(config: ExperimentConfig, **kwargs):
    problem = problems.build(config.problem, **kwargs)
    overrides = {
        k: getattr(config, k)
        for k in ("gamma", "gamma1", "delta")
        if getattr(config, k) is not None
    }
    if overrides:
        problem = dataclasses.replace(problem, **overrides)
    return problem


def _base_mesh(problem, n_cells):
    return build_cartesian_simplicial_mesh(problem.box, n_cells)


def small_cut_shifts(n: int = 31, spacing: float = 0.01) -> tuple[float, ...]:
    """Default sweep: a uniform grid of initial shifts where the values nearest
    to a mesh-line tangency are replaced by shifts that park the boundary
    5e-4 from the line (the worst small-cut configurations)."""
    base = [round(k * spacing, 10) for k in range(n)]
    lmax = base[-1]
    a0, b0 = np.pi / 24.0, np.pi / 6.0
    targets = []
    for k in range(1, 9):
        for anchor in (a0, b0):
            l = k / 9.0 - anchor - 5e-4
            if 0.0 <= l <= lmax:
                targets.append(l)
    for t in targets:
        nearest = min(range(n), key=lambda i: abs(base[i] - t))
        base[nearest] = t
    return tuple(sorted(base))


def run_experiment(config: ExperimentConfig) -> int:
    """Run one experiment; returns nonzero when any level/case failed."""
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    if config.problem == "small_cut":
        return _run_small_cut(config, out)
    if config.problem == "boundary_layer":
        return _run_boundary_layer(config, out)
    return _run_convergence(config, out)


def _write_solution_vtk(path, disc: Discretization, coeffs: np.ndarray) -> None:
    mesh = disc.mesh
    u = np.zeros(mesh.n_vertices)
    valid = np.zeros(mesh.n_vertices)
    u[disc.space.dofs] = coeffs
    valid[disc.space.dofs] = 1.0
    write_vtk(path, mesh.vertices, mesh.elements, point_data={"u": u, "valid": valid})


def _run_convergence(config: ExperimentConfig, out: Path) -> int:
    problem = _build_problem(config)
    base = _base_mesh(problem, config.n_cells)
    finest = {}

    def keep_last(level, disc, solution, report):
        if level == config.refinements:
            finest["disc"] = disc
            finest["solution"] = solution

    try:
        table = analysis.run_convergence_study(
            problem, base, config.refinements,
            depth=config.depth, error_depth=config.error_depth,
            solver_tol=config.solver_tol, compute_kappa=config.compute_kappa,
            on_level=keep_last,
        )
    except RuntimeError as exc:
        logger.error("%s failed: %s", config.problem, exc)
        (out / f"{config.problem}_failure.txt").write_text(str(exc) + "\n", encoding="utf-8")
        return 1

    analysis.write_csv(table, out / f"{config.problem}_convergence.csv")
    hs = [r.h for r in table.rows]
    if config.compute_kappa:
        svgplot.loglog_plot(
            out / f"{config.problem}_kappa.svg",
            {"kappa(A)": (hs, [r.kappa for r in table.rows])},
            xlabel="h", ylabel="kappa(A)",
            title=f"{config.problem}: condition number vs h",
        )
    svgplot.loglog_plot(
        out / f"{config.problem}_errors.svg",
        {
            "H^{1,0} error": (hs, [r.rel_h10 for r in table.rows]),
            "L^2 error": (hs, [r.rel_l2 for r in table.rows]),
        },
        xlabel="h", ylabel="relative error",
        title=f"{config.problem}: errors vs h",
    )
    _write_solution_vtk(out / f"{config.problem}_solution.vtk",
                        finest["disc"], finest["solution"])
    return 0


def _run_small_cut(config: ExperimentConfig, out: Path) -> int:
    shifts = config.shifts if config.shifts is not None else small_cut_shifts()
    failures = 0
    for gamma1 in (0.0, 0.1):
        rows = []
        for l in shifts:
            problem = _build_problem(config, l=float(l))
            problem = dataclasses.replace(problem, gamma1=gamma1)
            try:
                mesh = _base_mesh(problem, config.n_cells)
                for _ in range(config.refinements):
                    mesh = uniform_refine(mesh)
                disc = Discretization(problem, mesh, depth=config.depth)
                kappa = solver.condition_number(disc.system).kappa
                # unstabilized systems are near-singular by design: report the
                # solution and its errors whatever the residual
                tol = config.solver_tol if gamma1 > 0 else float("inf")
                rep = solver.solve(disc.system, tol=tol)
                err_depth = config.error_depth or config.depth + 2
                h10, l2 = analysis.relative_errors(disc.space, rep.solution, problem, err_depth)
                rows.append((l, kappa, h10, l2))
            except Exception as exc:
                logger.error("small_cut shift %.5f gamma1=%g failed: %s", l, gamma1, exc)
                rows.append((l, float("nan"), float("nan"), float("nan")))
                failures += 1
        lines = ["l,kappa,h10_err,l2_err"]
        lines += [f"{l:.10g},{k:.6e},{a:.6e},{b:.6e}" for l, k, a, b in rows]
        csv_path = out / f"small_cut_gamma1_{gamma1:g}.csv"
        csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        logger.info("wrote %s (%d shifts)", csv_path, len(rows))
    return 1 if failures else 0


def _run_boundary_layer(config: ExperimentConfig, out: Path) -> int:
    rows = []
    failures = 0
    eps = 2.0e-3
    for delta_c in config.delta_c:
        problem = _build_problem(config, delta_c=float(delta_c))
        if config.delta is not None:
            problem = dataclasses.replace(problem, delta=config.delta)
        try:
            mesh = _base_mesh(problem, config.n_cells)
            for _ in range(config.refinements):
                mesh = uniform_refine(mesh)
            disc = Discretization(problem, mesh, depth=config.depth)
            rep = solver.solve(disc.system, tol=config.solver_tol)
            umin = float(rep.solution.min())
            umax = float(rep.solution.max())
            rows.append((delta_c, umin, umax))
            _write_solution_vtk(out / f"boundary_layer_dc_{delta_c:g}.vtk",
                                disc, rep.solution)
            logger.info("boundary layer delta_c=%g (delta=%g): min=%.5f max=%.5f",
                        delta_c, delta_c / eps, umin, umax)
        except Exception as exc:
            logger.error("boundary_layer delta_c=%g failed: %s", delta_c, exc)
            rows.append((delta_c, float("nan"), float("nan")))
            failures += 1
    lines = ["delta_c,min_u,max_u"]
    lines += [f"{dc:.10g},{lo:.6e},{hi:.6e}" for dc, lo, hi in rows]
    (out / "boundary_layer_minmax.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 1 if failures else 0
