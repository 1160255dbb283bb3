"""Error norms against exact solutions and convergence studies over mesh
sequences."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import geometry, mesh as meshmod, solver
from .errors import MissingExactSolutionError
from .fem import Discretization, FeSpace, ProblemSpec

logger = logging.getLogger(__name__)


@dataclass
class ErrorReport:
    h: float
    rel_h10: float
    rel_l2: float
    kappa: float
    dofs: int


@dataclass
class ConvergenceTable:
    rows: list[ErrorReport] = field(default_factory=list)
    h10_orders: list[float] = field(default_factory=list)
    l2_orders: list[float] = field(default_factory=list)


def relative_errors(space: FeSpace, coeffs: np.ndarray, problem: ProblemSpec,
                    depth: int) -> tuple[float, float]:
    """Relative errors ||a^1/2 grad_x (u - u_h)|| / ||a^1/2 grad_x u|| and
    ||u - u_h|| / ||u|| over the cut volume.

    The error quadrature reuses the assembly classification but must be at
    least one subdivision level finer than it.
    """
    if problem.exact_solution is None or problem.exact_spatial_gradient is None:
        raise MissingExactSolutionError(
            "problem has no exact solution registered; error norms unavailable"
        )
    if depth < space.classification.depth + 1:
        raise ValueError("error quadrature depth must exceed the assembly depth")

    d = problem.d
    guh = np.einsum("ei,eik->ek", coeffs[space.elem_dofs], space.grads[:, :, :d])
    num_h10 = den_h10 = num_l2 = den_l2 = 0.0
    chunk = 1024 if space.mesh.dim == 3 else 4096
    for vol, _ in geometry.rule_chunks(
        space.mesh, space.classification, depth, want_volume=True,
        want_surface=False, chunk_elems=chunk,
    ):
        if vol is None or len(vol.weights) == 0:
            continue
        pos = space.elem_pos[vol.elem]
        w = vol.weights
        a = problem.diffusion(vol.points)
        u = problem.exact_solution(vol.points)
        gu = problem.exact_spatial_gradient(vol.points)
        uh = np.einsum("qi,qi->q", coeffs[space.elem_dofs[pos]], space.basis_at(pos, vol.points))
        gerr = gu - guh[pos]
        num_h10 += float(np.sum(w * a * np.einsum("qk,qk->q", gerr, gerr)))
        den_h10 += float(np.sum(w * a * np.einsum("qk,qk->q", gu, gu)))
        num_l2 += float(np.sum(w * (u - uh) ** 2))
        den_l2 += float(np.sum(w * u**2))

    return float(np.sqrt(num_h10 / den_h10)), float(np.sqrt(num_l2 / den_l2))


def convergence_orders(errors) -> list[float]:
    """order_k = log2(e_k / e_{k+1}); zero or negative entries flag as nan."""
    errors = list(errors)
    if len(errors) < 2:
        raise ValueError("need at least two error values")
    orders = []
    for e0, e1 in zip(errors[:-1], errors[1:]):
        if e0 <= 0.0 or e1 <= 0.0:
            logger.warning("non-positive error entry; order undefined")
            orders.append(float("nan"))
        else:
            orders.append(float(np.log2(e0 / e1)))
    return orders


def _check_halving(hs) -> None:
    for h0, h1 in zip(hs[:-1], hs[1:]):
        if abs(h0 / h1 - 2.0) > 1e-9:
            raise ValueError(f"mesh sizes do not halve: {h0} -> {h1}")


def run_convergence_study(
    problem: ProblemSpec,
    base_mesh: meshmod.BackgroundMesh,
    n_refinements: int,
    depth: int = 4,
    error_depth: int | None = None,
    solver_tol: float = 1e-10,
    compute_kappa: bool = True,
    on_level=None,
) -> ConvergenceTable:
    """Assemble, solve and measure errors and kappa(A) on a refinement sequence.

    ``on_level(k, disc, solution, report)`` is invoked after each level, which
    lets callers export the finest solution without a second run.
    """
    if n_refinements < 1:
        raise ValueError("need at least one refinement")
    if error_depth is None:
        error_depth = depth + 2

    table = ConvergenceTable()
    mesh = base_mesh
    for level in range(n_refinements + 1):
        if level > 0:
            mesh = meshmod.uniform_refine(mesh)
        try:
            disc = Discretization(problem, mesh, depth=depth)
            rep = solver.solve(disc.system, tol=solver_tol)
            rel_h10, rel_l2 = relative_errors(disc.space, rep.solution, problem, error_depth)
            kappa = float("nan")
            if compute_kappa:
                kappa = solver.condition_number(disc.system).kappa
        except Exception as exc:
            raise RuntimeError(
                f"convergence study failed on level {level} "
                f"(h_grid={mesh.h_grid}, h={mesh.sizes.h:.4g}): {exc}"
            ) from exc
        h = mesh.h_grid if mesh.h_grid is not None else mesh.sizes.h
        report = ErrorReport(h=float(h), rel_h10=rel_h10, rel_l2=rel_l2,
                             kappa=kappa, dofs=disc.space.n_dofs)
        table.rows.append(report)
        logger.info(
            "level %d: h=%.5g dofs=%d H10=%.4e L2=%.4e kappa=%.3e",
            level, h, report.dofs, rel_h10, rel_l2, kappa,
        )
        if on_level is not None:
            on_level(level, disc, rep.solution, report)

    _check_halving([r.h for r in table.rows])
    table.h10_orders = convergence_orders([r.rel_h10 for r in table.rows])
    table.l2_orders = convergence_orders([r.rel_l2 for r in table.rows])
    return table


def write_csv(table: ConvergenceTable, path) -> None:
    """Emit h, dofs, errors, orders and kappa; order cells are empty on the
    first row."""
    lines = ["h,dofs,h10_err,h10_order,l2_err,l2_order,kappa"]
    for k, row in enumerate(table.rows):
        h10_o = "" if k == 0 else f"{table.h10_orders[k - 1]:.2f}"
        l2_o = "" if k == 0 else f"{table.l2_orders[k - 1]:.2f}"
        lines.append(
            f"{row.h:.10g},{row.dofs},{row.rel_h10:.6e},{h10_o},"
            f"{row.rel_l2:.6e},{l2_o},{row.kappa:.6e}"
        )
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def fit_loglog_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x)."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])
