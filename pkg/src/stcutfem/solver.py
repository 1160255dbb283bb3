"""Sparse linear algebra: direct/iterative solve and 2-norm condition number."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SingularMatrixError, SolverConvergenceError
from .fem import LinearSystem

logger = logging.getLogger(__name__)

DENSE_SVD_MAX = 2000
DIRECT_THRESHOLD = 300_000
_PIVOT_REL = 1e-14


@dataclass
class SolveReport:
    solution: np.ndarray
    residual_norm: float  # ||Ax - b|| / ||b||
    method: str  # DirectLU or GMRES
    iterations: int


@dataclass
class ConditionReport:
    sigma_max: float
    sigma_min: float
    kappa: float
    method: str  # DenseSVD or PowerIteration
    converged: bool = True


def _check_square(a: sp.spmatrix):
    if a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    empty = np.nonzero(np.diff(a.tocsr().indptr) == 0)[0]
    if len(empty):
        raise SingularMatrixError(f"matrix has {len(empty)} empty rows")


def _lu_factor(a: sp.spmatrix):
    try:
        lu = spla.splu(a.tocsc())
    except RuntimeError as exc:  # SuperLU reports exactly singular factors
        raise SingularMatrixError(str(exc)) from exc
    umin = np.abs(lu.U.diagonal()).min()
    if umin < _PIVOT_REL * np.abs(a).max():
        raise SingularMatrixError(f"pivot {umin:.3e} below tolerance")
    return lu


def solve(system: LinearSystem, tol: float = 1e-10,
          direct_threshold: int = DIRECT_THRESHOLD) -> SolveReport:
    """Solve A x = b: sparse LU by default, preconditioned GMRES beyond
    ``direct_threshold`` unknowns.  One step of iterative refinement keeps the
    direct residual at rounding level."""
    a = system.A.tocsr()
    b = np.asarray(system.b, dtype=float)
    _check_square(a)
    bnorm = np.linalg.norm(b)
    scale = bnorm if bnorm > 0 else 1.0

    if system.n <= direct_threshold:
        lu = _lu_factor(a)
        x = lu.solve(b)
        for _ in range(2):
            r = b - a @ x
            if np.linalg.norm(r) / scale <= tol:
                break
            x = x + lu.solve(r)
        residual = np.linalg.norm(b - a @ x) / scale
        if not np.isfinite(residual) or (np.isfinite(tol) and residual > tol):
            raise SolverConvergenceError(
                f"direct solve residual {residual:.3e} exceeds tol {tol:.1e}"
            )
        return SolveReport(solution=x, residual_norm=float(residual),
                           method="DirectLU", iterations=0)

    ilu = spla.spilu(a.tocsc(), drop_tol=1e-5, fill_factor=20)
    prec = spla.LinearOperator(a.shape, ilu.solve)
    iterations = 0

    def _count(_):
        nonlocal iterations
        iterations += 1

    x, info = spla.gmres(a, b, rtol=tol, restart=100, maxiter=200, M=prec,
                         callback=_count, callback_type="pr_norm")
    residual = np.linalg.norm(b - a @ x) / scale
    if info != 0 or residual > tol:
        raise SolverConvergenceError(
            f"GMRES failed (info={info}, residual {residual:.3e})"
        )
    return SolveReport(solution=x, residual_norm=float(residual),
                       method="GMRES", iterations=iterations)


def condition_number(system: LinearSystem, dense_threshold: int = DENSE_SVD_MAX,
                     tol: float = 1e-6, max_iter: int = 10000,
                     seed: int = 0) -> ConditionReport:
    """Euclidean condition number sigma_max / sigma_min.

    Small systems use a dense SVD; larger ones use power iteration on A^T A
    for sigma_max and LU-based inverse iteration for sigma_min, each run to
    relative change below ``tol``.
    """
    a = system.A.tocsr()
    _check_square(a)
    n = a.shape[0]
    if n <= dense_threshold:
        svals = np.linalg.svd(a.toarray(), compute_uv=False)
        smax, smin = float(svals[0]), float(svals[-1])
        if smin <= 0.0:
            raise SingularMatrixError("zero singular value")
        return ConditionReport(smax, smin, smax / smin, "DenseSVD")

    rng = np.random.default_rng(seed)
    at = a.T.tocsr()

    def _power(apply_op):
        x = rng.standard_normal(n)
        x /= np.linalg.norm(x)
        est_prev = 0.0
        converged = False
        for _ in range(max_iter):
            y = apply_op(x)
            est = float(x @ y)  # Rayleigh quotient, PSD operator
            ny = np.linalg.norm(y)
            if ny == 0.0:
                raise SingularMatrixError("operator annihilated the iterate")
            x = y / ny
            if est_prev > 0 and abs(est - est_prev) <= tol * est:
                converged = True
                break
            est_prev = est
        return est, converged

    lam_max, conv_max = _power(lambda x: at @ (a @ x))
    lu = _lu_factor(a)
    lam_inv, conv_min = _power(lambda x: lu.solve(lu.solve(x, trans="T")))

    smax = float(np.sqrt(lam_max))
    smin = float(1.0 / np.sqrt(lam_inv))
    converged = conv_max and conv_min
    if not converged:
        logger.warning("condition-number power iteration hit max_iter=%d", max_iter)
    return ConditionReport(smax, smin, smax / smin, "PowerIteration", converged)


def export_matrix_market(system: LinearSystem, matrix_path, rhs_path=None) -> None:
    """Write A (coordinate MatrixMarket) and optionally b (array format)."""
    scipy.io.mmwrite(str(matrix_path), system.A.tocoo())
    if rhs_path is not None:
        scipy.io.mmwrite(str(rhs_path), system.b[:, None])


def import_matrix_market(matrix_path, rhs_path=None) -> LinearSystem:
    a = sp.csr_matrix(scipy.io.mmread(str(matrix_path)))
    if rhs_path is not None:
        b = np.asarray(scipy.io.mmread(str(rhs_path))).ravel()
    else:
        b = np.zeros(a.shape[0])
    return LinearSystem(A=a, b=b)
