"""Solver contract for conic problems: cvxpy front end plus a solver-independent check."""

import logging
import time

import cvxpy as cp
import numpy as np
from scipy.sparse import vstack

from ._errors import MalformedProblemError
from ._models import RawSolution, ResidualReport, SolveSettings, SolveStatus
from ._relaxation import ConicProblem


logger = logging.getLogger("mopf")

_STATUS = {
    cp.OPTIMAL: (SolveStatus.OPTIMAL, False),
    cp.OPTIMAL_INACCURATE: (SolveStatus.OPTIMAL, True),
    cp.INFEASIBLE: (SolveStatus.INFEASIBLE, False),
    cp.INFEASIBLE_INACCURATE: (SolveStatus.INFEASIBLE, True),
    cp.UNBOUNDED: (SolveStatus.UNBOUNDED, False),
    cp.UNBOUNDED_INACCURATE: (SolveStatus.UNBOUNDED, True),
    cp.USER_LIMIT: (SolveStatus.MAX_ITER, False),
}


def _solver_options(settings: SolveSettings) -> dict:
    solver = settings.solver.upper()
    if solver == "CLARABEL":
        return {
            "tol_feas": settings.feasibility_tolerance,
            "tol_gap_abs": settings.gap_tolerance,
            "tol_gap_rel": settings.gap_tolerance,
            "max_iter": settings.max_iterations,
        }
    if solver == "SCS":
        return {
            "eps_abs": settings.feasibility_tolerance,
            "eps_rel": settings.gap_tolerance,
            "max_iters": settings.max_iterations * 100,
        }
    return {}


def _check_well_formed(problem: ConicProblem):
    n = problem.n_variables
    for block in problem.blocks:
        if any(len(row) != block.dim for row in block.matrix):
            raise MalformedProblemError(f"block {block.tag!r} is not square")
        for row in block.matrix:
            for entry in row:
                if any(i < 0 or i >= n for i in entry.coeffs):
                    raise MalformedProblemError(f"block {block.tag!r} references an unknown variable")
    for row in problem.equalities:
        if any(i < 0 or i >= n for i in row.expr.coeffs):
            raise MalformedProblemError(f"row {row.tag!r} references an unknown variable")
    if any(i < 0 or i >= n for i in problem.objective.coeffs):
        raise MalformedProblemError("objective references an unknown variable")


def solve(problem: ConicProblem, settings: SolveSettings | None = None) -> RawSolution:
    """Solve ``problem`` and return a status-tagged solution.

    A solver breakdown is reported as ``numerical_failure``. An optimal
    status is only kept when ``verify`` confirms the point within
    ``settings.verify_tolerance`` relative to the problem data.

    Raises:
        MalformedProblemError: Before solving, if the problem is inconsistent.
    """
    settings = settings or SolveSettings()
    _check_well_formed(problem)
    n = problem.n_variables

    z = cp.Variable(n)
    constraints = []
    if problem.equalities:
        A_eq, b_eq = problem.equality_system()
        constraints.append(A_eq @ z == b_eq)

    scalar_rows, scalar_consts = [], []
    for block in problem.blocks:
        A, c = block.affine_map(n)
        if block.dim == 1:
            scalar_rows.append(A)
            scalar_consts.append(c[0])
            continue
        M = cp.reshape(A @ z + c, (block.dim, block.dim), order="F")
        constraints.append((M + M.T) / 2 >> 0)
    if scalar_rows:
        constraints.append(vstack(scalar_rows).tocsr() @ z + np.asarray(scalar_consts) >= 0)

    c_obj = np.zeros(n)
    for i, coef in problem.objective.coeffs.items():
        c_obj[i] = coef
    # solved in units of the largest objective coefficient; the objective is re-evaluated afterwards
    obj_scale = max(1.0, float(np.abs(c_obj).max(initial=0.0)))
    cvx_problem = cp.Problem(cp.Minimize(c_obj / obj_scale @ z), constraints)

    solver = settings.solver.upper()
    start = time.perf_counter()
    try:
        cvx_problem.solve(solver=solver, verbose=settings.verbose, **_solver_options(settings))
    except cp.SolverError as e:
        elapsed = time.perf_counter() - start
        logger.warning("solver %s failed: %s", solver, e)
        return RawSolution(status=SolveStatus.NUMERICAL_FAILURE, solve_time=elapsed, solver=solver)
    elapsed = time.perf_counter() - start

    status, inaccurate = _STATUS.get(cvx_problem.status, (SolveStatus.NUMERICAL_FAILURE, True))
    values = None if z.value is None else np.asarray(z.value, dtype=float)
    objective = None
    residuals = None
    if values is not None:
        objective = problem.objective.evaluate(values)
        residuals = verify(problem, values)
        if status == SolveStatus.OPTIMAL and not residuals.within(settings.verify_tolerance):
            logger.warning(
                "solver reported %s but the point fails verification",
                cvx_problem.status,
                extra={"equality_residual": residuals.equality_residual, "min_eigenvalue": residuals.min_eigenvalue},
            )
            status, inaccurate = SolveStatus.NUMERICAL_FAILURE, True
    elif status == SolveStatus.OPTIMAL:
        status = SolveStatus.NUMERICAL_FAILURE

    logger.info(
        "solved %d variables with %s: %s in %.2fs",
        n,
        solver,
        status.value,
        elapsed,
        extra={"objective": objective, "solve_time": elapsed},
    )
    return RawSolution(
        status=status,
        values=values,
        objective=objective,
        residuals=residuals,
        solve_time=elapsed,
        solver=solver,
        inaccurate=inaccurate,
    )


def _data_scale(problem: ConicProblem) -> float:
    """Largest coefficient or constant in any row or block entry, at least 1."""
    scale = 1.0
    entries = [row.expr for row in problem.equalities]
    entries += [entry for block in problem.blocks for row in block.matrix for entry in row]
    for expr in entries:
        scale = max(scale, abs(expr.constant), *(abs(c) for c in expr.coeffs.values()))
    return scale


def verify(problem: ConicProblem, values) -> ResidualReport:
    """Equality residuals and per-block minimum eigenvalues at ``values``."""
    values = np.asarray(values, dtype=float)
    residual = 0.0
    for row in problem.equalities:
        residual = max(residual, abs(row.expr.evaluate(values)))
    eigenvalues = []
    worst_tag, worst = None, np.inf
    for block in problem.blocks:
        M = block.evaluate(values)
        lam = float(np.linalg.eigvalsh((M + M.T) / 2)[0])
        eigenvalues.append(lam)
        if lam < worst:
            worst, worst_tag = lam, block.tag
    return ResidualReport(
        equality_residual=residual,
        block_min_eigenvalues=eigenvalues,
        worst_block_tag=worst_tag,
        data_scale=_data_scale(problem),
    )
