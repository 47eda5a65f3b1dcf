"""Iterative order escalation: solve, analyse, raise orders where mismatches are largest."""

import logging

from dataclasses import dataclass

from ._analysis import check_feasibility, compute_metrics, compute_mismatches, extract_voltages
from ._case import build_admittance
from ._conic import solve
from ._errors import OrderCapError
from ._logging import run_log_handler
from ._models import (
    DriverSettings,
    FeasibilityReport,
    GlobalSolveResult,
    GlobalSolveStatus,
    IterationRecord,
    MismatchReport,
    Metrics,
    NetworkCase,
    RawSolution,
    RunHistory,
    SolveStatus,
    VoltageSolution,
)
from ._opf_polynomials import OpfPolynomials, build_opf_polynomials
from ._relaxation import ConicProblem, assemble
from ._sparsity import CliqueDecomposition, build_decomposition


logger = logging.getLogger("mopf")


@dataclass
class Evaluation:
    """Everything one relaxation solve produced."""

    orders: list[int]
    problem: ConicProblem
    solution: RawSolution
    degraded: bool = False
    voltages: VoltageSolution | None = None
    mismatches: MismatchReport | None = None
    metrics: Metrics | None = None
    feasibility: FeasibilityReport | None = None

    @property
    def lower_bound(self) -> float | None:
        if self.solution.status != SolveStatus.OPTIMAL or self.degraded:
            return None
        return self.solution.objective

    def converged(self, settings: DriverSettings) -> bool:
        if self.lower_bound is None or self.metrics is None:
            return False
        return (
            self.metrics.max_s_mis <= settings.mis_tol
            and self.metrics.obj_val_diff <= settings.obj_tol
            and self.feasibility.feasible
        )


class Pipeline:
    """Case-level artefacts shared by every solve of one run."""

    def __init__(self, case: NetworkCase, settings: DriverSettings | None = None):
        self.case = case
        self.settings = settings or DriverSettings()
        relaxation = self.settings.relaxation
        self.polys: OpfPolynomials = build_opf_polynomials(
            case, build_admittance(case), eliminate_reference=relaxation.angle_reference == "eliminate"
        )
        self.decomp: CliqueDecomposition = build_decomposition(
            case, merge=relaxation.merge_cliques, max_block_dim=relaxation.merge_limit
        )

    def build_problem(self, orders: list[int]) -> ConicProblem:
        return assemble(self.case, self.polys, self.decomp, orders, self.settings.relaxation)

    def evaluate(self, orders: list[int]) -> Evaluation:
        """Assemble, solve (retrying once with looser tolerances) and analyse."""
        problem = self.build_problem(orders)
        solution = solve(problem, self.settings.solve)
        degraded = False
        if solution.status in (SolveStatus.NUMERICAL_FAILURE, SolveStatus.MAX_ITER):
            logger.warning("solve ended with %s; retrying with relaxed tolerances", solution.status.value)
            retry = solve(problem, self.settings.solve.relaxed())
            retry.solve_time += solution.solve_time
            solution = retry
            if solution.status in (SolveStatus.NUMERICAL_FAILURE, SolveStatus.MAX_ITER):
                degraded = True

        evaluation = Evaluation(orders=list(orders), problem=problem, solution=solution, degraded=degraded)
        if solution.values is None or solution.status in (SolveStatus.INFEASIBLE, SolveStatus.UNBOUNDED):
            return evaluation

        values = solution.values
        voltages = extract_voltages(problem, values, self.decomp, self.polys, strict=False)
        mismatches = compute_mismatches(self.case, self.polys, problem, values, voltages)
        evaluation.voltages = voltages
        evaluation.mismatches = mismatches
        evaluation.metrics = compute_metrics(
            problem, values, voltages, self.polys, mismatches, self.settings.reference_objective
        )
        evaluation.feasibility = check_feasibility(
            self.case, voltages.phasors, self.polys, self.settings.vmag_tol, self.settings.ineq_tol
        )
        return evaluation


def heuristic_update(
    orders: list[int], gamma_max: int, report: MismatchReport, settings: DriverSettings
) -> tuple[list[int], int, list[int]]:
    """Raise the order at up to ``h`` buses with the largest mismatches.

    Buses below ``gamma_max`` are preferred; only when none of them exceeds
    the tolerance are the largest-mismatch buses raised above it and
    ``gamma_max`` incremented. Ties go to the lowest bus position.

    Returns:
        (orders, gamma_max, escalated bus positions)

    Raises:
        OrderCapError: An escalated bus would exceed ``settings.max_order``.
    """
    above = [k for k, s in enumerate(report.s_mis) if s > settings.mis_tol]
    if not above:
        raise ValueError("no bus exceeds the mismatch tolerance; nothing to escalate")

    def largest(candidates):
        return sorted(candidates, key=lambda k: (-report.s_mis[k], k))[: settings.h]

    below_max = [k for k in above if orders[k] < gamma_max]
    if below_max:
        chosen = largest(below_max)
    else:
        chosen = largest(above)
        gamma_max += 1

    new_orders = list(orders)
    for k in chosen:
        new_orders[k] += 1
        if new_orders[k] > settings.max_order:
            raise OrderCapError(
                f"bus {report.bus_ids[k]} would need order {new_orders[k]} above the cap {settings.max_order}"
            )
    return new_orders, gamma_max, sorted(chosen)


def _record(iteration: int, evaluation: Evaluation, gamma_max: int, escalated: list[int]) -> IterationRecord:
    return IterationRecord(
        iteration=iteration,
        orders=evaluation.orders,
        max_order=gamma_max,
        status=evaluation.solution.status,
        lower_bound=evaluation.lower_bound,
        metrics=evaluation.metrics,
        solve_time=evaluation.solution.solve_time,
        escalated=escalated,
        degraded=evaluation.degraded,
    )


def _result(
    status: GlobalSolveStatus,
    evaluation: Evaluation | None,
    history: RunHistory,
    message: str | None = None,
) -> GlobalSolveResult:
    bounds = history.lower_bounds()
    if status == GlobalSolveStatus.GLOBAL_OPTIMUM:
        objective = evaluation.lower_bound
    else:
        objective = max(bounds) if bounds else None
    result = GlobalSolveResult(status=status, objective=objective, history=history, message=message)
    if evaluation is not None:
        result.orders = evaluation.orders
        result.voltages = evaluation.voltages
        result.mismatches = evaluation.mismatches
        result.metrics = evaluation.metrics
        result.feasibility = evaluation.feasibility
    return result


def run(case: NetworkCase, settings: DriverSettings | None = None, pipeline: Pipeline | None = None) -> GlobalSolveResult:
    """Escalate per-bus orders from 1 until the three convergence gates hold.

    The run stops with ``infeasible_opf`` when a relaxation is infeasible,
    ``lower_bound_only`` when escalation cannot continue, and
    ``iteration_limit`` when ``max_iterations`` solves did not converge.
    """
    settings = settings or DriverSettings()
    pipeline = pipeline or Pipeline(case, settings)
    orders = [1] * case.n
    gamma_max = 1
    history = RunHistory()
    last: Evaluation | None = None

    for iteration in range(1, settings.max_iterations + 1):
        run_log_handler.start_iteration(iteration)
        try:
            evaluation = pipeline.evaluate(orders)
            status = evaluation.solution.status
            if status == SolveStatus.INFEASIBLE:
                history.iterations.append(_record(iteration, evaluation, gamma_max, []))
                logger.info("relaxation infeasible at iteration %d; the OPF problem is infeasible", iteration)
                return _result(GlobalSolveStatus.INFEASIBLE_OPF, None, history, "relaxation infeasible")
            if status == SolveStatus.UNBOUNDED:
                history.iterations.append(_record(iteration, evaluation, gamma_max, []))
                return _result(GlobalSolveStatus.LOWER_BOUND_ONLY, last, history, "relaxation unbounded")

            if evaluation.mismatches is not None:
                report = evaluation.mismatches
            elif last is not None:
                logger.warning("iteration %d produced no point; escalating from the previous mismatches", iteration)
                report = last.mismatches
            else:
                history.iterations.append(_record(iteration, evaluation, gamma_max, []))
                return _result(GlobalSolveStatus.LOWER_BOUND_ONLY, None, history, "solver failed on the first relaxation")

            logger.info(
                "iteration %d: gamma_max %d, bound %s, max S_mis %.4g MVA, %.2fs",
                iteration,
                gamma_max,
                evaluation.lower_bound,
                report.max_s_mis,
                evaluation.solution.solve_time,
                extra={"orders": orders, "max_s_mis": report.max_s_mis},
            )

            if evaluation.converged(settings):
                history.iterations.append(_record(iteration, evaluation, gamma_max, []))
                return _result(GlobalSolveStatus.GLOBAL_OPTIMUM, evaluation, history)

            if evaluation.metrics is not None:
                last = evaluation

            if report.max_s_mis <= settings.mis_tol:
                history.iterations.append(_record(iteration, evaluation, gamma_max, []))
                return _result(
                    GlobalSolveStatus.LOWER_BOUND_ONLY,
                    last,
                    history,
                    "mismatches within tolerance but objective or limit gates fail",
                )

            try:
                orders, gamma_max, escalated = heuristic_update(orders, gamma_max, report, settings)
            except OrderCapError as e:
                history.iterations.append(_record(iteration, evaluation, gamma_max, []))
                logger.info("stopping: %s", e)
                return _result(GlobalSolveStatus.LOWER_BOUND_ONLY, last, history, str(e))
            history.iterations.append(_record(iteration, evaluation, gamma_max, escalated))
        finally:
            run_log_handler.end_iteration()

    return _result(GlobalSolveStatus.ITERATION_LIMIT, last, history, "iteration limit reached")


def solve_fixed_order(
    case: NetworkCase, orders: int | list[int], settings: DriverSettings | None = None, pipeline: Pipeline | None = None
) -> GlobalSolveResult:
    """Solve one relaxation at the given orders and grade it with the same gates as ``run``."""
    settings = settings or DriverSettings()
    pipeline = pipeline or Pipeline(case, settings)
    if isinstance(orders, int):
        orders = [orders] * case.n
    evaluation = pipeline.evaluate(orders)
    history = RunHistory(iterations=[_record(1, evaluation, max(orders), [])])
    status = evaluation.solution.status
    if status == SolveStatus.INFEASIBLE:
        return _result(GlobalSolveStatus.INFEASIBLE_OPF, None, history, "relaxation infeasible")
    if evaluation.converged(settings):
        return _result(GlobalSolveStatus.GLOBAL_OPTIMUM, evaluation, history)
    usable = evaluation if evaluation.metrics is not None else None
    return _result(GlobalSolveStatus.LOWER_BOUND_ONLY, usable, history)


def minimize_high_order_buses(
    case: NetworkCase, result: GlobalSolveResult, settings: DriverSettings | None = None, pipeline: Pipeline | None = None
) -> GlobalSolveResult:
    """Drop higher-order buses one at a time while all gates still hold.

    Buses are tried from the highest position down; each removal that keeps
    the relaxation converged is kept. The result describes the reduced
    order vector, which is locally minimal in this sense.
    """
    settings = settings or DriverSettings()
    if result.status != GlobalSolveStatus.GLOBAL_OPTIMUM:
        return result
    pipeline = pipeline or Pipeline(case, settings)
    orders = list(result.orders)
    history = RunHistory()
    best: Evaluation | None = None
    for k in sorted((k for k, o in enumerate(orders) if o > 1), reverse=True):
        trial = list(orders)
        trial[k] -= 1
        evaluation = pipeline.evaluate(trial)
        history.iterations.append(_record(len(history.iterations) + 1, evaluation, max(trial), []))
        if evaluation.converged(settings):
            logger.info("bus %d does not need order %d", case.buses[k].id, orders[k])
            orders = trial
            best = evaluation
    if best is None:
        return result.model_copy(update={"history": history})
    return _result(GlobalSolveStatus.GLOBAL_OPTIMUM, best, history)
