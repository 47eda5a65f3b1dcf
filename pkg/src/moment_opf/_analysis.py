import csv
import logging
import math

from pathlib import Path

import numpy as np

from ._errors import SignMergeConflictError
from ._models import FeasibilityReport, Metrics, MismatchReport, NetworkCase, VoltageSolution
from ._opf_polynomials import OpfPolynomials
from ._polynomial import Exponent, MomentIndexMap, apply_L
from ._relaxation import ConicProblem
from ._sparsity import CliqueDecomposition


logger = logging.getLogger("mopf")

EIGENVALUE_RATIO_CAP = 1e16


def second_order_block(values, index_map: MomentIndexMap, variables: list[int]) -> np.ndarray:
    """Matrix of the degree-2 moments y[x_i x_j] over ``variables``."""
    size = len(variables)
    M = np.zeros((size, size))
    for i in range(size):
        for j in range(i, size):
            idx = index_map.index(Exponent(((variables[i], 1), (variables[j], 1))))
            M[i, j] = M[j, i] = values[idx]
    return M


def extract_voltages(
    problem: ConicProblem,
    values,
    decomp: CliqueDecomposition,
    polys: OpfPolynomials,
    strict: bool = True,
    tolerance: float = 1e-4,
) -> VoltageSolution:
    """Closest rank-one voltage vector from the clique moment blocks.

    Each clique contributes sqrt(lambda) * eta from the top eigenpair of its
    second-order block. Cliques are merged along the clique tree from the
    root, each taking the sign that best matches the entries already fixed.

    Raises:
        SignMergeConflictError: With ``strict``, if the best sign still
            leaves a separator mismatch above ``tolerance`` (relative).
    """
    variables = polys.variables
    assigned: dict[int, float] = {}
    eigen_diag: list[list[float]] = [[] for _ in decomp.cliques]
    flips: list[int] = []
    worst = 0.0
    for mu in decomp.traversal():
        clique_vars = variables.clique_variables(decomp.cliques[mu])
        M = second_order_block(values, problem.index_map, clique_vars)
        lam, vecs = np.linalg.eigh(M)
        order = np.argsort(-np.abs(lam))
        eigen_diag[mu] = [float(lam[i]) for i in order[:2]]
        top = order[0]
        local = math.sqrt(max(lam[top], 0.0)) * vecs[:, top]
        local = dict(zip(clique_vars, local))

        shared = [v for v in clique_vars if v in assigned]
        sign = 1
        if shared:
            err_plus = sum((local[v] - assigned[v]) ** 2 for v in shared)
            err_minus = sum((local[v] + assigned[v]) ** 2 for v in shared)
            if err_minus < err_plus:
                sign = -1
            scale = math.sqrt(sum(assigned[v] ** 2 for v in shared)) or 1.0
            err = math.sqrt(min(err_plus, err_minus)) / scale
            worst = max(worst, err)
            if strict and err > tolerance:
                raise SignMergeConflictError(
                    f"clique {mu} disagrees with its parent on shared buses (relative error {err:.3g})"
                )
        if sign < 0:
            flips.append(mu)
        for v, value in local.items():
            if v not in assigned:
                assigned[v] = sign * value

    n, ref = variables.n, variables.reference
    vd = [assigned.get(variables.vd(k), 0.0) for k in range(n)]
    vq = [assigned.get(variables.vq(k), 0.0) for k in range(n)]
    vq[ref] = 0.0
    if vd[ref] < 0:
        vd = [-v for v in vd]
        vq = [-v for v in vq]
        vq[ref] = 0.0
    if worst > tolerance:
        logger.debug("rank-one merge left a separator mismatch of %.3g", worst, extra={"separator_error": worst})
    return VoltageSolution(vd=vd, vq=vq, clique_eigenvalues=eigen_diag, sign_flips=flips, separator_error=worst)


def compute_mismatches(
    case: NetworkCase, polys: OpfPolynomials, problem: ConicProblem, values, voltages: VoltageSolution
) -> MismatchReport:
    """Injection mismatches L{f} - f(V) per bus in MW, MVAr and MVA."""
    x = polys.variables.point(voltages.phasors)
    base = case.base_mva
    p_mis, q_mis, s_mis = [], [], []
    for k in range(case.n):
        p = (apply_L(polys.fP[k], problem.index_map, register=False).evaluate(values) - polys.fP[k].evaluate(x)) * base
        q = (apply_L(polys.fQ[k], problem.index_map, register=False).evaluate(values) - polys.fQ[k].evaluate(x)) * base
        p_mis.append(p)
        q_mis.append(q)
        s_mis.append(math.hypot(p, q))
    return MismatchReport(bus_ids=[bus.id for bus in case.buses], p_mis=p_mis, q_mis=q_mis, s_mis=s_mis)


def eigenvalue_ratio(eigenvalues: list[float]) -> float:
    """|lambda_1| / |lambda_2| of one block, capped."""
    if len(eigenvalues) < 2 or abs(eigenvalues[1]) * EIGENVALUE_RATIO_CAP <= abs(eigenvalues[0]):
        return EIGENVALUE_RATIO_CAP
    return abs(eigenvalues[0]) / abs(eigenvalues[1])


def compute_metrics(
    problem: ConicProblem,
    values,
    voltages: VoltageSolution,
    polys: OpfPolynomials,
    mismatches: MismatchReport,
    reference_objective: float | None = None,
) -> Metrics:
    """Max mismatch, relative objective difference and minimum eigenvalue ratio."""
    c_mom = problem.objective.evaluate(values)
    c_v = polys.cost_at(voltages.phasors)
    diff = abs(c_mom - c_v)
    obj_val_diff = diff / abs(c_mom) if c_mom else diff
    ratio = min((eigenvalue_ratio(e) for e in voltages.clique_eigenvalues if e), default=EIGENVALUE_RATIO_CAP)
    gap = None
    if reference_objective:
        gap = max(0.0, (reference_objective - c_mom) / abs(reference_objective))
    return Metrics(max_s_mis=mismatches.max_s_mis, obj_val_diff=obj_val_diff, min_eig_ratio=ratio, bound_gap=gap)


def check_feasibility(
    case: NetworkCase,
    V,
    polys: OpfPolynomials,
    vmag_tol: float = 0.005,
    ineq_tol: float = 0.5,
) -> FeasibilityReport:
    """Worst violation of the voltage, generation and flow limits at ``V``.

    Voltage violations are in p.u. of magnitude, power and flow violations
    in MW, MVAr and MVA.
    """
    V = np.asarray(V, dtype=complex)
    x = polys.variables.point(V)
    base = case.base_mva
    worst = {"voltage": 0.0, "active_power": 0.0, "reactive_power": 0.0, "flow": 0.0}
    for k in range(case.n):
        vm = abs(V[k])
        worst["voltage"] = max(worst["voltage"], polys.vmin[k] - vm, vm - polys.vmax[k])
        p = polys.fP[k].evaluate(x)
        q = polys.fQ[k].evaluate(x)
        worst["active_power"] = max(worst["active_power"], (polys.pmin[k] - p) * base, (p - polys.pmax[k]) * base)
        worst["reactive_power"] = max(worst["reactive_power"], (polys.qmin[k] - q) * base, (q - polys.qmax[k]) * base)
    for flow in polys.flows:
        if flow.fSlm is None:
            continue
        for fS in (flow.fSlm, flow.fSml):
            s = math.sqrt(max(fS.evaluate(x), 0.0))
            worst["flow"] = max(worst["flow"], (s - flow.s_max) * base)
    tolerances = {"voltage": vmag_tol, "active_power": ineq_tol, "reactive_power": ineq_tol, "flow": ineq_tol}
    violations = [family for family, value in worst.items() if value > tolerances[family]]
    return FeasibilityReport(worst=worst, violations=violations)


def write_mismatch_csv(report: MismatchReport, path: str | Path):
    """Two-column CSV (rank, S_mis in MVA), ascending."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "s_mis_mva"])
        for rank, value in enumerate(report.sorted_s_mis(), start=1):
            writer.writerow([rank, repr(value)])
