"""Brute-force reference solutions for very small cases.

Everything here works directly on complex phasors and never touches the
polynomial machinery, so it can be used to cross-check it.
"""

import logging
import math

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from ._errors import OracleDimensionError
from ._models import NetworkCase, OracleResult


logger = logging.getLogger("mopf")

MAX_FREE_VARIABLES = 5
CHUNK_SIZE = 200_000
REFINE_STARTS = 8
REFINE_TOLERANCE = 1e-7


@dataclass(frozen=True)
class FlowEvaluation:
    """Injections, generation and terminal flows in p.u.; leading axes follow ``V``."""

    injection: np.ndarray
    generation: np.ndarray
    from_flow: np.ndarray
    to_flow: np.ndarray


def _branch_arrays(case: NetworkCase):
    pos = case.positions()
    f = np.array([pos[b.from_bus] for b in case.branches], dtype=int)
    t = np.array([pos[b.to_bus] for b in case.branches], dtype=int)
    ys = np.array([1.0 / complex(b.r, b.x) for b in case.branches], dtype=complex)
    tap = np.array([b.tau * np.exp(1j * b.theta) for b in case.branches], dtype=complex)
    shunt = np.array([complex(b.g_sh, b.b) / 2 for b in case.branches], dtype=complex)
    return f, t, ys, tap, shunt


def complex_flow_eval(case: NetworkCase, V) -> FlowEvaluation:
    """Power balance of ``V`` from branch currents of the pi model behind a 1 : tap transformer.

    ``V`` may be a single voltage vector or a stack of them (last axis = bus).
    """
    V = np.asarray(V, dtype=complex)
    f, t, ys, tap, shunt = _branch_arrays(case)
    Vf, Vt = V[..., f], V[..., t]
    # series element sees the from voltage after the transformer
    Vf_inner = Vf / tap
    I_series = ys * (Vf_inner - Vt)
    I_from = (I_series + shunt * Vf_inner) / np.conj(tap)
    I_to = -I_series + shunt * Vt
    from_flow = Vf * np.conj(I_from)
    to_flow = Vt * np.conj(I_to)

    injection = np.zeros(V.shape, dtype=complex)
    _scatter(injection, f, from_flow)
    _scatter(injection, t, to_flow)
    y_bus = np.array([complex(bus.gs, bus.bs) for bus in case.buses]) / case.base_mva
    injection = injection + V * np.conj(y_bus * V)
    load = np.array([complex(bus.pd, bus.qd) for bus in case.buses]) / case.base_mva
    return FlowEvaluation(injection=injection, generation=injection + load, from_flow=from_flow, to_flow=to_flow)


def _scatter(target: np.ndarray, index: np.ndarray, values: np.ndarray):
    for col, k in enumerate(index):
        target[..., k] += values[..., col]


def _cost(case: NetworkCase, generation: np.ndarray) -> np.ndarray:
    base = case.base_mva
    total = np.zeros(generation.shape[:-1])
    for gen in case.generators:
        k = case.positions()[gen.bus]
        p = generation[..., k].real * base
        total = total + gen.c2 * p**2 + gen.c1 * p + gen.c0
    return total


class _Limits:
    """Per-bus and per-branch bounds in p.u."""

    def __init__(self, case: NetworkCase):
        base = case.base_mva
        lim = np.array([case.generation_limits(k) for k in range(case.n)], dtype=float) / base
        self.pmin, self.pmax, self.qmin, self.qmax = lim.T
        self.vmin = np.array([bus.vmin for bus in case.buses])
        self.vmax = np.array([bus.vmax for bus in case.buses])
        self.limited = np.array([b.limited for b in case.branches], dtype=bool)
        self.smax = np.array([b.s_max for b in case.branches]) / base

    def violation(self, V: np.ndarray, flows: FlowEvaluation, bus_slack=0.0, flow_slack=0.0) -> np.ndarray:
        """Largest bound violation per voltage vector, after subtracting the slacks."""
        vm = np.abs(V)
        pg, qg = flows.generation.real, flows.generation.imag
        parts = [
            self.vmin - vm,
            vm - self.vmax,
            self.pmin - pg - bus_slack,
            pg - self.pmax - bus_slack,
            self.qmin - qg - bus_slack,
            qg - self.qmax - bus_slack,
        ]
        worst = np.max(np.stack([np.max(p, axis=-1) for p in parts]), axis=0)
        if self.limited.any():
            sf = np.abs(flows.from_flow[..., self.limited]) - self.smax[self.limited] - flow_slack
            st = np.abs(flows.to_flow[..., self.limited]) - self.smax[self.limited] - flow_slack
            worst = np.maximum(worst, np.max(np.maximum(sf, st), axis=-1))
        return worst


def _candidates(case: NetworkCase, resolution: int, spacing: float) -> list[np.ndarray]:
    """Grid phasors per bus that pass the magnitude ring, widened by one grid step."""
    ref = case.reference()
    out = []
    for k, bus in enumerate(case.buses):
        axis = np.linspace(-bus.vmax, bus.vmax, resolution)
        if k == ref:
            points = axis[axis >= 0].astype(complex)
        else:
            d, q = np.meshgrid(axis, axis, indexing="ij")
            points = (d + 1j * q).ravel()
        vm = np.abs(points)
        out.append(points[(vm >= bus.vmin - spacing) & (vm <= bus.vmax + spacing)])
    return out


def _grid_slack(case: NetworkCase, spacing: float) -> tuple[np.ndarray, float]:
    """Injection and flow tolerances of one grid cell, from the admittance row norms."""
    vmax = max(bus.vmax for bus in case.buses)
    f, t, ys, tap, shunt = _branch_arrays(case)
    row = np.zeros(case.n)
    for k in range(case.n):
        row[k] = abs(complex(case.buses[k].gs, case.buses[k].bs)) / case.base_mva
    terminal = np.abs(ys) + np.abs(shunt)
    np.add.at(row, f, 2 * terminal / np.minimum(np.abs(tap), 1.0) ** 2)
    np.add.at(row, t, 2 * terminal)
    flow = float(np.max(2 * terminal / np.minimum(np.abs(tap), 1.0) ** 2, initial=0.0))
    return 2 * spacing * vmax * row, 2 * spacing * vmax * flow


def _refine(case: NetworkCase, limits: _Limits, V0: np.ndarray) -> tuple[float, np.ndarray] | None:
    """Local SLSQP polish from a grid point; None if it does not reach a feasible point."""
    n, ref = case.n, case.reference()
    free_q = [k for k in range(n) if k != ref]
    fixed_p = np.isclose(limits.pmin, limits.pmax)
    fixed_q = np.isclose(limits.qmin, limits.qmax)

    def unpack(x):
        V = x[:n].astype(complex)
        V[free_q] += 1j * x[n:]
        return V

    def objective(x):
        return float(_cost(case, complex_flow_eval(case, unpack(x)).generation))

    def inequalities(x):
        V = unpack(x)
        flows = complex_flow_eval(case, V)
        pg, qg = flows.generation.real, flows.generation.imag
        vm2 = np.abs(V) ** 2
        parts = [vm2 - limits.vmin**2, limits.vmax**2 - vm2, [x[ref]]]
        parts += [(pg - limits.pmin)[~fixed_p], (limits.pmax - pg)[~fixed_p]]
        parts += [(qg - limits.qmin)[~fixed_q], (limits.qmax - qg)[~fixed_q]]
        if limits.limited.any():
            smax2 = limits.smax[limits.limited] ** 2
            parts.append(smax2 - np.abs(flows.from_flow[limits.limited]) ** 2)
            parts.append(smax2 - np.abs(flows.to_flow[limits.limited]) ** 2)
        return np.concatenate([np.atleast_1d(p) for p in parts])

    def equalities(x):
        gen = complex_flow_eval(case, unpack(x)).generation
        return np.concatenate([(gen.real - limits.pmin)[fixed_p], (gen.imag - limits.qmin)[fixed_q]])

    constraints = [{"type": "ineq", "fun": inequalities}]
    if fixed_p.any() or fixed_q.any():
        constraints.append({"type": "eq", "fun": equalities})
    x0 = np.concatenate([V0.real, V0.imag[free_q]])
    res = minimize(objective, x0, method="SLSQP", constraints=constraints, options={"maxiter": 500, "ftol": 1e-12})
    V = unpack(res.x)
    flows = complex_flow_eval(case, V)
    worst = float(limits.violation(V, flows))
    if fixed_p.any() or fixed_q.any():
        worst = max(worst, float(np.max(np.abs(equalities(res.x)))))
    if worst > REFINE_TOLERANCE:
        return None
    return float(_cost(case, flows.generation)), V


def grid_search(case: NetworkCase, resolution: int = 200) -> OracleResult:
    """Exhaustive scan of the voltage box, refined locally around the best cells.

    Every component ranges over [-V_max, V_max] (the reference bus over
    [0, V_max] with V_q = 0). Grid points are kept when they satisfy all
    limits up to the error one grid cell can cause; the cheapest and the
    least violating of them are then polished with SLSQP, and the best
    polished point that meets every limit is returned.

    Raises:
        OracleDimensionError: The case has more than five free voltage variables.
    """
    free = 2 * case.n - 1
    if free > MAX_FREE_VARIABLES:
        raise OracleDimensionError(f"{free} free voltage variables; the grid oracle handles at most {MAX_FREE_VARIABLES}")
    if resolution < 2:
        raise ValueError("resolution must be at least 2 points per axis")

    spacing = 2 * max(bus.vmax for bus in case.buses) / (resolution - 1)
    candidates = _candidates(case, resolution, spacing)
    sizes = [len(c) for c in candidates]
    total = math.prod(sizes)
    limits = _Limits(case)
    bus_slack, flow_slack = _grid_slack(case, spacing)

    feasible_count = 0
    cheapest: list[tuple[float, np.ndarray]] = []
    closest: list[tuple[float, np.ndarray]] = []
    for start in range(0, total, CHUNK_SIZE):
        idx = np.unravel_index(np.arange(start, min(start + CHUNK_SIZE, total)), sizes)
        V = np.stack([candidates[k][idx[k]] for k in range(case.n)], axis=-1)
        flows = complex_flow_eval(case, V)
        slack_violation = limits.violation(V, flows, bus_slack, flow_slack)
        ok = slack_violation <= 0
        feasible_count += int(ok.sum())
        if not ok.any():
            continue
        V_ok = V[ok]
        cost = _cost(case, flows.generation[ok])
        subset = FlowEvaluation(
            injection=flows.injection[ok],
            generation=flows.generation[ok],
            from_flow=flows.from_flow[ok],
            to_flow=flows.to_flow[ok],
        )
        raw = limits.violation(V_ok, subset)
        for key, pool in ((cost, cheapest), (raw, closest)):
            top = np.argsort(key)[:REFINE_STARTS]
            pool.extend((float(key[i]), V_ok[i]) for i in top)
            pool.sort(key=lambda item: item[0])
            del pool[REFINE_STARTS:]

    logger.debug(
        "grid of %d points at resolution %d: %d near-feasible",
        total,
        resolution,
        feasible_count,
        extra={"grid_points": total, "feasible_count": feasible_count},
    )

    best: tuple[float, np.ndarray] | None = None
    for _, V0 in cheapest + closest:
        refined = _refine(case, limits, V0)
        if refined is not None and (best is None or refined[0] < best[0]):
            best = refined
    if best is None:
        return OracleResult(best_objective=None, resolution=resolution, feasible_count=feasible_count)
    objective, V = best
    return OracleResult(
        best_objective=objective,
        vd=V.real.tolist(),
        vq=V.imag.tolist(),
        resolution=resolution,
        feasible_count=feasible_count,
    )


def converged_grid_search(
    case: NetworkCase, resolution: int = 50, max_resolution: int = 800, rel_change: float = 5e-4
) -> OracleResult:
    """Double the grid resolution until the best objective moves less than ``rel_change``."""
    previous = grid_search(case, resolution)
    while resolution * 2 <= max_resolution:
        resolution *= 2
        current = grid_search(case, resolution)
        if previous.best_objective is not None and current.best_objective is not None:
            change = abs(current.best_objective - previous.best_objective) / max(abs(previous.best_objective), 1e-12)
            if change < rel_change:
                return current
        previous = current
    return previous
