import math

from enum import Enum
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ._config import MomentOpfConfig


class BusType(str, Enum):
    """Bus roles understood by the network model."""
    SLACK = "slack"
    PV = "pv"
    PQ = "pq"


class Bus(BaseModel):
    """One network bus. Powers in MW/MVAr, voltage limits in p.u."""

    model_config = ConfigDict(extra="ignore", frozen=True)

    id: int
    type: BusType = BusType.PQ
    pd: float = 0.0
    qd: float = 0.0
    vmin: float = 0.9
    vmax: float = 1.1
    gs: float = 0.0
    bs: float = 0.0


class Generator(BaseModel):
    """Aggregated generator at one bus with a quadratic cost c2*P^2 + c1*P + c0 ($/h, P in MW)."""

    model_config = ConfigDict(extra="ignore", frozen=True)

    bus: int
    pmin: float = 0.0
    pmax: float = 0.0
    qmin: float = 0.0
    qmax: float = 0.0
    c2: float = 0.0
    c1: float = 0.0
    c0: float = 0.0


class Branch(BaseModel):
    """Pi-model branch behind an ideal transformer 1 : tau*exp(j*theta).

    ``b`` and ``g_sh`` are the total line charging susceptance and shunt
    conductance, split evenly between both terminals. ``s_max`` of zero means
    the branch has no flow limit.
    """

    model_config = ConfigDict(extra="ignore", frozen=True, populate_by_name=True)

    from_bus: int = Field(alias="from")
    to_bus: int = Field(alias="to")
    r: float
    x: float
    b: float = 0.0
    g_sh: float = 0.0
    tau: float = 1.0
    theta: float = 0.0
    s_max: float = 0.0

    @property
    def limited(self) -> bool:
        return self.s_max > 0


class NetworkCase(BaseModel):
    """A validated OPF instance.

    Buses keep the order they were given in; that order is the position used
    for voltage variables, admittance rows and every per-bus list in reports.
    """

    model_config = ConfigDict(extra="ignore", frozen=True)

    name: str = "case"
    base_mva: float = 100.0
    buses: tuple[Bus, ...]
    generators: tuple[Generator, ...] = ()
    branches: tuple[Branch, ...] = ()

    @model_validator(mode="after")
    def _check_invariants(self):
        ids = [bus.id for bus in self.buses]
        seen = set()
        for bus_id in ids:
            if bus_id in seen:
                raise ValueError(f"duplicate bus id {bus_id}")
            seen.add(bus_id)
        slack = [bus.id for bus in self.buses if bus.type == BusType.SLACK]
        if len(slack) != 1:
            raise ValueError(f"exactly one slack bus required, found {len(slack)}")
        if self.base_mva <= 0:
            raise ValueError("base_mva must be positive")
        known = set(ids)
        for bus in self.buses:
            if bus.vmin > bus.vmax:
                raise ValueError(f"bus {bus.id}: vmin {bus.vmin} > vmax {bus.vmax}")
        for gen in self.generators:
            if gen.bus not in known:
                raise ValueError(f"generator references unknown bus {gen.bus}")
            if gen.pmin > gen.pmax:
                raise ValueError(f"generator at bus {gen.bus}: pmin {gen.pmin} > pmax {gen.pmax}")
            if gen.qmin > gen.qmax:
                raise ValueError(f"generator at bus {gen.bus}: qmin {gen.qmin} > qmax {gen.qmax}")
        gen_buses = [gen.bus for gen in self.generators]
        if len(set(gen_buses)) != len(gen_buses):
            raise ValueError("more than one generator record at a bus")
        for branch in self.branches:
            for end in (branch.from_bus, branch.to_bus):
                if end not in known:
                    raise ValueError(f"branch references unknown bus {end}")
            if branch.from_bus == branch.to_bus:
                raise ValueError(f"branch {branch.from_bus}-{branch.to_bus} is a self loop")
        return self

    @property
    def n(self) -> int:
        return len(self.buses)

    def positions(self) -> dict[int, int]:
        """Map bus id to its position in ``buses``."""
        return {bus.id: k for k, bus in enumerate(self.buses)}

    def reference(self) -> int:
        """Position of the slack (angle reference) bus."""
        return next(k for k, bus in enumerate(self.buses) if bus.type == BusType.SLACK)

    def generator_at(self, position: int) -> Generator | None:
        bus_id = self.buses[position].id
        for gen in self.generators:
            if gen.bus == bus_id:
                return gen
        return None

    def generation_limits(self, position: int) -> tuple[float, float, float, float]:
        """(pmin, pmax, qmin, qmax) in MW/MVAr; zero for buses without generation."""
        gen = self.generator_at(position)
        if gen is None:
            return 0.0, 0.0, 0.0, 0.0
        return gen.pmin, gen.pmax, gen.qmin, gen.qmax


class CaseModifiers(BaseModel):
    """Edits applied on top of a parsed case to build test variants."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    load_scale: float = Field(default=1.0, gt=0)
    qmin_floor: float | None = None
    uniform_flow_limit: float | None = Field(default=None, gt=0)
    flow_limit_scale: float | None = Field(default=None, gt=0)
    vmin: float | None = None
    vmax: float | None = None


class RelaxationOptions(BaseModel):
    """Switches controlling how the moment relaxation is assembled."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    even_blocks: bool = Field(default_factory=lambda: MomentOpfConfig.even_blocks)
    angle_reference: Literal["eliminate", "constrain"] = Field(
        default_factory=lambda: MomentOpfConfig.angle_reference
    )
    schur_flow: bool = True
    schur_cost: bool = True
    direct_flow: bool = True
    bound_clique_moments: bool = True
    merge_cliques: bool = Field(default_factory=lambda: MomentOpfConfig.merge_cliques)
    merge_limit: int | None = Field(default_factory=lambda: MomentOpfConfig.merge_limit)


class SolveSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    feasibility_tolerance: float = Field(default=1e-8, gt=0)
    gap_tolerance: float = Field(default=1e-8, gt=0)
    max_iterations: int = Field(default=200, gt=0)
    verbose: bool = False
    solver: str = Field(default_factory=lambda: MomentOpfConfig.solver)
    verify_tolerance: float = Field(default=1e-6, gt=0)

    def relaxed(self, factor: float = 100.0) -> "SolveSettings":
        """Copy with feasibility and gap tolerances loosened by ``factor``."""
        return self.model_copy(
            update={
                "feasibility_tolerance": self.feasibility_tolerance * factor,
                "gap_tolerance": self.gap_tolerance * factor,
                "verify_tolerance": self.verify_tolerance * factor,
            }
        )


class DriverSettings(BaseModel):
    """Tolerances and caps for the iterative order-escalation loop."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    h: int = Field(default=2, ge=1)
    mis_tol: float = Field(default=0.5, gt=0)
    obj_tol: float = Field(default=1e-3, gt=0)
    vmag_tol: float = Field(default=0.005, gt=0)
    ineq_tol: float = Field(default=0.5, gt=0)
    max_iterations: int = Field(default=20, ge=1)
    max_order: int = Field(default=3, ge=1)
    reference_objective: float | None = None
    solve: SolveSettings = Field(default_factory=SolveSettings)
    relaxation: RelaxationOptions = Field(default_factory=RelaxationOptions)


class SolveStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"
    MAX_ITER = "max_iter"


class ResidualReport(BaseModel):
    """Solver-independent check of a primal point against a conic problem."""

    model_config = ConfigDict(extra="ignore")

    equality_residual: float = 0.0
    block_min_eigenvalues: list[float] = []
    worst_block_tag: str | None = None
    data_scale: float = 1.0

    @property
    def min_eigenvalue(self) -> float:
        return min(self.block_min_eigenvalues, default=0.0)

    def within(self, tolerance: float) -> bool:
        """Residuals at most ``tolerance`` times ``data_scale``."""
        bound = tolerance * self.data_scale
        return self.equality_residual <= bound and self.min_eigenvalue >= -bound


class RawSolution(BaseModel):
    """Status-tagged result of one conic solve.

    ``values`` holds the primal value of every problem variable (moments
    followed by auxiliary cost variables) and is ``None`` when the solver
    produced no point.
    """

    model_config = ConfigDict(extra="ignore", arbitrary_types_allowed=True)

    status: SolveStatus
    values: np.ndarray | None = None
    objective: float | None = None
    residuals: ResidualReport | None = None
    solve_time: float = 0.0
    solver: str = ""
    inaccurate: bool = False


class VoltageSolution(BaseModel):
    model_config = ConfigDict(extra="ignore")

    vd: list[float]
    vq: list[float]
    clique_eigenvalues: list[list[float]] = []
    sign_flips: list[int] = []
    separator_error: float = 0.0

    @property
    def phasors(self) -> np.ndarray:
        return np.asarray(self.vd) + 1j * np.asarray(self.vq)


class MismatchReport(BaseModel):
    """Per-bus injection mismatches between moments and the extracted voltages."""

    model_config = ConfigDict(extra="ignore")

    bus_ids: list[int]
    p_mis: list[float]
    q_mis: list[float]
    s_mis: list[float]

    @property
    def max_s_mis(self) -> float:
        return max(self.s_mis, default=0.0)

    def sorted_s_mis(self) -> list[float]:
        return sorted(self.s_mis)


class Metrics(BaseModel):
    model_config = ConfigDict(extra="ignore")

    max_s_mis: float
    obj_val_diff: float
    min_eig_ratio: float
    bound_gap: float | None = None


class FeasibilityReport(BaseModel):
    """Worst violation per constraint family (p.u. for voltage, MVA otherwise)."""

    model_config = ConfigDict(extra="ignore")

    worst: dict[str, float]
    violations: list[str] = []

    @property
    def feasible(self) -> bool:
        return not self.violations


class IterationRecord(BaseModel):
    model_config = ConfigDict(extra="ignore")

    iteration: int
    orders: list[int]
    max_order: int
    status: SolveStatus
    lower_bound: float | None = None
    metrics: Metrics | None = None
    solve_time: float = 0.0
    escalated: list[int] = []
    degraded: bool = False

    @property
    def high_order_buses(self) -> int:
        return sum(1 for order in self.orders if order > 1)


class RunHistory(BaseModel):
    model_config = ConfigDict(extra="ignore")

    iterations: list[IterationRecord] = []

    def lower_bounds(self) -> list[float]:
        return [it.lower_bound for it in self.iterations if it.lower_bound is not None]

    def total_solve_time(self) -> float:
        return sum(it.solve_time for it in self.iterations)


class GlobalSolveStatus(str, Enum):
    """Outcome of a run; also decides the CLI exit code."""
    GLOBAL_OPTIMUM = "global_optimum"
    LOWER_BOUND_ONLY = "lower_bound_only"
    INFEASIBLE_OPF = "infeasible_opf"
    ITERATION_LIMIT = "iteration_limit"

    @property
    def exit_code(self) -> int:
        return {
            GlobalSolveStatus.GLOBAL_OPTIMUM: 0,
            GlobalSolveStatus.LOWER_BOUND_ONLY: 2,
            GlobalSolveStatus.ITERATION_LIMIT: 2,
            GlobalSolveStatus.INFEASIBLE_OPF: 3,
        }[self]


class GlobalSolveResult(BaseModel):
    """Final outcome of a fixed-order or iterative run.

    ``objective`` is the last valid relaxation bound in $/h. ``voltages`` is
    the extracted candidate; it is a certified global optimum only when
    ``status`` is ``global_optimum``.
    """

    model_config = ConfigDict(extra="ignore")

    status: GlobalSolveStatus
    objective: float | None = None
    orders: list[int] = []
    voltages: VoltageSolution | None = None
    mismatches: MismatchReport | None = None
    metrics: Metrics | None = None
    feasibility: FeasibilityReport | None = None
    history: RunHistory = Field(default_factory=RunHistory)
    message: str | None = None


class BusVoltage(BaseModel):
    model_config = ConfigDict(extra="ignore")

    bus: int
    vm: float
    va_deg: float
    vd: float
    vq: float


class IterationRow(BaseModel):
    """One row of the per-iteration convergence table."""

    model_config = ConfigDict(extra="ignore")

    iteration: int
    lower_bound: float | None
    max_s_mis_mva: float | None
    obj_val_diff: float | None
    min_eig_ratio: float | None
    solver_time_s: float
    high_order_buses: int
    max_order: int
    escalated: list[int]


class RunReport(BaseModel):
    """Machine readable report written by the CLI."""

    model_config = ConfigDict(extra="ignore")

    case_name: str
    status: GlobalSolveStatus
    exit_code: int
    objective: float | None
    lower_bounds: list[float]
    orders: list[int]
    voltages: list[BusVoltage]
    metrics: Metrics | None
    iterations: list[IterationRow]
    units: dict[str, str] = {
        "objective": "$/h",
        "lower_bounds": "$/h",
        "vm": "p.u.",
        "va_deg": "deg",
        "max_s_mis_mva": "MVA",
        "solver_time_s": "s",
    }
    message: str | None = None
    log_records: list[dict[str, Any]] = []

    @staticmethod
    def from_result(
        case: NetworkCase, result: GlobalSolveResult, log_records: list[dict[str, Any]] | None = None
    ) -> "RunReport":
        voltages = []
        if result.voltages is not None:
            for bus, vd, vq in zip(case.buses, result.voltages.vd, result.voltages.vq):
                voltages.append(
                    BusVoltage(
                        bus=bus.id,
                        vm=math.hypot(vd, vq),
                        va_deg=math.degrees(math.atan2(vq, vd)),
                        vd=vd,
                        vq=vq,
                    )
                )
        rows = [
            IterationRow(
                iteration=it.iteration,
                lower_bound=it.lower_bound,
                max_s_mis_mva=it.metrics.max_s_mis if it.metrics else None,
                obj_val_diff=it.metrics.obj_val_diff if it.metrics else None,
                min_eig_ratio=it.metrics.min_eig_ratio if it.metrics else None,
                solver_time_s=it.solve_time,
                high_order_buses=it.high_order_buses,
                max_order=it.max_order,
                escalated=[case.buses[k].id for k in it.escalated],
            )
            for it in result.history.iterations
        ]
        return RunReport(
            case_name=case.name,
            status=result.status,
            exit_code=result.status.exit_code,
            objective=result.objective,
            lower_bounds=result.history.lower_bounds(),
            orders=result.orders,
            voltages=voltages,
            metrics=result.metrics,
            iterations=rows,
            message=result.message,
            log_records=log_records or [],
        )


class OracleResult(BaseModel):
    model_config = ConfigDict(extra="ignore")

    best_objective: float | None
    vd: list[float] = []
    vq: list[float] = []
    resolution: int
    feasible_count: int

    @property
    def phasors(self) -> np.ndarray:
        return np.asarray(self.vd) + 1j * np.asarray(self.vq)
