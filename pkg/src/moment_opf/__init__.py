from ._config import MomentOpfConfig
from ._case import (
    AdmittanceMatrix,
    apply_modifiers,
    build_admittance,
    bundled_case_names,
    load_bundled_case,
    load_case,
    parse_case,
    serialize_case,
)
from ._errors import (
    AssemblyError,
    CaseFormatError,
    CaseValidationError,
    DisconnectedNetworkError,
    MalformedProblemError,
    ModifierError,
    MomentOpfError,
    NonChordalGraphError,
    OracleDimensionError,
    OrderCapError,
    OrderTooLowError,
    SignMergeConflictError,
    UnknownMonomialError,
)
from ._models import (
    Branch,
    Bus,
    BusType,
    CaseModifiers,
    DriverSettings,
    GlobalSolveResult,
    GlobalSolveStatus,
    Generator,
    MismatchReport,
    Metrics,
    NetworkCase,
    OracleResult,
    RelaxationOptions,
    RunHistory,
    RunReport,
    SolveSettings,
    SolveStatus,
    VoltageSolution,
)
from ._polynomial import MomentIndexMap, Polynomial, apply_L, basis
from ._opf_polynomials import OpfPolynomials, build_opf_polynomials
from ._sparsity import CliqueDecomposition, build_decomposition
from ._relaxation import ConicProblem, assemble, dump_sdpa
from ._conic import solve, verify
from ._analysis import check_feasibility, compute_metrics, compute_mismatches, extract_voltages
from ._driver import heuristic_update, minimize_high_order_buses, run, solve_fixed_order
from ._oracle import complex_flow_eval, grid_search

__all__ = [
    "AdmittanceMatrix",
    "AssemblyError",
    "Branch",
    "Bus",
    "BusType",
    "CaseFormatError",
    "CaseModifiers",
    "CaseValidationError",
    "CliqueDecomposition",
    "ConicProblem",
    "DisconnectedNetworkError",
    "DriverSettings",
    "Generator",
    "GlobalSolveResult",
    "GlobalSolveStatus",
    "MalformedProblemError",
    "Metrics",
    "MismatchReport",
    "ModifierError",
    "MomentIndexMap",
    "MomentOpfConfig",
    "MomentOpfError",
    "NetworkCase",
    "NonChordalGraphError",
    "OpfPolynomials",
    "OracleDimensionError",
    "OracleResult",
    "OrderCapError",
    "OrderTooLowError",
    "Polynomial",
    "RelaxationOptions",
    "RunHistory",
    "RunReport",
    "SignMergeConflictError",
    "SolveSettings",
    "SolveStatus",
    "UnknownMonomialError",
    "VoltageSolution",
    "apply_L",
    "apply_modifiers",
    "assemble",
    "basis",
    "build_admittance",
    "build_decomposition",
    "build_opf_polynomials",
    "bundled_case_names",
    "check_feasibility",
    "complex_flow_eval",
    "compute_metrics",
    "compute_mismatches",
    "dump_sdpa",
    "extract_voltages",
    "grid_search",
    "heuristic_update",
    "load_bundled_case",
    "load_case",
    "minimize_high_order_buses",
    "parse_case",
    "run",
    "serialize_case",
    "solve",
    "solve_fixed_order",
    "verify",
]
