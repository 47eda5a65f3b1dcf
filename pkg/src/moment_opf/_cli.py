"""``moment-opf`` command line: load a case, solve, write reports.

Exit codes: 0 global optimum, 2 lower bound only (also when the iteration
limit is hit), 3 OPF infeasible, 4 usage or input error.
"""

import argparse
import logging
import sys

from pathlib import Path

from ._analysis import write_mismatch_csv
from ._case import apply_modifiers, bundled_case_names, load_bundled_case, load_case
from ._config import MomentOpfConfig
from ._driver import Pipeline, minimize_high_order_buses, run, solve_fixed_order
from ._errors import MomentOpfError
from ._logging import run_log_handler
from ._models import (
    CaseModifiers,
    DriverSettings,
    GlobalSolveResult,
    NetworkCase,
    RelaxationOptions,
    RunReport,
    SolveSettings,
)
from ._relaxation import dump_sdpa


logger = logging.getLogger("mopf")

EXIT_ERROR = 4


class _ArgumentParser(argparse.ArgumentParser):
    """Parser that reports usage errors with the error exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _modifier(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    return key.strip(), value.strip()


def build_parser() -> argparse.ArgumentParser:
    defaults = DriverSettings.model_fields
    parser = _ArgumentParser(prog="moment-opf", description="Global AC-OPF by sparse moment relaxations.")
    parser.add_argument("--list-cases", action="store_true", help="List bundled case names and exit")
    parser.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        type=str.upper,
        default=None,
        help="Log level for stderr output (default: MOPF_LOG_LEVEL or WARNING)",
    )
    commands = parser.add_subparsers(dest="command")

    solve = commands.add_parser("solve", help="Solve one case")
    solve.add_argument("--case", required=True, help="Case file path or bundled case name (e.g. case14Q)")
    solve.add_argument("--mods", nargs="*", type=_modifier, default=[], metavar="KEY=VALUE", help="Case modifiers")
    solve.add_argument("--mode", choices=["fixed", "iterative"], default="iterative")
    solve.add_argument("--order", type=int, default=1, help="Uniform relaxation order in fixed mode (default: 1)")
    solve.add_argument("--h", type=int, default=defaults["h"].default, help="Buses escalated per iteration")
    solve.add_argument("--mis-tol", type=float, default=defaults["mis_tol"].default, help="Mismatch tolerance, MVA")
    solve.add_argument("--obj-tol", type=float, default=defaults["obj_tol"].default, help="Relative objective tolerance")
    solve.add_argument("--vmag-tol", type=float, default=defaults["vmag_tol"].default, help="Voltage tolerance, p.u.")
    solve.add_argument("--ineq-tol", type=float, default=defaults["ineq_tol"].default, help="Limit tolerance, MVA")
    solve.add_argument("--max-iters", type=int, default=defaults["max_iterations"].default)
    solve.add_argument("--max-order", type=int, default=defaults["max_order"].default)
    solve.add_argument("--full-moment-blocks", action="store_true", help="One full moment block per clique")
    solve.add_argument("--angle-ref", choices=["eliminate", "constrain"], default=None)
    solve.add_argument("--solver", default=None, help="cvxpy solver name (default: MOPF_SOLVER)")
    solve.add_argument("--reference-objective", type=float, default=None, help="Known optimum for the bound gap")
    solve.add_argument("--minimize", action="store_true", help="Drop unneeded high-order buses after convergence")
    solve.add_argument("--report", type=Path, default=None, help="Write the JSON run report here")
    solve.add_argument("--plot-data", type=Path, default=None, help="Write sorted mismatches as CSV here")
    solve.add_argument("--dump-sdp", type=Path, default=None, help="Write the final relaxation in SDPA format here")
    return parser


def _load(case_arg: str, mods: list[tuple[str, str]]) -> NetworkCase:
    path = Path(case_arg)
    case = load_case(path) if path.is_file() else load_bundled_case(case_arg)
    if mods:
        case = apply_modifiers(case, CaseModifiers.model_validate(dict(mods)))
    return case


def _settings(args) -> DriverSettings:
    overrides = {}
    if args.full_moment_blocks:
        overrides["even_blocks"] = False
    if args.angle_ref:
        overrides["angle_reference"] = args.angle_ref
    relaxation = RelaxationOptions(**overrides)
    solve = SolveSettings() if args.solver is None else SolveSettings(solver=args.solver.upper())
    return DriverSettings(
        h=args.h,
        mis_tol=args.mis_tol,
        obj_tol=args.obj_tol,
        vmag_tol=args.vmag_tol,
        ineq_tol=args.ineq_tol,
        max_iterations=args.max_iters,
        max_order=args.max_order,
        reference_objective=args.reference_objective,
        solve=solve,
        relaxation=relaxation,
    )


def _configure_logging(level: str):
    mopf_logger = logging.getLogger("mopf")
    mopf_logger.setLevel(logging.DEBUG)
    if run_log_handler not in mopf_logger.handlers:
        mopf_logger.addHandler(run_log_handler)
    stream = logging.StreamHandler(sys.stderr)
    stream.setLevel(level)
    stream.setFormatter(logging.Formatter("[%(levelname)s] %(message)s"))
    mopf_logger.addHandler(stream)
    return stream


def _print_summary(case: NetworkCase, result: GlobalSolveResult):
    print(f"case: {case.name} ({case.n} buses)")
    print(f"status: {result.status.value}")
    if result.objective is not None:
        print(f"objective: {result.objective:.2f} $/h")
    if result.message:
        print(f"note: {result.message}")
    if result.metrics is not None:
        print(f"max S_mis: {result.metrics.max_s_mis:.4g} MVA")
        print(f"obj. val. diff: {result.metrics.obj_val_diff:.3g}")
        print(f"min eigenvalue ratio: {result.metrics.min_eig_ratio:.3g}")
    if result.orders:
        high = sum(1 for order in result.orders if order > 1)
        print(f"iterations: {len(result.history.iterations)}, high-order buses: {high}")
    print(f"solver time: {result.history.total_solve_time():.2f} s")


def _solve(args) -> int:
    case = _load(args.case, args.mods)
    settings = _settings(args)
    pipeline = Pipeline(case, settings)
    if args.mode == "fixed":
        result = solve_fixed_order(case, args.order, settings, pipeline)
    else:
        result = run(case, settings, pipeline)
        if args.minimize:
            result = minimize_high_order_buses(case, result, settings, pipeline)

    _print_summary(case, result)
    if args.report:
        report = RunReport.from_result(case, result, run_log_handler.records)
        args.report.write_text(report.model_dump_json(indent=2))
    if args.plot_data:
        if result.mismatches is None:
            logger.warning("no mismatch data to write; the run produced no voltage point")
        else:
            write_mismatch_csv(result.mismatches, args.plot_data)
    if args.dump_sdp:
        orders = result.orders or [args.order if args.mode == "fixed" else 1] * case.n
        dump_sdpa(pipeline.build_problem(orders), args.dump_sdp)
    return result.status.exit_code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        MomentOpfConfig.init_from_environment()
    except ValueError as e:
        print(f"[error] {e}", file=sys.stderr)
        return EXIT_ERROR

    if args.list_cases:
        for name in bundled_case_names():
            print(name)
        return 0
    if args.command != "solve":
        parser.print_usage(sys.stderr)
        return EXIT_ERROR

    stream = _configure_logging(args.log_level or MomentOpfConfig.log_level)
    run_log_handler.clear()
    try:
        return _solve(args)
    except (MomentOpfError, ValueError, OSError) as e:
        logger.debug("run aborted", exc_info=True)
        print(f"[error] {e}", file=sys.stderr)
        return EXIT_ERROR
    finally:
        logging.getLogger("mopf").removeHandler(stream)


if __name__ == "__main__":
    sys.exit(main())
