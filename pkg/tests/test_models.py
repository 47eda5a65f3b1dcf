import pytest

from pydantic import ValidationError

from moment_opf import (
    Branch,
    Bus,
    CaseModifiers,
    GlobalSolveResult,
    GlobalSolveStatus,
    NetworkCase,
    RunReport,
    SolveSettings,
)
from moment_opf._models import IterationRecord, Metrics, RunHistory, SolveStatus, VoltageSolution


def test_bus_forward_compatibility():
    """Bus ignores columns it does not model (areas, zones, base kV)"""
    bus = Bus.model_validate({"id": 4, "type": "pq", "pd": 47.8, "area": 1, "zone": 1, "base_kv": 135})

    assert bus.id == 4
    assert bus.pd == 47.8
    assert bus.vmin == 0.9


def test_branch_aliases():
    branch = Branch.model_validate({"from": 1, "to": 2, "r": 0.01, "x": 0.1})

    assert branch.from_bus == 1
    assert branch.to_bus == 2
    assert branch.tau == 1.0
    assert not branch.limited
    assert Branch(from_bus=1, to_bus=2, r=0.01, x=0.1, s_max=25).limited


@pytest.mark.parametrize(
    "buses, message",
    [
        ([{"id": 1, "type": "slack"}, {"id": 1}], "duplicate bus id 1"),
        ([{"id": 1}, {"id": 2}], "exactly one slack bus"),
        ([{"id": 1, "type": "slack", "vmin": 1.1, "vmax": 0.9}], "vmin"),
    ],
)
def test_network_case_invariants(buses, message):
    with pytest.raises(ValidationError, match=message):
        NetworkCase.model_validate({"buses": buses})


def test_generator_must_reference_bus():
    with pytest.raises(ValidationError, match="unknown bus 7"):
        NetworkCase.model_validate({"buses": [{"id": 1, "type": "slack"}], "generators": [{"bus": 7}]})


def test_generation_limits_default_to_zero(case2):
    assert case2.generation_limits(1) == (0.0, 0.0, 0.0, 0.0)
    assert case2.generation_limits(0) == (-10000, 10000, -10000, 10000)


def test_modifiers_reject_unknown_keys():
    with pytest.raises(ValidationError):
        CaseModifiers.model_validate({"load_scael": 0.5})
    with pytest.raises(ValidationError):
        CaseModifiers(load_scale=0)


def test_relaxed_settings():
    settings = SolveSettings(feasibility_tolerance=1e-8, gap_tolerance=1e-9, solver="CLARABEL")
    relaxed = settings.relaxed()

    assert relaxed.feasibility_tolerance == pytest.approx(1e-6)
    assert relaxed.gap_tolerance == pytest.approx(1e-7)
    assert relaxed.solver == "CLARABEL"
    assert settings.feasibility_tolerance == 1e-8


def test_exit_codes():
    assert GlobalSolveStatus.GLOBAL_OPTIMUM.exit_code == 0
    assert GlobalSolveStatus.LOWER_BOUND_ONLY.exit_code == 2
    assert GlobalSolveStatus.INFEASIBLE_OPF.exit_code == 3
    assert GlobalSolveStatus.ITERATION_LIMIT.exit_code == 2


def test_run_report_round_trip(case2):
    metrics = Metrics(max_s_mis=0.01, obj_val_diff=1e-6, min_eig_ratio=1e9)
    history = RunHistory(
        iterations=[
            IterationRecord(iteration=1, orders=[1, 1], max_order=1, status=SolveStatus.OPTIMAL, lower_bound=400.0),
            IterationRecord(
                iteration=2, orders=[2, 2], max_order=2, status=SolveStatus.OPTIMAL, lower_bound=456.5, metrics=metrics
            ),
        ]
    )
    result = GlobalSolveResult(
        status=GlobalSolveStatus.GLOBAL_OPTIMUM,
        objective=456.5,
        orders=[2, 2],
        voltages=VoltageSolution(vd=[0.95, 0.416], vq=[0.0, -0.893]),
        metrics=metrics,
        history=history,
    )

    report = RunReport.from_result(case2, result, [{"message": "hello"}])
    reread = RunReport.model_validate_json(report.model_dump_json())

    assert reread == report
    assert reread.exit_code == 0
    assert reread.lower_bounds == [400.0, 456.5]
    assert reread.iterations[1].high_order_buses == 2
    assert reread.voltages[1].vm == pytest.approx(abs(0.416 - 0.893j))
    assert reread.units["objective"] == "$/h"
