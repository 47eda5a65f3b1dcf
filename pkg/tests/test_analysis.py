import numpy as np
import pytest

from moment_opf import check_feasibility, compute_metrics, compute_mismatches, extract_voltages
from moment_opf._analysis import EIGENVALUE_RATIO_CAP, eigenvalue_ratio, write_mismatch_csv
from moment_opf._driver import Pipeline
from moment_opf._models import MismatchReport
from moment_opf._polynomial import Exponent, lift_point

from .conftest import feasible_variant, random_voltages


def _lifted(pipeline, problem, V):
    x = pipeline.polys.variables.point(V)
    z = lift_point(x, problem.index_map)
    for k, t in problem.cost_variables.items():
        z[t] = pipeline.polys.fC[k].evaluate(x) / problem.cost_scale
    return z


@pytest.fixture
def lifted14(case14, rng):
    V = random_voltages(case14, rng)
    pipeline = Pipeline(feasible_variant(case14, V))
    problem = pipeline.build_problem([1] * case14.n)
    return pipeline, problem, V, _lifted(pipeline, problem, V)


def test_extraction_recovers_lifted_voltages(lifted14):
    pipeline, problem, V, z = lifted14

    voltages = extract_voltages(problem, z, pipeline.decomp, pipeline.polys, strict=True)

    np.testing.assert_allclose(voltages.phasors, V, atol=1e-10)
    assert voltages.separator_error < 1e-10
    assert len(voltages.clique_eigenvalues) == len(pipeline.decomp.cliques)


def test_extraction_fixes_global_sign(lifted14):
    pipeline, problem, V, z = lifted14

    voltages = extract_voltages(problem, z, pipeline.decomp, pipeline.polys)

    assert voltages.vd[pipeline.case.reference()] > 0
    assert voltages.vq[pipeline.case.reference()] == 0.0


def test_lifted_point_has_no_mismatch(lifted14):
    pipeline, problem, V, z = lifted14
    voltages = extract_voltages(problem, z, pipeline.decomp, pipeline.polys)

    report = compute_mismatches(pipeline.case, pipeline.polys, problem, z, voltages)
    metrics = compute_metrics(problem, z, voltages, pipeline.polys, report)

    assert report.bus_ids == [bus.id for bus in pipeline.case.buses]
    assert report.max_s_mis <= 1e-9
    assert metrics.obj_val_diff <= 1e-10
    assert metrics.min_eig_ratio >= 1e12
    assert metrics.bound_gap is None


def test_bound_gap(lifted14):
    pipeline, problem, V, z = lifted14
    voltages = extract_voltages(problem, z, pipeline.decomp, pipeline.polys)
    report = compute_mismatches(pipeline.case, pipeline.polys, problem, z, voltages)
    bound = problem.objective.evaluate(z)

    above = compute_metrics(problem, z, voltages, pipeline.polys, report, bound * 1.1)
    below = compute_metrics(problem, z, voltages, pipeline.polys, report, bound * 0.9)

    assert above.bound_gap == pytest.approx(0.1 / 1.1)
    assert below.bound_gap == 0.0


def test_non_rank_one_moments_show_mismatch(case2):
    pipeline = Pipeline(case2)
    problem = pipeline.build_problem([1, 1])
    V = np.array([1.0, 0.95 * np.exp(-0.3j)])
    z = _lifted(pipeline, problem, V)
    vd2 = pipeline.polys.variables.vd(1)
    z[problem.index_map.index(Exponent(((vd2, 2),)))] += 0.05

    voltages = extract_voltages(problem, z, pipeline.decomp, pipeline.polys)
    report = compute_mismatches(case2, pipeline.polys, problem, z, voltages)
    metrics = compute_metrics(problem, z, voltages, pipeline.polys, report)

    assert report.max_s_mis > 1e-3
    assert metrics.min_eig_ratio < 1e6


def test_strict_extraction_accepts_consistent_cliques(case14, rng):
    V = random_voltages(case14, rng)
    pipeline = Pipeline(case14)
    problem = pipeline.build_problem([1] * case14.n)

    voltages = extract_voltages(problem, _lifted(pipeline, problem, V), pipeline.decomp, pipeline.polys, strict=True)

    assert voltages.separator_error < 1e-10


@pytest.mark.parametrize(
    "eigenvalues, expected",
    [
        ([4.0, 2.0], 2.0),
        ([-3.0, 1.0], 3.0),
        ([1.0], EIGENVALUE_RATIO_CAP),
        ([1.0, 0.0], EIGENVALUE_RATIO_CAP),
        ([1.0, 1e-20], EIGENVALUE_RATIO_CAP),
    ],
)
def test_eigenvalue_ratio(eigenvalues, expected):
    assert eigenvalue_ratio(eigenvalues) == pytest.approx(expected)


def test_feasibility_of_feasible_point(case14, rng):
    V = random_voltages(case14, rng)
    feasible = feasible_variant(case14, V)
    pipeline = Pipeline(feasible)

    report = check_feasibility(feasible, V, pipeline.polys)

    assert report.feasible
    assert set(report.worst) == {"voltage", "active_power", "reactive_power", "flow"}


def test_feasibility_flags_voltage(case14, rng):
    V = random_voltages(case14, rng)
    feasible = feasible_variant(case14, V)
    pipeline = Pipeline(feasible)

    report = check_feasibility(feasible, V * 1.2, pipeline.polys)

    assert not report.feasible
    assert "voltage" in report.violations
    assert report.worst["voltage"] > 0.1


def test_feasibility_flags_flow(case3, rng):
    V = random_voltages(case3, rng)
    limited = case3.model_copy(
        update={"branches": tuple(b.model_copy(update={"s_max": 0.01}) for b in case3.branches)}
    )
    pipeline = Pipeline(limited)

    report = check_feasibility(limited, V, pipeline.polys)

    assert "flow" in report.violations
    assert report.worst["flow"] > 0.5


def test_mismatch_csv(tmp_path):
    report = MismatchReport(bus_ids=[1, 2, 3], p_mis=[3.0, 0.0, 0.1], q_mis=[4.0, 0.2, 0.0], s_mis=[5.0, 0.2, 0.1])
    path = tmp_path / "mis.csv"

    write_mismatch_csv(report, path)

    lines = path.read_text().splitlines()
    assert lines[0] == "rank,s_mis_mva"
    assert [line.split(",")[0] for line in lines[1:]] == ["1", "2", "3"]
    assert [float(line.split(",")[1]) for line in lines[1:]] == [0.1, 0.2, 5.0]
