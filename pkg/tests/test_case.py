import cmath
import math

import numpy as np
import pytest

from moment_opf import (
    CaseFormatError,
    CaseModifiers,
    CaseValidationError,
    DisconnectedNetworkError,
    ModifierError,
    apply_modifiers,
    build_admittance,
    bundled_case_names,
    load_bundled_case,
    load_case,
    parse_case,
    serialize_case,
)
from moment_opf._case import MIN_RESISTANCE, branch_stamps
from moment_opf._models import Branch

from .conftest import json_case


TWO_BUS = """
function mpc = tiny
mpc.baseMVA = 100;
mpc.bus = [
	1	3	0	0	0	0	1	1	0	135	1	1.05	0.95;
	2	1	50	10	0	0	1	1	0	135	1	1.05	0.95;
];
mpc.gen = [
	1	0	0	100	-100	1	100	1	200	0;
];
mpc.branch = [
	1	2	0.01	0.1	0.02	0	0	0	0	0	1	-360	360;
];
mpc.gencost = [
	2	0	0	3	0.01	10	5;
];
"""


def test_parse_minimal_case():
    case = parse_case(TWO_BUS)

    assert case.name == "tiny"
    assert case.n == 2
    assert len(case.generators) == 1
    assert len(case.branches) == 1
    assert case.generators[0].c2 == 0.01
    assert case.generators[0].c0 == 5
    assert case.branches[0].tau == 1.0


def test_duplicate_bus_id():
    text = TWO_BUS.replace("2\t1\t50", "1\t1\t50")
    with pytest.raises(CaseValidationError, match="duplicate bus id"):
        parse_case(text)


def test_bad_number_reports_line_and_field():
    text = TWO_BUS.replace("0.01\t0.1", "0.01\tabc")
    with pytest.raises(CaseFormatError) as err:
        parse_case(text)

    assert err.value.field == "branch[0][3]"
    assert err.value.line == 14


def test_piecewise_cost_rejected():
    text = TWO_BUS.replace("2\t0\t0\t3\t0.01", "1\t0\t0\t3\t0.01")
    with pytest.raises(CaseValidationError, match="piecewise"):
        parse_case(text)


def test_islands_rejected():
    with pytest.raises(DisconnectedNetworkError, match="2 islands") as exc:
        json_case(
            buses=[{"id": 1, "type": "slack"}, {"id": 2}, {"id": 3}, {"id": 4}],
            branches=[{"from": 1, "to": 2, "r": 0.01, "x": 0.1}, {"from": 3, "to": 4, "r": 0.01, "x": 0.1}],
        )

    assert isinstance(exc.value, CaseValidationError)


def test_case14_counts(case14):
    assert case14.n == 14
    assert len(case14.generators) == 5
    assert len(case14.branches) == 20
    assert case14.buses[case14.reference()].id == 1


def test_minimum_resistance_enforced(case14):
    # lines 4-7, 4-9, 5-6, 7-8, 7-9 are lossless transformers in the archive
    assert min(branch.r for branch in case14.branches) == pytest.approx(MIN_RESISTANCE)
    assert all(branch.r >= MIN_RESISTANCE for branch in case14.branches)


def test_serialize_round_trip(case14):
    assert parse_case(serialize_case(case14)) == case14


def test_load_case_from_file(tmp_path, case2):
    path = tmp_path / "twobus.json"
    path.write_text(serialize_case(case2))

    assert load_case(path) == case2


def test_missing_file():
    with pytest.raises(CaseFormatError, match="cannot read"):
        load_case("/nonexistent/case.m")


def test_generators_aggregated():
    case = json_case(
        buses=[{"id": 1, "type": "slack"}, {"id": 2}],
        generators=[
            {"bus": 1, "pmax": 100, "qmin": -50, "qmax": 50, "c2": 0.02, "c1": 10, "c0": 1},
            {"bus": 1, "pmax": 60, "qmin": -10, "qmax": 30, "c2": 0.04, "c1": 20, "c0": 2},
        ],
        branches=[{"from": 1, "to": 2, "r": 0.01, "x": 0.1}],
    )

    (gen,) = case.generators
    assert gen.pmax == 160
    assert gen.qmin == -60
    assert gen.c2 == pytest.approx(0.06 / 4)
    assert gen.c1 == pytest.approx(15)
    assert gen.c0 == pytest.approx(3)


def test_bundled_names():
    names = bundled_case_names()

    for name in ("case2", "case14", "case14Q", "case14L", "case30", "case57"):
        assert name in names


def test_named_variants(case14, case14Q):
    assert case14Q.name == "case14Q"
    for base, scaled in zip(case14.buses, case14Q.buses):
        assert scaled.pd == pytest.approx(base.pd * 0.5)
        assert scaled.qd == pytest.approx(base.qd * 0.5)

    case14L = load_bundled_case("case14L")
    assert all(branch.s_max == 25 for branch in case14L.branches)


def test_identity_modifiers(case14):
    assert apply_modifiers(case14, CaseModifiers()) == case14


def test_qmin_floor_raises_lower_limits(case14):
    floored = apply_modifiers(case14, CaseModifiers(qmin_floor=-5))

    assert [gen.qmin for gen in floored.generators] == [0, -5, 0, -5, -5]


def test_inconsistent_voltage_override(case14):
    with pytest.raises(ModifierError):
        apply_modifiers(case14, CaseModifiers(vmin=1.2))


def test_single_line_admittance():
    case = json_case(
        buses=[{"id": 1, "type": "slack"}, {"id": 2}],
        branches=[{"from": 1, "to": 2, "r": 0.02, "x": 0.2}],
    )
    y = 1 / complex(0.02, 0.2)

    Y = build_admittance(case).dense()

    np.testing.assert_allclose(Y, [[y, -y], [-y, y]])


def test_bus_shunt_on_diagonal():
    case = json_case(buses=[{"id": 1, "type": "slack", "bs": 19}, {"id": 2}], branches=[{"from": 1, "to": 2, "r": 0.01, "x": 0.1}])
    y = 1 / complex(0.01, 0.1)

    Y = build_admittance(case).dense()

    assert Y[0, 0] == pytest.approx(y + 0.19j)
    assert Y[1, 1] == pytest.approx(y)


def test_off_nominal_tap_stamp():
    branch = Branch(from_bus=1, to_bus=2, r=0.01, x=0.1, tau=1.05)
    y = 1 / complex(0.01, 0.1)

    yff, yft, ytf, ytt = branch_stamps(branch)

    assert yff == pytest.approx(y / 1.05**2)
    assert yft == pytest.approx(-y / 1.05)
    assert ytf == pytest.approx(-y / 1.05)
    assert ytt == pytest.approx(y)


def test_phase_shifter_asymmetric():
    case = json_case(
        buses=[{"id": 1, "type": "slack"}, {"id": 2}],
        branches=[{"from": 1, "to": 2, "r": 0.01, "x": 0.1, "theta": math.pi / 6}],
    )
    Y = build_admittance(case).dense()
    y = 1 / complex(0.01, 0.1)

    assert Y[0, 1] == pytest.approx(-y / cmath.exp(-1j * math.pi / 6))
    assert Y[1, 0] == pytest.approx(-y / cmath.exp(1j * math.pi / 6))
    assert Y[0, 1] != pytest.approx(Y[1, 0])


def test_case14_admittance_symmetric(case14):
    Y = build_admittance(case14)
    pattern = Y.dense() != 0

    assert Y.n == 14
    assert (pattern == pattern.T).all()
    # no phase shifters in case14, so values are symmetric too
    np.testing.assert_allclose(Y.dense(), Y.dense().T)
