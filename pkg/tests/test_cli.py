import json
import logging

import pytest

from moment_opf import RelaxationOptions, RunReport, bundled_case_names, serialize_case
from moment_opf._cli import EXIT_ERROR, _settings, build_parser, main
from moment_opf._driver import Pipeline
from moment_opf._logging import run_log_handler


@pytest.fixture(autouse=True)
def detach_run_log_handler():
    yield
    logging.getLogger("mopf").removeHandler(run_log_handler)
    run_log_handler.clear()


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--badflag"])

    assert exc.value.code == EXIT_ERROR
    assert "usage" in capsys.readouterr().err


def test_missing_command(capsys):
    assert main([]) == EXIT_ERROR


def test_list_cases(capsys):
    assert main(["--list-cases"]) == 0

    assert capsys.readouterr().out.split() == bundled_case_names()


def test_bad_environment(monkeypatch, capsys):
    monkeypatch.setenv("MOPF_EVEN_BLOCKS", "maybe")

    assert main(["--list-cases"]) == EXIT_ERROR
    assert "MOPF_EVEN_BLOCKS" in capsys.readouterr().err


def test_fixed_order_run_writes_outputs(tmp_path, capsys):
    report_path = tmp_path / "report.json"
    csv_path = tmp_path / "mis.csv"
    sdp_path = tmp_path / "relaxation.dat-s"

    code = main(
        [
            "solve",
            "--case",
            "case2",
            "--mode",
            "fixed",
            "--order",
            "2",
            "--report",
            str(report_path),
            "--plot-data",
            str(csv_path),
            "--dump-sdp",
            str(sdp_path),
        ]
    )

    assert code in (0, 2)
    assert "objective: 456." in capsys.readouterr().out
    report = RunReport.model_validate_json(report_path.read_text())
    assert report.exit_code == code
    assert report.orders == [2, 2]
    assert [v.bus for v in report.voltages] == [1, 2]
    assert report.units["objective"] == "$/h"
    assert csv_path.read_text().splitlines()[0] == "rank,s_mis_mva"
    assert sdp_path.read_text().startswith('"')


def test_case_file_and_modifiers(tmp_path, case2, capsys):
    path = tmp_path / "two_bus.json"
    path.write_text(serialize_case(case2))

    code = main(["solve", "--case", str(path), "--mods", "load_scale=6", "--mode", "fixed", "--order", "1"])

    assert code == 3
    assert "infeasible_opf" in capsys.readouterr().out


def test_iterative_two_bus(tmp_path, capsys):
    report_path = tmp_path / "report.json"

    code = main(["solve", "--case", "case2", "--report", str(report_path)])

    assert code == 0
    data = json.loads(report_path.read_text())
    assert data["status"] == "global_optimum"
    assert data["iterations"]
    assert data["lower_bounds"][-1] == pytest.approx(456.55, rel=1e-3)


def test_unknown_case(capsys):
    assert main(["solve", "--case", "no_such_case"]) == EXIT_ERROR
    assert "[error]" in capsys.readouterr().err


def test_bad_modifier(capsys):
    assert main(["solve", "--case", "case2", "--mods", "load_scale=-1"]) == EXIT_ERROR


def test_malformed_modifier():
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--case", "case2", "--mods", "load_scale"])

    assert exc.value.code == EXIT_ERROR


def test_relaxation_flags_reach_settings():
    args = build_parser().parse_args(["solve", "--case", "case2", "--full-moment-blocks", "--angle-ref", "constrain"])

    relaxation = _settings(args).relaxation

    assert relaxation.even_blocks is False
    assert relaxation.angle_reference == "constrain"


def test_default_flags_keep_configured_relaxation():
    args = build_parser().parse_args(["solve", "--case", "case2"])

    assert _settings(args).relaxation == RelaxationOptions()


@pytest.mark.parametrize(
    "flags",
    [["--full-moment-blocks"], ["--angle-ref", "constrain"], ["--angle-ref", "eliminate", "--full-moment-blocks"]],
)
def test_relaxation_flags_solve(flags, capsys):
    code = main(["solve", "--case", "case2", "--mode", "fixed", "--order", "1", *flags])

    assert code in (0, 2)
    out = capsys.readouterr().out
    assert "objective:" in out


def test_dump_sdp_writes_first_relaxation(tmp_path, case2):
    path = tmp_path / "first.dat-s"

    code = main(["solve", "--case", "case2", "--mode", "fixed", "--order", "1", "--dump-sdp", str(path)])

    assert code in (0, 2)
    lines = path.read_text().splitlines()
    assert lines[0].startswith('"')
    problem = Pipeline(case2).build_problem([1, 1])
    assert int(lines[1]) == problem.n_variables
    assert int(lines[2]) == len(problem.blocks) + 1
