from pathlib import Path

import pytest

from bundlecalc.cli.main import main
from bundlecalc.cli.runner import (
    EXIT_FAILED,
    EXIT_INVALID,
    EXIT_OK,
    CheckRunner,
    format_machine,
    run_checks,
)
from bundlecalc.cli.scenario import load_scenario, parse_scenario_text
from bundlecalc.common.config import CHECK_TOLERANCE, FD_CURVATURE_TOLERANCE
from bundlecalc.common.models import CheckRequest

SCENARIOS = Path(__file__).resolve().parents[2] / "scenarios"


def _scenario(name: str) -> str:
    return str(SCENARIOS / name)


# -------------------------------
# Runner
# -------------------------------

def test_zero_scenario_passes_every_check():
    reports, status = run_checks(load_scenario(_scenario("zero.scn")))
    assert status == EXIT_OK
    assert len(reports) == 11
    assert all(r.passed for r in reports)
    assert all(len(r.residuals) == 4 for r in reports)
    assert [r.name for r in reports] == sorted(r.name for r in reports)


def test_mixed_scenario_passes_every_check():
    reports, status = run_checks(load_scenario(_scenario("mixed.scn")))
    failed = [(r.label, r.worst) for r in reports if not r.passed]
    assert status == EXIT_OK, failed


def test_negative_control_fails():
    reports, status = run_checks(load_scenario(_scenario("negative_control.scn")))
    assert status == EXIT_FAILED
    assert {r.name for r in reports if not r.passed} == {"bianchi_linear", "ricci"}


def test_reports_carry_seed_and_points():
    reports, _ = run_checks(load_scenario(_scenario("example_a.scn")), points=2, seed=3)
    for report in reports:
        assert report.seed == 3
        assert len(report.residuals) == 3
        assert report.residuals[0].point == [0.0, 0.0]


def test_tolerance_and_points_precedence():
    text = (
        "[space] base_dim = 2\n[bundle E] rank = 1\n[connection K on E]\n"
        "[checks]\ncurvature K\ndual_curvature K\ndual_curvature K tol=1e-3 points=1\n"
        "[options] tol = 1e-6  points = 2\n"
    )
    scenario = parse_scenario_text(text)
    oracle, plain, overridden = scenario.checks

    runner = CheckRunner(scenario)
    assert runner.tolerance_for(oracle) == FD_CURVATURE_TOLERANCE
    assert runner.tolerance_for(plain) == 1e-6
    assert runner.tolerance_for(overridden) == 1e-3
    assert runner.point_count_for(plain) == 2
    assert runner.point_count_for(overridden) == 1

    cli = CheckRunner(scenario, tol=1e-4, points=7)
    assert cli.tolerance_for(oracle) == FD_CURVATURE_TOLERANCE
    assert cli.tolerance_for(overridden) == 1e-4
    assert cli.point_count_for(overridden) == 7


def test_cli_tolerance_skipped_for_curvature_is_logged(caplog):
    scenario = parse_scenario_text(
        "[space] base_dim = 2\n[bundle E] rank = 1\n[connection K on E]\n[checks]\ncurvature K\ndual_curvature K\n"
    )
    oracle, plain = scenario.checks
    runner = CheckRunner(scenario, tol=1e-4)

    with caplog.at_level("INFO", logger="bundlecalc.cli.runner"):
        assert runner.tolerance_for(plain) == 1e-4
        assert not caplog.records
        assert runner.tolerance_for(oracle) == FD_CURVATURE_TOLERANCE
    assert "--tol 0.0001 not applied to curvature[K]" in caplog.text

    caplog.clear()
    with caplog.at_level("INFO", logger="bundlecalc.cli.runner"):
        CheckRunner(scenario).tolerance_for(oracle)
    assert not caplog.records


def test_default_tolerance_without_options():
    scenario = parse_scenario_text("[space] base_dim = 1\n[bundle E] rank = 1\n[connection K on E]\n")
    assert CheckRunner(scenario).tolerance_for(CheckRequest(name="dual_curvature", args=["K"])) == CHECK_TOLERANCE


def test_machine_format_is_stable():
    scenario = load_scenario(_scenario("example_a.scn"))
    first = format_machine(run_checks(scenario)[0])
    second = format_machine(run_checks(scenario)[0])
    assert first == second
    assert first.splitlines()[0].startswith("check=bianchi_linear[K] point=0 residual=")
    assert all(line.endswith("pass=true") for line in first.splitlines())


# -------------------------------
# Command Line
# -------------------------------

def test_cli_check_text_output(capsys):
    assert main(["check", _scenario("example_a.scn")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "== curvature[K] ==" in out
    assert "  R_2^1_{12} = 1" in out
    assert out.rstrip().endswith("Summary: 5/5 checks passed")


def test_cli_check_machine_output(capsys):
    assert main(["check", _scenario("zero.scn"), "--format", "machine", "--points", "1"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 22
    assert lines[0].startswith("check=bianchi_classical[Gamma] point=0 ")


def test_cli_negative_control_exit_code(capsys):
    assert main(["check", _scenario("negative_control.scn")]) == EXIT_FAILED
    assert "FAIL bianchi_linear[K]" in capsys.readouterr().out


def test_cli_curvature_dump(capsys):
    assert main(["curvature", _scenario("example_a.scn"), "--connection", "K", "--at", "0.5,0.25"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 16
    assert "R_2^1_{12} = 1" in lines
    assert "R_2^1_{21} = -1" in lines
    assert "R_1^1_{12} = 0" in lines


@pytest.mark.parametrize(
    "argv",
    [
        ["curvature", "example_a.scn", "--connection", "K", "--at", "0.5"],
        ["curvature", "example_a.scn", "--connection", "Nope", "--at", "0.5,0.5"],
        ["check", "missing.scn"],
    ],
)
def test_cli_invalid_input_exit_code(argv, capsys):
    argv = [_scenario(a) if a.endswith(".scn") else a for a in argv]
    assert main(argv) == EXIT_INVALID


def test_cli_malformed_scenario(tmp_path):
    path = tmp_path / "bad.scn"
    path.write_text("[space] base_dim = 2\n[bundle E] rank = 2\n[connection K on E]\nK[1,3,1] = x2\n")
    assert main(["check", str(path)]) == EXIT_INVALID


def test_cli_gen_is_deterministic(capsys, tmp_path):
    assert main(["gen", "--seed", "11", "--m", "2", "--n", "2"]) == EXIT_OK
    first = capsys.readouterr().out
    assert main(["gen", "--seed", "11", "--m", "2", "--n", "2"]) == EXIT_OK
    assert capsys.readouterr().out == first
    assert first.startswith("[space] base_dim = 2\n")

    path = tmp_path / "generated.scn"
    path.write_text(first)
    assert main(["check", str(path), "--points", "2"]) == EXIT_OK


def test_cli_gen_rejects_large_dimensions():
    assert main(["gen", "--seed", "1", "--m", "9", "--n", "2"]) == EXIT_INVALID
