import json
import subprocess
import sys

import pytest

from stretchperc.cli import build_parser, config_from_args, main


def test_no_arguments_is_usage_error(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand_is_usage_error():
    assert main(["frobnicate"]) == 2


def test_scales_csv(capsys):
    assert main(["scales", "--L0", "300", "--gamma", "1.2", "--kmax", "2"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert [row.split(",")[1] for row in out[1:4]] == ["300", "900", "2700"]


def test_renewal_pmf(capsys):
    assert main(["renewal", "pmf", "--spec", "geometric:0.5", "--kmax", "2"]) == 0
    assert capsys.readouterr().out == "k,rho_k\n0,0.5\n1,0.25\n2,0.125\n"


def test_seed_golden(capsys):
    assert main(["renewal", "sample", "--spec", "geometric:0.5", "--seed", "7", "--horizon", "12"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["arrivals"] == [0, 1, 2, 3, 4, 6, 7]
    assert rec["Z"] == [0, 0, 0, 0, 0, 1, 0, 0, 6, 5, 4, 3, 2]


def test_infeasible_parameters_exit_2(capsys):
    assert main(["pk", "--spec", "geometric:0.5", "--samples", "10"]) == 2
    assert "gamma" in capsys.readouterr().err


def test_bad_spec_exit_2():
    assert main(["renewal", "pmf", "--spec", "zeta:1.5"]) == 2


def test_flags_override_config_file(tmp_path, monkeypatch):
    monkeypatch.delenv("STRETCHPERC_SEED", raising=False)
    cfg_file = tmp_path / "c.cfg"
    cfg_file.write_text("replicas = 9\nseed = 3\np_grid = 0.1,0.2\n")
    args = build_parser().parse_args(["sweep", "--config", str(cfg_file), "--seed", "4"])
    cfg = config_from_args(args)
    assert (cfg.replicas, cfg.seed, cfg.p_grid) == (9, 4, (0.1, 0.2))


def test_environment_seed_between_file_and_flags(tmp_path, monkeypatch):
    cfg_file = tmp_path / "c.cfg"
    cfg_file.write_text("seed = 3\n")
    monkeypatch.setenv("STRETCHPERC_SEED", "5")
    args = build_parser().parse_args(["sweep", "--config", str(cfg_file)])
    assert config_from_args(args).seed == 5


def test_crossing_with_witness(capsys):
    assert main(["crossing", "--p", "1.0", "--width", "4", "--height", "3", "--witness"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["indicator"] == 1 and rec["witness"][0][0] == 0


def test_dual_reports_no_failures(capsys):
    assert main(["dual", "--spec", "pmf:0.5=0.5,2=0.5", "--delay", "dirac:0", "--p", "0.6", "--width", "8", "--height", "8"]) == 0


def test_sweep_run_writes_record(tmp_path):
    out = tmp_path / "s.jsonl"
    code = main(["sweep", "--spec", "det:1", "--sizes", "6", "--replicas", "10", "--bootstrap", "5",
                 "--out", str(out)])
    assert code == 0
    lines = out.read_text().splitlines()
    assert json.loads(lines[0])["record"] == "header"
    assert json.loads(lines[1])["task"] == "sweep"


def test_run_with_empty_tasks(tmp_path, capsys):
    out = tmp_path / "r.jsonl"
    assert main(["run", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 1
    assert "empty task list" in capsys.readouterr().err


def test_console_script_module_entry():
    proc = subprocess.run([sys.executable, "-m", "stretchperc.cli", "scales", "--kmax", "1"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "scales:" in proc.stderr


@pytest.mark.parametrize("flag", ["--p-grid", "--tasks", "--cell-budget"])
def test_every_config_key_has_a_flag(flag):
    assert flag in build_parser()._subparsers._group_actions[0].choices["run"].format_help()


def test_fractional_law_needs_dirac_delay(capsys):
    assert main(["dual", "--spec", "pmf:0.5=0.5,2=0.5"]) == 2
    assert "Dirac" in capsys.readouterr().err
