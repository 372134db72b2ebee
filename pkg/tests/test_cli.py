import json

from stability_lab.cli import main


def test_estimate_glob_exit_code_follows_the_threshold(capsys):
    assert main(["estimate-glob", "--task", "figure-one", "--trials", "5000", "--min", "0.2"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("experiment,") and "global_stability" in out
    assert main(["estimate-glob", "--task", "figure-one", "--trials", "5000", "--min", "0.9"]) == 1


def test_run_transform_reports_bits_and_replicability(capsys):
    args = ["run-transform", "--task", "figure-one", "--transform", "glob2rep", "--params", '{"eta": 0.25, "T": 7}', "--trials", "5000", "--min", "0.5"]
    assert main(args) == 0
    out = capsys.readouterr().out
    assert "replicability" in out and "bits" in out


def test_config_errors_exit_with_two(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"seed": 1, "task": {"id": "figure-one"}, "colour": "red"}))
    assert main(["run", str(path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_run_writes_reports(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 1, "task": {"id": "figure-one"}, "verifiers": [{"name": "bits", "params": {"max": 0}}]}))
    assert main(["run", str(path), "--out", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out.csv").exists() and (tmp_path / "out.json").exists()


def test_sweep_accepts_inline_grid(tmp_path, capsys):
    cfg = {"seed": 2, "task": {"id": "planted"}, "transforms": [{"name": "glob2rep", "params": {"eta": 0.25, "rho": 0.45}}], "verifiers": [{"name": "bits"}], "trials": 50}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert main(["sweep", str(path), "--grid", '{"transforms.0.params.rho": [0.45, 0.1]}']) == 0
    assert capsys.readouterr().out.count("\n") == 3


def test_audit_dp_of_the_selection_mechanism(capsys):
    args = ["audit-dp", "--task-params", '{"n": 3, "epsilon": 1.0, "delta": 0.05}', "--epsilon", "1.0", "--delta", "0.05"]
    assert main(args) == 0
    assert "delta_max" in capsys.readouterr().out


def test_acceptance_subcommand_prints_one_line_per_criterion(capsys):
    assert main(["acceptance", "--only", "7", "--no-determinism"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 1 and "PASS" in lines[0]
