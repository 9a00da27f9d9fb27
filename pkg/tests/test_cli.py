import json

import pytest

from zigzag.cli import main
from zigzag.config import OUT_DIR_ENV

FAST = ["--set", "T=3000", "--set", "t_i=1000", "--set", "t_f=2000", "--stride", "50"]


def test_list_scenarios(capsys):
    assert main(["list-scenarios"]) == 0
    out = capsys.readouterr().out
    for sid in ("SPIN_Y_SINGLE", "SPIN_WEIGHTED", "EPR_FREE", "EPR_SG"):
        assert sid in out


def test_print_config(capsys):
    assert main(["run", "SPIN_WEIGHTED", "--print-config", "--seed", "5"]) == 0
    out = capsys.readouterr().out
    assert "scenario = SPIN_WEIGHTED" in out and "rng_seed = 5" in out and "d_x = 100.0" in out


def test_run_twice_identical(tmp_path):
    args = ["run", "SPIN_WEIGHTED", "--n", "3", "--seed", "42", *FAST]
    assert main(args + ["--out", str(tmp_path / "a"), "--workers", "1"]) == 0
    assert main(args + ["--out", str(tmp_path / "b"), "--workers", "2"]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) == 8
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["seed"] == 42 and manifest["n_failed"] == 0 and len(manifest["trajectories"]) == 3


def test_config_file_and_env_dir(tmp_path, monkeypatch, capsys):
    main(["run", "EPR_SG", "--print-config", "--n", "2", *FAST])
    cfg = tmp_path / "run.cfg"
    cfg.write_text(capsys.readouterr().out)
    monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path / "env"))
    assert main(["run", "--config", str(cfg), "--workers", "1"]) == 0
    assert (tmp_path / "env" / "EPR_SG" / "trajectories" / "traj_00001.csv").exists()
    assert (tmp_path / "env" / "EPR_SG" / "config.txt").read_text() == cfg.read_text()


@pytest.mark.parametrize("argv", [
    ["run", "NOPE"],
    ["run", "SPIN_WEIGHTED", "--set", "bogus=1"],
    ["run", "SPIN_WEIGHTED", "--set", "T"],
    ["run", "SPIN_WEIGHTED", "--set", "n_trajectories=-1"],
    ["run"],
    ["frobnicate"],
    ["fields", "EPR_SG", "--t", "0"],
    ["verify", "no-such-check"],
])
def test_configuration_errors(argv, tmp_path):
    assert main(argv + (["--out", str(tmp_path)] if argv[0] == "run" else [])) == 2


def test_failures_exceeding_policy(tmp_path):
    args = ["run", "SPIN_Y_SINGLE", "--n", "1", *FAST, "--set", "abs_tolerance=1e-30", "--set", "min_dt=1.0",
            "--set", "initial_dt=1.0", "--set", "max_dt=1.0", "--out", str(tmp_path / "x")]
    assert main(args) == 3
    assert main(args + ["--max-failures", "1"]) == 0


def test_fields(tmp_path, capsys):
    assert main(["fields", "SPIN_Y_SINGLE", "--t", "70", "--display-units", "--res", "5",
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "field_yz_t70000.csv").exists()


def test_verify_subset(tmp_path, capsys):
    code = main(["verify", "pauli", "single-particle", "--quick", "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 0
    assert out.count("PASS") == 2
    report = json.loads((tmp_path / "verify_report.json").read_text())
    assert [c["name"] for c in report["checks"]] == ["pauli", "single-particle"]


def test_verify_failure_exit_code(monkeypatch):
    from zigzag import verify

    monkeypatch.setitem(verify.CHECKS, "pauli", lambda s: verify.CheckResult("pauli", False, "forced"))
    assert main(["verify", "pauli", "--quick"]) == 1
